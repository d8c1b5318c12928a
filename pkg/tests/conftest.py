import shutil
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture()
def fixture_config(tmp_path):
    """A throwaway copy of the fixture tree; workdir lands inside the copy."""
    dest = tmp_path / "fixtures"
    shutil.copytree(FIXTURES, dest)
    return dest / "config.json"
