"""Threat-feed ingestion: source connectors, exact dedup, raw corpus store.

Sources are local files, generic HTTP endpoints, or pre-fetched platform
export dumps.  Records are deduplicated by content hash and appended to a
JSON-lines corpus, one record per line.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator

import requests

from .errors import MalformedRecord, SourceUnavailable
from .hashing import dedup_key

logger = logging.getLogger(__name__)

SOURCE_KINDS = ("file", "http", "export_dump")
FORMAT_HINTS = ("json_lines", "plain_text")
HTTP_TIMEOUT_S = 30.0


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


def rfc3339(ts: datetime) -> str:
    """RFC 3339 timestamp with second precision, always in UTC ('Z')."""
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_rfc3339(value: str) -> datetime:
    return datetime.strptime(value, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


@dataclass(frozen=True)
class SourceConfig:
    """One configured feed source."""

    source_id: str
    kind: str
    location: str
    format_hint: str = "json_lines"
    poll_interval: float = 0.0  # seconds; 0 = one-shot (scheduling is out of scope)

    def __post_init__(self) -> None:
        if not self.source_id:
            raise ValueError("source_id must be non-empty")
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.format_hint not in FORMAT_HINTS:
            raise ValueError(f"unknown format_hint {self.format_hint!r}")
        if self.poll_interval < 0:
            raise ValueError("poll_interval must be >= 0")


@dataclass(frozen=True)
class RawFeedRecord:
    """One fetched text item with provenance metadata.

    record_id is a pure function of text (see hashing.dedup_key), never of
    source or fetch time, so cross-source duplicates collide.
    """

    record_id: int
    source_id: str
    fetched_at: datetime
    text: str
    metadata: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class IngestReport:
    source_id: str
    records_read: int
    records_kept: int
    duplicates_dropped: int
    malformed_dropped: int

    def __post_init__(self) -> None:
        total = self.records_kept + self.duplicates_dropped + self.malformed_dropped
        if self.records_read != total:
            raise ValueError(
                f"report tallies do not add up: read={self.records_read} "
                f"kept+dup+malformed={total}"
            )


def _coerce_metadata_value(value: object) -> str:
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False, sort_keys=True)


def parse_feed_record(
    line: str,
    source_id: str,
    now: datetime,
    format_hint: str = "json_lines",
) -> RawFeedRecord:
    """Parse one feed line into a RawFeedRecord.

    json_lines: the line must be a JSON object with a non-empty "text"
    field; every other field is kept in metadata as a string.
    plain_text: the whole line is the text.

    Raises MalformedRecord for anything unparsable or with empty text.
    """
    if format_hint == "json_lines":
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise MalformedRecord("record line is not a JSON object")
        text = obj.get("text")
        if not isinstance(text, str) or not text.strip():
            raise MalformedRecord("missing or empty 'text' field")
        metadata = {
            k: _coerce_metadata_value(v) for k, v in obj.items() if k != "text"
        }
    elif format_hint == "plain_text":
        text = line
        if not text.strip():
            raise MalformedRecord("empty text line")
        metadata = {}
    else:
        raise ValueError(f"unknown format_hint {format_hint!r}")

    text = text.strip()
    return RawFeedRecord(
        record_id=dedup_key(text),
        source_id=source_id,
        fetched_at=now,
        text=text,
        metadata=metadata,
    )


def record_to_json(record: RawFeedRecord) -> str:
    """Serialize for the corpus file; record_id as a decimal string."""
    return json.dumps(
        {
            "record_id": str(record.record_id),
            "source_id": record.source_id,
            "fetched_at": rfc3339(record.fetched_at),
            "text": record.text,
            "metadata": record.metadata,
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def record_from_json(line: str) -> RawFeedRecord:
    obj = json.loads(line)
    return RawFeedRecord(
        record_id=int(obj["record_id"]),
        source_id=obj["source_id"],
        fetched_at=parse_rfc3339(obj["fetched_at"]),
        text=obj["text"],
        metadata=dict(obj.get("metadata", {})),
    )


class CorpusStore:
    """Append-only JSON-lines corpus with exact dedup by record_id.

    Single-writer contract: appends are serialized by an internal lock,
    but only one store instance may own a given file at a time.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._seen: set[int] = set()
        if self.path.exists():
            for record in self:
                self._seen.add(record.record_id)
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.touch()

    def __len__(self) -> int:
        return len(self._seen)

    def __contains__(self, record_id: int) -> bool:
        return record_id in self._seen

    def __iter__(self) -> Iterator[RawFeedRecord]:
        with open(self.path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield record_from_json(line)

    def append(self, record: RawFeedRecord) -> bool:
        """Append a record unless its record_id is already present."""
        with self._lock:
            if record.record_id in self._seen:
                return False
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(record_to_json(record) + "\n")
            self._seen.add(record.record_id)
            return True


def _iter_source_lines(config: SourceConfig) -> Iterator[str]:
    """Yield candidate record lines from a source; I/O errors become SourceUnavailable."""
    if config.kind == "http":
        try:
            resp = requests.get(config.location, timeout=HTTP_TIMEOUT_S)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise SourceUnavailable(f"{config.source_id}: {exc}") from exc
        body = resp.text
    else:
        try:
            body = Path(config.location).read_text(encoding="utf-8")
        except OSError as exc:
            raise SourceUnavailable(f"{config.source_id}: {exc}") from exc

    if config.kind == "export_dump" and body.lstrip().startswith("["):
        # Pre-fetched platform exports are often one JSON array of objects.
        try:
            items = json.loads(body)
        except json.JSONDecodeError as exc:
            raise SourceUnavailable(f"{config.source_id}: invalid export dump: {exc}") from exc
        for item in items:
            yield json.dumps(item, ensure_ascii=False)
        return

    for line in body.splitlines():
        if line.strip():
            yield line


def ingest_source(
    config: SourceConfig,
    store: CorpusStore,
    clock: Callable[[], datetime] = utc_now,
) -> IngestReport:
    """Read all records from one source into the corpus store.

    Blank lines are skipped without being counted; every other line is
    either kept, dropped as a duplicate, or dropped as malformed, so the
    report tallies are exact by construction.
    """
    read = kept = dups = malformed = 0
    for line in _iter_source_lines(config):
        read += 1
        try:
            record = parse_feed_record(
                line, config.source_id, clock(), config.format_hint
            )
        except MalformedRecord as exc:
            malformed += 1
            logger.debug("source %s: dropped malformed line: %s", config.source_id, exc)
            continue
        if store.append(record):
            kept += 1
        else:
            dups += 1
    report = IngestReport(
        source_id=config.source_id,
        records_read=read,
        records_kept=kept,
        duplicates_dropped=dups,
        malformed_dropped=malformed,
    )
    logger.info(
        "ingested %s: read=%d kept=%d dup=%d malformed=%d",
        config.source_id, read, kept, dups, malformed,
    )
    return report
