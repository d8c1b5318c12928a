"""Token embedding behind one interface with three interchangeable backends.

hashed  - deterministic FNV-bucketed rows from a counter-based generator;
          the desk-scale default and the only backend that needs no files.
table   - vectors loaded from a text file with a mandatory <OOV> row.
remote  - HTTP client for a contextual-embedding service, the production
          stand-in for a multilingual transformer encoder.

The sequence model only ever sees (T, D) float64 matrices plus optional
row indices for sparse gradient routing, so backends swap freely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import requests

from .errors import (
    EmptySequence,
    OovNotConfigured,
    RemoteUnavailable,
    ShapeMismatch,
)
from .hashing import token_bucket

BACKENDS = ("hashed", "table", "remote")
TEXT_CHANNELS = ("normalized", "lemma", "stem")
INIT_RANGE = 0.1  # uniform +/- range for hashed rows; fixed for reproducibility
OOV_TOKEN = "<OOV>"
DEFAULT_MAX_BATCH = 32
HTTP_TIMEOUT_S = 30.0


@dataclass(frozen=True)
class EmbedderConfig:
    backend: str = "hashed"
    dim: int = 32
    vocab_buckets: int = 4096
    seed: int = 0
    text_channel: str = "normalized"
    endpoint: str | None = None
    vectors: str | None = None  # table backend: path to the vector file

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.dim <= 0:
            raise ValueError("dim must be > 0")
        if self.backend == "hashed" and self.vocab_buckets <= 0:
            raise ValueError("vocab_buckets must be > 0 for the hashed backend")
        if self.text_channel not in TEXT_CHANNELS:
            raise ValueError(f"unknown text_channel {self.text_channel!r}")
        if self.backend == "remote" and not self.endpoint:
            raise ValueError("remote backend requires an endpoint")


class HashedEmbedder:
    """FNV-bucketed rows of a table generated wholesale from the seed.

    The table comes from a Philox counter-based stream, so any row value is
    a pure function of (seed, vocab_buckets, dim) and never of lookup or
    insertion order.  Rows are trainable parameters.
    """

    trainable = True

    def __init__(self, config: EmbedderConfig):
        self.config = config
        rng = np.random.Generator(np.random.Philox(config.seed))
        self.table = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(config.vocab_buckets, config.dim))

    def row_indices(self, token_texts: Sequence[str]) -> np.ndarray:
        return np.array(
            [token_bucket(t, self.config.vocab_buckets) for t in token_texts], dtype=np.int64
        )

    def embed(self, token_texts: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        if not token_texts:
            raise EmptySequence("cannot embed an empty token list")
        idx = self.row_indices(token_texts)
        return self.table[idx].copy(), idx


class TableEmbedder:
    """Lookup table loaded from a vector file, with one shared <OOV> row."""

    trainable = True

    def __init__(self, config: EmbedderConfig, vocab: dict[str, int], table: np.ndarray):
        if OOV_TOKEN not in vocab:
            raise OovNotConfigured(f"vector table lacks the mandatory {OOV_TOKEN} row")
        if table.shape[1] != config.dim:
            raise ShapeMismatch(
                f"vector file dim {table.shape[1]} != configured dim {config.dim}"
            )
        self.config = config
        self.vocab = vocab
        self.table = np.asarray(table, dtype=np.float64)
        self._oov = vocab[OOV_TOKEN]

    @classmethod
    def from_file(cls, config: EmbedderConfig, path: str | Path | None = None) -> "TableEmbedder":
        location = path if path is not None else config.vectors
        if location is None:
            raise OovNotConfigured("table backend requires a vector file path")
        vocab, table = read_vector_file(location)
        return cls(config, vocab, table)

    def row_indices(self, token_texts: Sequence[str]) -> np.ndarray:
        return np.array(
            [self.vocab.get(t, self._oov) for t in token_texts], dtype=np.int64
        )

    def embed(self, token_texts: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        if not token_texts:
            raise EmptySequence("cannot embed an empty token list")
        idx = self.row_indices(token_texts)
        return self.table[idx].copy(), idx


class RemoteEmbedder:
    """Client for the HTTP embedding protocol; vectors are not trainable.

    Request:  POST {endpoint}/embed  {"tokens": [[str, ...], ...]}
    Response: {"vectors": [[[float x D], ...], ...], "dim": D}
    One in-flight request per instance; callers may pool instances.
    """

    trainable = False
    table = None

    def __init__(self, config: EmbedderConfig, max_batch: int = DEFAULT_MAX_BATCH):
        self.config = config
        self.max_batch = max_batch
        self._session = requests.Session()

    def embed_batch(self, batch: Sequence[Sequence[str]]) -> list[np.ndarray]:
        if not batch:
            return []
        out: list[np.ndarray] = []
        for i in range(0, len(batch), self.max_batch):
            out.extend(self._post([list(seq) for seq in batch[i : i + self.max_batch]]))
        return out

    def _post(self, chunk: list[list[str]]) -> list[np.ndarray]:
        url = self.config.endpoint.rstrip("/") + "/embed"
        try:
            resp = self._session.post(url, json={"tokens": chunk}, timeout=HTTP_TIMEOUT_S)
            resp.raise_for_status()
            payload = resp.json()
        except (requests.RequestException, json.JSONDecodeError) as exc:
            raise RemoteUnavailable(f"embedding endpoint failed: {exc}") from exc

        dim = payload.get("dim")
        if dim != self.config.dim:
            raise ShapeMismatch(f"remote dim {dim} != configured dim {self.config.dim}")
        vectors = payload.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(chunk):
            raise ShapeMismatch("response vector count does not match request")
        matrices = []
        for seq, rows in zip(chunk, vectors):
            matrix = np.asarray(rows, dtype=np.float64)
            if matrix.shape != (len(seq), self.config.dim):
                raise ShapeMismatch(
                    f"sequence of {len(seq)} tokens got vectors of shape {matrix.shape}"
                )
            matrices.append(matrix)
        return matrices

    def embed(self, token_texts: Sequence[str]) -> tuple[np.ndarray, None]:
        if not token_texts:
            raise EmptySequence("cannot embed an empty token list")
        return self.embed_batch([token_texts])[0], None


Embedder = HashedEmbedder | TableEmbedder | RemoteEmbedder


def make_embedder(config: EmbedderConfig) -> Embedder:
    if config.backend == "hashed":
        return HashedEmbedder(config)
    if config.backend == "table":
        return TableEmbedder.from_file(config)
    return RemoteEmbedder(config)


def embed_tokens(token_texts: Sequence[str], config: EmbedderConfig) -> np.ndarray:
    """One-shot embedding of a token sequence under the configured backend."""
    matrix, _ = make_embedder(config).embed(token_texts)
    if not np.all(np.isfinite(matrix)):
        raise ShapeMismatch("embedding matrix contains non-finite values")
    return matrix


# ---------------------------------------------------------------------------
# Vector file: "<vocab_size> <dim>" header, then "<token> <v1> ... <vD>" rows.
# ---------------------------------------------------------------------------

def read_vector_file(path: str | Path) -> tuple[dict[str, int], np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise OovNotConfigured("empty vector file")
    header = lines[0].split()
    if len(header) != 2:
        raise ShapeMismatch("vector file header must be '<vocab_size> <dim>'")
    size, dim = int(header[0]), int(header[1])
    vocab: dict[str, int] = {}
    rows = []
    for line in lines[1 : size + 1]:
        parts = line.rstrip("\n").split(" ")
        token, values = parts[0], parts[1:]
        if len(values) != dim:
            raise ShapeMismatch(f"row for {token!r} has {len(values)} values, expected {dim}")
        vocab[token] = len(rows)
        rows.append([float(v) for v in values])
    if len(rows) != size:
        raise ShapeMismatch(f"vector file declares {size} rows but has {len(rows)}")
    if OOV_TOKEN not in vocab:
        raise OovNotConfigured(f"vector file lacks the mandatory {OOV_TOKEN} row")
    return vocab, np.asarray(rows, dtype=np.float64)


def write_vector_file(vocab_rows: dict[str, Sequence[float]], path: str | Path) -> None:
    if OOV_TOKEN not in vocab_rows:
        raise OovNotConfigured(f"vector table must include an {OOV_TOKEN} row")
    dims = {len(v) for v in vocab_rows.values()}
    if len(dims) != 1:
        raise ShapeMismatch("all vector rows must share one dimension")
    dim = dims.pop()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(vocab_rows)} {dim}\n")
        for token, values in vocab_rows.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in values) + "\n")
