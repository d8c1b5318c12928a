"""Stable 64-bit content hashing: dedup keys, embedding buckets, sub-seeds.

Everything here is a pure function of its input bytes, so values are
identical across runs, platforms, and process restarts.
"""

from __future__ import annotations

import hashlib
import unicodedata
from pathlib import Path

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash of raw bytes."""
    h = FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV64_PRIME) & _MASK64
    return h


def dedup_key(text: str) -> int:
    """Content key for exact-duplicate detection.

    FNV-1a 64 over the UTF-8 encoding of the NFC-normalized text, so two
    strings that differ only in Unicode normalization form collide on
    purpose.  dedup_key("") is the FNV-1a offset basis.
    """
    return fnv1a64(unicodedata.normalize("NFC", text).encode("utf-8"))


def token_bucket(token: str, buckets: int) -> int:
    """Hashed-embedding row index for a token: FNV-1a(token) mod buckets."""
    if buckets <= 0:
        raise ValueError("buckets must be positive")
    return fnv1a64(token.encode("utf-8")) % buckets


def sub_seed(seed: int, name: str) -> int:
    """Named sub-seed: the run seed XORed with the hash of the stage name.

    Every random draw in the toolkit comes from one of these, so a single
    config seed pins the whole pipeline.
    """
    return (seed ^ fnv1a64(name.encode("utf-8"))) & _MASK64


def file_sha256(path: str | Path) -> str:
    """Hex SHA-256 of a file's bytes (stage manifest fingerprints)."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def bytes_sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
