"""Per-language text preprocessing chain.

normalize -> tokenize -> stopword flagging -> lemmatize -> stem, producing
analysis-ready documents whose token offsets always index into the
normalized text.  Characters that carry indicator-of-compromise structure
('.', ':', '/', '-', '_', '@') survive normalization so that IPs, CVE ids,
domains, and hashes reach annotation intact.
"""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

from .errors import MissingResources
from .ingest import RawFeedRecord
from .langid import UNDETERMINED, LanguageVerdict

logger = logging.getLogger(__name__)

# Punctuation preserved verbatim because removing it destroys the very
# entities the extractor is after (192.168.1.5, cve-2024-1234, a.b.c).
IOC_SAFE_CHARS = frozenset(".:/-_@")

# Tokens matching any of these stay intact during '.'/':' detachment.
_OCTET = r"(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)"
IPV4_RE = re.compile(rf"{_OCTET}(?:\.{_OCTET}){{3}}")
CVE_RE = re.compile(r"cve-\d{4}-\d{4,7}")
HEX_HASH_RE = re.compile(r"(?:[0-9a-f]{64}|[0-9a-f]{40}|[0-9a-f]{32})")
DOMAIN_RE = re.compile(r"[a-z0-9][a-z0-9-]*(?:\.[a-z0-9][a-z0-9-]*)+")
_IOC_TOKEN_RES = (IPV4_RE, CVE_RE, HEX_HASH_RE, DOMAIN_RE)


def is_ioc_token(token: str) -> bool:
    return any(rx.fullmatch(token) for rx in _IOC_TOKEN_RES)


@dataclass(frozen=True)
class Token:
    """One token of a normalized document; offsets are into normalized_text."""

    surface: str
    normalized: str
    lemma: str
    stem: str
    is_stopword: bool
    char_start: int
    char_end: int


@dataclass(frozen=True)
class PreprocessedDoc:
    record_id: int
    lang: str
    normalized_text: str
    tokens: tuple[Token, ...]


@dataclass(frozen=True)
class LanguageResources:
    """Stopword list, lemma lexicon, and ordered suffix-stripping rules."""

    lang: str
    stopwords: frozenset[str]
    lemma_lexicon: Mapping[str, str]
    stem_rules: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        for suffix, min_len in self.stem_rules:
            if not suffix:
                raise ValueError("stem rule suffix must be non-empty")
            if min_len < 1:
                raise ValueError("stem rule min_stem_len must be >= 1")


def _keep_char(ch: str) -> bool:
    if ch.isspace() or ch in IOC_SAFE_CHARS or ch.isalnum():
        return True
    return unicodedata.category(ch).startswith("M")  # combining marks


def normalize(text: str, lang: str | None = None) -> str:
    """Normalize raw text: NFC, casefold, strip the removal class, tidy spaces.

    Characters outside letters/digits/marks/whitespace and the IOC-safe set
    become a single space; whitespace runs collapse to one space; the result
    is trimmed.  Idempotent: normalize(normalize(t)) == normalize(t).
    """
    t = unicodedata.normalize("NFC", text).casefold()
    t = unicodedata.normalize("NFC", t)  # casefold can denormalize
    t = "".join(ch if _keep_char(ch) else " " for ch in t)
    return " ".join(t.split())


def tokenize(normalized_text: str, lang: str | None = None) -> list[Token]:
    """Split normalized text on whitespace, detaching leading/trailing '.'/':'.

    A chunk that matches an IOC pattern (IPv4, CVE id, hex hash, domain)
    stays intact; otherwise '.' and ':' are peeled off either end one at a
    time, each becoming its own token.  Only surface and offsets are
    populated here; later stages fill the other fields.
    """
    tokens: list[Token] = []

    def emit(surface: str, start: int) -> None:
        tokens.append(
            Token(
                surface=surface,
                normalized=surface,
                lemma="",
                stem="",
                is_stopword=False,
                char_start=start,
                char_end=start + len(surface),
            )
        )

    for match in re.finditer(r"\S+", normalized_text):
        chunk, start = match.group(), match.start()
        trailing: list[tuple[str, int]] = []
        while chunk and not is_ioc_token(chunk):
            if chunk[0] in ".:":
                emit(chunk[0], start)
                chunk, start = chunk[1:], start + 1
            elif chunk[-1] in ".:":
                trailing.append((chunk[-1], start + len(chunk) - 1))
                chunk = chunk[:-1]
            else:
                break
        if chunk:
            emit(chunk, start)
        for surface, pos in reversed(trailing):
            emit(surface, pos)
    return tokens


def remove_stopwords(tokens: Iterable[Token], resources: LanguageResources) -> list[Token]:
    """Flag stopwords; tokens are never deleted so offsets survive for NER."""
    return [
        replace(tok, is_stopword=tok.normalized in resources.stopwords)
        for tok in tokens
    ]


def lemmatize(token: str, resources: LanguageResources) -> str:
    """Lexicon lookup; identity for anything not in the lexicon."""
    return resources.lemma_lexicon.get(token, token)


def stem(token: str, resources: LanguageResources) -> str:
    """Strip the first matching suffix rule, guarded by minimum stem length.

    Rules are tried in declared order; the first rule whose suffix matches
    ends the search, and it applies only if the remaining stem is at least
    min_stem_len characters.  At most one rule ever fires.
    """
    for suffix, min_len in resources.stem_rules:
        if token.endswith(suffix):
            remainder = len(token) - len(suffix)
            if remainder >= min_len:
                return token[:remainder]
            return token
    return token


def preprocess_doc(
    record: RawFeedRecord,
    verdict: LanguageVerdict,
    resources_by_lang: Mapping[str, LanguageResources],
    default_lang: str | None = None,
) -> PreprocessedDoc:
    """Run the full chain for one record, routing "und" to the default language.

    Raises MissingResources when neither the detected language nor a default
    has resources.
    """
    lang = verdict.lang
    if lang == UNDETERMINED or lang not in resources_by_lang:
        if default_lang is not None and default_lang in resources_by_lang:
            lang = default_lang
        else:
            raise MissingResources(verdict.lang)
    resources = resources_by_lang[lang]

    text = normalize(record.text, lang)
    tokens = remove_stopwords(tokenize(text, lang), resources)
    tokens = [
        replace(
            tok,
            lemma=lemmatize(tok.normalized, resources),
            stem=stem(tok.normalized, resources),
        )
        for tok in tokens
    ]
    return PreprocessedDoc(
        record_id=record.record_id,
        lang=lang,
        normalized_text=text,
        tokens=tuple(tokens),
    )


# ---------------------------------------------------------------------------
# Resource files: one directory per language with stopwords.txt, lemmas.tsv,
# stem_rules.tsv (all plain text, '#' comments allowed).
# ---------------------------------------------------------------------------

def _read_lines(path: Path) -> list[str]:
    if not path.exists():
        return []
    lines = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            lines.append(line)
    return lines


def load_resources(resources_dir: str | Path, lang: str) -> LanguageResources:
    base = Path(resources_dir) / lang
    if not base.is_dir():
        raise MissingResources(lang)
    stopwords = frozenset(_read_lines(base / "stopwords.txt"))
    lexicon = {}
    for line in _read_lines(base / "lemmas.tsv"):
        surface, _, lemma = line.partition("\t")
        if lemma:
            lexicon[surface] = lemma
    rules = []
    for line in _read_lines(base / "stem_rules.tsv"):
        suffix, _, min_len = line.partition("\t")
        if min_len:
            rules.append((suffix, int(min_len)))
    return LanguageResources(
        lang=lang,
        stopwords=stopwords,
        lemma_lexicon=lexicon,
        stem_rules=tuple(rules),
    )


def available_languages(resources_dir: str | Path) -> list[str]:
    base = Path(resources_dir)
    if not base.is_dir():
        return []
    return sorted(p.name for p in base.iterdir() if p.is_dir())


# ---------------------------------------------------------------------------
# Document serialization: JSON-lines mirror (always) plus a columnar tokens
# table when a Parquet writer is available.
# ---------------------------------------------------------------------------

def doc_to_json(doc: PreprocessedDoc) -> str:
    return json.dumps(
        {
            "record_id": str(doc.record_id),
            "lang": doc.lang,
            "normalized_text": doc.normalized_text,
            "tokens": [
                [t.surface, t.normalized, t.lemma, t.stem, t.is_stopword, t.char_start, t.char_end]
                for t in doc.tokens
            ],
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def doc_from_json(line: str) -> PreprocessedDoc:
    obj = json.loads(line)
    return PreprocessedDoc(
        record_id=int(obj["record_id"]),
        lang=obj["lang"],
        normalized_text=obj["normalized_text"],
        tokens=tuple(
            Token(
                surface=t[0], normalized=t[1], lemma=t[2], stem=t[3],
                is_stopword=bool(t[4]), char_start=int(t[5]), char_end=int(t[6]),
            )
            for t in obj["tokens"]
        ),
    )


def write_docs_jsonl(docs: Iterable[PreprocessedDoc], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(doc_to_json(doc) + "\n")


def read_docs_jsonl(path: str | Path) -> list[PreprocessedDoc]:
    docs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                docs.append(doc_from_json(line))
    return docs


TOKEN_TABLE_COLUMNS = (
    "record_id", "lang", "token_index", "surface", "normalized",
    "lemma", "stem", "is_stopword", "char_start", "char_end",
)


def write_tokens_parquet(docs: Iterable[PreprocessedDoc], path: str | Path) -> bool:
    """Write the one-row-per-token columnar table; no-op without pyarrow.

    Returns True when the file was written.  The JSON-lines mirror is the
    authoritative artifact when no Parquet toolchain is present.
    """
    try:
        import pyarrow as pa
        import pyarrow.parquet as pq
    except ImportError:
        logger.info("pyarrow not available; skipping columnar token table")
        return False

    columns: dict[str, list] = {name: [] for name in TOKEN_TABLE_COLUMNS}
    for doc in docs:
        for idx, tok in enumerate(doc.tokens):
            columns["record_id"].append(str(doc.record_id))
            columns["lang"].append(doc.lang)
            columns["token_index"].append(idx)
            columns["surface"].append(tok.surface)
            columns["normalized"].append(tok.normalized)
            columns["lemma"].append(tok.lemma)
            columns["stem"].append(tok.stem)
            columns["is_stopword"].append(tok.is_stopword)
            columns["char_start"].append(tok.char_start)
            columns["char_end"].append(tok.char_end)
    pq.write_table(pa.table(columns), str(path))
    return True
