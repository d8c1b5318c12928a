"""BIO annotation: rule-based silver labels, gold ingestion, scheme checks.

Entity spans come from three channels (regex patterns over single tokens,
leftmost-longest gazetteer phrase matches, and externally supplied gold
spans), get resolved into a non-overlapping set, and are encoded as BIO
label sequences over the configured schema.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import LabelOutOfRange, LengthMismatch, OverlapError
from .preprocess import HEX_HASH_RE, IPV4_RE, PreprocessedDoc

DEFAULT_ENTITY_TYPES = ("ACTOR", "IP", "TECHNIQUE", "MALWARE", "EVENT")

# ATT&CK-style technique ids, case-folded by normalization: t1566 / t1566.001
TECHNIQUE_RE = re.compile(r"t\d{4}(?:\.\d{3})?")

SPAN_SOURCES = ("regex", "gazetteer", "gold", "model")
_SOURCE_PRIORITY = {"gold": 3, "regex": 2, "gazetteer": 1, "model": 0}

OUTSIDE = "O"


@dataclass(frozen=True)
class LabelSchema:
    """Entity type inventory and the derived BIO label vocabulary."""

    entity_types: tuple[str, ...] = DEFAULT_ENTITY_TYPES

    def __post_init__(self) -> None:
        if len(set(self.entity_types)) != len(self.entity_types):
            raise ValueError("entity types must be unique")

    @property
    def label_vocab(self) -> tuple[str, ...]:
        vocab = [OUTSIDE]
        for t in self.entity_types:
            vocab.append(f"B-{t}")
            vocab.append(f"I-{t}")
        return tuple(vocab)

    @property
    def num_labels(self) -> int:
        return 2 * len(self.entity_types) + 1

    def label_id(self, name: str) -> int:
        try:
            return self.label_vocab.index(name)
        except ValueError:
            raise LabelOutOfRange(f"unknown label {name!r}") from None

    def label_name(self, label_id: int) -> str:
        vocab = self.label_vocab
        if not 0 <= label_id < len(vocab):
            raise LabelOutOfRange(f"label id {label_id} outside vocabulary of {len(vocab)}")
        return vocab[label_id]

    def entity_of(self, label_id: int) -> str | None:
        """Entity type of a B-/I- label id, None for O."""
        name = self.label_name(label_id)
        return None if name == OUTSIDE else name[2:]


@dataclass(frozen=True)
class Span:
    """Token-indexed entity span; end_token is exclusive."""

    start_token: int
    end_token: int
    entity_type: str
    source: str = "model"

    def __post_init__(self) -> None:
        if not 0 <= self.start_token < self.end_token:
            raise ValueError(f"invalid span bounds [{self.start_token}, {self.end_token})")
        if self.source not in SPAN_SOURCES:
            raise ValueError(f"unknown span source {self.source!r}")

    def overlaps(self, other: "Span") -> bool:
        return self.start_token < other.end_token and other.start_token < self.end_token


@dataclass(frozen=True)
class TaggedSequence:
    """A token sequence with one BIO label id per token.

    record_id is a string so that chunks of oversized records can carry
    suffixed ids ("<id>#1").  token_texts may be None for label files that
    were loaded without their source documents (evaluation only needs the
    labels).  BIO validity is enforced where the data contract requires it
    (gold/silver files); model predictions may violate it and are checked
    explicitly via validate_bio.
    """

    record_id: str
    lang: str
    labels: tuple[int, ...]
    token_texts: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.token_texts is not None and len(self.token_texts) != len(self.labels):
            raise LengthMismatch(
                f"{self.record_id}: {len(self.token_texts)} tokens vs {len(self.labels)} labels"
            )


def tag_regex_entities(doc: PreprocessedDoc) -> list[Span]:
    """Single-token spans for pattern-detectable entities.

    IP for dotted-quad IPv4 (octets 0-255), TECHNIQUE for ATT&CK-style ids,
    MALWARE for 32/40/64-char hex digests.
    """
    spans = []
    for i, tok in enumerate(doc.tokens):
        text = tok.normalized
        if IPV4_RE.fullmatch(text):
            spans.append(Span(i, i + 1, "IP", "regex"))
        elif TECHNIQUE_RE.fullmatch(text):
            spans.append(Span(i, i + 1, "TECHNIQUE", "regex"))
        elif HEX_HASH_RE.fullmatch(text):
            spans.append(Span(i, i + 1, "MALWARE", "regex"))
    return spans


class Gazetteer:
    """Phrase -> entity type lexicon over pre-normalized token sequences."""

    def __init__(self, entries: Mapping[str, str]):
        self._phrases: dict[tuple[str, ...], str] = {}
        for phrase, entity_type in entries.items():
            tokens = tuple(phrase.split())
            if tokens:
                self._phrases[tokens] = entity_type
        self.max_len = max((len(p) for p in self._phrases), default=0)

    def __len__(self) -> int:
        return len(self._phrases)

    def lookup(self, tokens: tuple[str, ...]) -> str | None:
        return self._phrases.get(tokens)

    @classmethod
    def from_tsv(cls, path: str | Path) -> "Gazetteer":
        entries = {}
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            phrase, _, entity_type = line.partition("\t")
            if entity_type:
                entries[phrase] = entity_type.strip()
        return cls(entries)


def tag_gazetteer(doc: PreprocessedDoc, gazetteer: Gazetteer) -> list[Span]:
    """Leftmost-longest gazetteer matching over the full token sequence.

    Matching runs over every token regardless of stopword flags; accepted
    matches never overlap because the scan resumes after each match.
    """
    texts = [tok.normalized for tok in doc.tokens]
    spans = []
    i = 0
    n = len(texts)
    while i < n:
        matched = 0
        matched_type = ""
        for length in range(min(gazetteer.max_len, n - i), 0, -1):
            entity_type = gazetteer.lookup(tuple(texts[i : i + length]))
            if entity_type is not None:
                matched, matched_type = length, entity_type
                break
        if matched:
            spans.append(Span(i, i + matched, matched_type, "gazetteer"))
            i += matched
        else:
            i += 1
    return spans


def resolve_spans(spans: Iterable[Span]) -> list[Span]:
    """Resolve overlaps: gold > regex > gazetteer, then longer, then earlier.

    The candidate ordering is a total order, so the output is deterministic
    under any permutation of the input.  Result is non-overlapping, sorted
    by start token.
    """
    ranked = sorted(
        spans,
        key=lambda s: (
            -_SOURCE_PRIORITY[s.source],
            -(s.end_token - s.start_token),
            s.start_token,
            s.entity_type,
            s.end_token,
        ),
    )
    kept: list[Span] = []
    for candidate in ranked:
        if not any(candidate.overlaps(k) for k in kept):
            kept.append(candidate)
    return sorted(kept, key=lambda s: s.start_token)


def to_bio(spans: Iterable[Span], seq_len: int, schema: LabelSchema) -> list[int]:
    """Encode non-overlapping spans as BIO label ids (everything else O)."""
    labels = [0] * seq_len
    occupied = [False] * seq_len
    for span in spans:
        if span.end_token > seq_len:
            raise OverlapError(f"span {span} exceeds sequence length {seq_len}")
        if any(occupied[span.start_token : span.end_token]):
            raise OverlapError(f"span {span} overlaps a previous span")
        for i in range(span.start_token, span.end_token):
            occupied[i] = True
        labels[span.start_token] = schema.label_id(f"B-{span.entity_type}")
        inside = schema.label_id(f"I-{span.entity_type}")
        for i in range(span.start_token + 1, span.end_token):
            labels[i] = inside
    return labels


def spans_of(labels: Sequence[int], schema: LabelSchema, source: str = "model") -> list[Span]:
    """Decode a BIO label sequence into spans.

    Tolerates invalid sequences (as produced by unconstrained decoders) by
    treating an I-X that does not continue a span as the start of one.
    """
    vocab = schema.label_vocab
    spans: list[Span] = []
    start = -1
    current = ""
    for i, label_id in enumerate(labels):
        name = vocab[label_id]
        if name == OUTSIDE:
            if start >= 0:
                spans.append(Span(start, i, current, source))
                start = -1
            continue
        prefix, entity = name[0], name[2:]
        if prefix == "B" or entity != current or start < 0:
            if start >= 0:
                spans.append(Span(start, i, current, source))
            start, current = i, entity
    if start >= 0:
        spans.append(Span(start, len(labels), current, source))
    return spans


def validate_bio(labels: Sequence[int], schema: LabelSchema) -> list[int]:
    """Indices where an I-X label follows anything other than B-X or I-X."""
    vocab = schema.label_vocab
    violations = []
    for i, label_id in enumerate(labels):
        name = vocab[label_id]
        if not name.startswith("I-"):
            continue
        if i == 0:
            violations.append(i)
            continue
        prev = vocab[labels[i - 1]]
        if prev not in (f"B-{name[2:]}", f"I-{name[2:]}"):
            violations.append(i)
    return violations


def annotate_doc(
    doc: PreprocessedDoc,
    gazetteer: Gazetteer,
    schema: LabelSchema,
    gold_spans: Sequence[Span] = (),
    channel: str = "normalized",
) -> TaggedSequence:
    """Silver-annotate one document: regex + gazetteer (+ gold), resolved.

    Pure function of its inputs; re-running yields identical sequences.
    """
    candidates = list(gold_spans) + tag_regex_entities(doc) + tag_gazetteer(doc, gazetteer)
    resolved = resolve_spans(candidates)
    labels = to_bio(resolved, len(doc.tokens), schema)
    return TaggedSequence(
        record_id=str(doc.record_id),
        lang=doc.lang,
        labels=tuple(labels),
        token_texts=tuple(token_channel_texts(doc, channel)),
    )


def token_channel_texts(doc: PreprocessedDoc, channel: str) -> list[str]:
    if channel == "normalized":
        return [t.normalized for t in doc.tokens]
    if channel == "lemma":
        return [t.lemma for t in doc.tokens]
    if channel == "stem":
        return [t.stem for t in doc.tokens]
    raise ValueError(f"unknown text channel {channel!r}")


# ---------------------------------------------------------------------------
# Label file I/O: JSON-lines of {record_id, lang, labels: [label names]}.
# ---------------------------------------------------------------------------

def sequence_to_json(seq: TaggedSequence, schema: LabelSchema) -> str:
    return json.dumps(
        {
            "record_id": seq.record_id,
            "lang": seq.lang,
            "labels": [schema.label_name(i) for i in seq.labels],
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def write_label_file(
    sequences: Iterable[TaggedSequence], schema: LabelSchema, path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(sequence_to_json(seq, schema) + "\n")


def read_label_file(
    path: str | Path, schema: LabelSchema, strict_bio: bool = True
) -> list[TaggedSequence]:
    """Load a gold/silver label file.

    strict_bio rejects files containing invalid BIO transitions, which the
    gold/silver data contract forbids (predictions are exempt).
    """
    sequences = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            labels = tuple(schema.label_id(name) for name in obj["labels"])
            if strict_bio:
                bad = validate_bio(labels, schema)
                if bad:
                    raise OverlapError(
                        f"record {obj['record_id']}: invalid BIO at indices {bad}"
                    )
            sequences.append(
                TaggedSequence(
                    record_id=str(obj["record_id"]),
                    lang=obj["lang"],
                    labels=labels,
                )
            )
    return sequences


def load_schema(path: str | Path) -> LabelSchema:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    return LabelSchema(entity_types=tuple(obj["entity_types"]))
