"""Label-safe data augmentation: synonym replacement and back-translation.

Entity spans are sacrosanct: their tokens are never touched by either
mode, so every augmented sequence keeps its BIO labels valid and its
entity text byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from ..annotate import LabelSchema, Span, TaggedSequence, spans_of, to_bio
from ..errors import MissingSynonymTable, TranslatorUnavailable

SYNONYM_PROB = 0.15


class Translator(Protocol):
    """Round-trip translator used by back-translation."""

    def round_trip(self, tokens: Sequence[str]) -> list[str]: ...


class DictionaryTranslator:
    """Deterministic stub: word-for-word forward map, inverted map back.

    When several source words share one pivot word, the inverse keeps the
    lexicographically first source, so round-tripping genuinely perturbs
    word choice without any randomness.
    """

    def __init__(self, forward: Mapping[str, str]):
        self.forward = dict(forward)
        self.inverse: dict[str, str] = {}
        for src in sorted(self.forward):
            self.inverse.setdefault(self.forward[src], src)

    def round_trip(self, tokens: Sequence[str]) -> list[str]:
        pivot = [self.forward.get(t, t) for t in tokens]
        return [self.inverse.get(t, t) for t in pivot]


@dataclass(frozen=True)
class AugmentResources:
    """Per-language inputs for augmentation.

    synonyms=None means no table was configured at all (an error when the
    synonym mode is requested); an empty table is configured-but-empty and
    makes synonym replacement the identity.
    """

    synonyms: Mapping[str, tuple[str, ...]] | None = None
    stopwords: frozenset[str] = frozenset()
    translator: Translator | None = None


def load_synonyms(path: str | Path) -> dict[str, tuple[str, ...]]:
    """TSV: word TAB synonym [TAB synonym ...]."""
    table: dict[str, tuple[str, ...]] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) >= 2:
            table[parts[0]] = tuple(parts[1:])
    return table


def load_translations(path: str | Path) -> DictionaryTranslator:
    """TSV: word TAB pivot-word."""
    forward = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        src, _, dst = line.partition("\t")
        if dst:
            forward[src] = dst.strip()
    return DictionaryTranslator(forward)


def load_augment_resources(resources_dir: str | Path, lang: str) -> AugmentResources:
    base = Path(resources_dir) / lang
    synonyms: dict[str, tuple[str, ...]] | None = None
    translator: Translator | None = None
    stopwords: frozenset[str] = frozenset()
    syn_path = base / "synonyms.tsv"
    if syn_path.exists():
        synonyms = load_synonyms(syn_path)
    trans_path = base / "translations.tsv"
    if trans_path.exists():
        translator = load_translations(trans_path)
    stop_path = base / "stopwords.txt"
    if stop_path.exists():
        stopwords = frozenset(
            line.strip()
            for line in stop_path.read_text(encoding="utf-8").splitlines()
            if line.strip() and not line.startswith("#")
        )
    return AugmentResources(synonyms=synonyms, stopwords=stopwords, translator=translator)


def _entity_mask(seq: TaggedSequence, schema: LabelSchema) -> list[bool]:
    return [schema.entity_of(label) is not None for label in seq.labels]


def synonym_replace(
    seq: TaggedSequence,
    resources: AugmentResources,
    rng: np.random.Generator,
    schema: LabelSchema,
) -> TaggedSequence:
    """Independently replace non-entity, non-stopword tokens with p=0.15.

    Labels are untouched; entity tokens are never candidates.  An empty
    synonym table therefore returns the input unchanged.
    """
    if resources.synonyms is None:
        raise MissingSynonymTable("no synonym table configured")
    is_entity = _entity_mask(seq, schema)
    tokens = list(seq.token_texts or ())
    for i, token in enumerate(tokens):
        if is_entity[i] or token in resources.stopwords:
            continue
        row = resources.synonyms.get(token)
        if not row:
            continue
        if rng.uniform() < SYNONYM_PROB:
            tokens[i] = row[int(rng.integers(len(row)))]
    return TaggedSequence(
        record_id=seq.record_id,
        lang=seq.lang,
        labels=seq.labels,
        token_texts=tuple(tokens),
    )


def backtranslate(
    seq: TaggedSequence,
    resources: AugmentResources,
    schema: LabelSchema,
) -> TaggedSequence:
    """Round-trip the non-entity stretches, splicing entity spans back in.

    The translator may change the length of a stretch; the O labels for
    that stretch are regenerated, so the output stays BIO-valid and entity
    spans stay verbatim.
    """
    if resources.translator is None:
        raise TranslatorUnavailable("no translator configured")
    tokens = list(seq.token_texts or ())
    entity_spans = spans_of(seq.labels, schema)
    is_entity = _entity_mask(seq, schema)

    out_tokens: list[str] = []
    new_spans: list[Span] = []
    i = 0
    span_iter = iter(entity_spans)
    next_span = next(span_iter, None)
    while i < len(tokens):
        if next_span is not None and i == next_span.start_token:
            offset = len(out_tokens)
            out_tokens.extend(tokens[next_span.start_token : next_span.end_token])
            new_spans.append(
                Span(
                    offset,
                    offset + (next_span.end_token - next_span.start_token),
                    next_span.entity_type,
                    next_span.source,
                )
            )
            i = next_span.end_token
            next_span = next(span_iter, None)
        else:
            j = i
            while j < len(tokens) and not is_entity[j]:
                j += 1
            out_tokens.extend(resources.translator.round_trip(tokens[i:j]))
            i = j
    labels = to_bio(new_spans, len(out_tokens), schema)
    return TaggedSequence(
        record_id=seq.record_id,
        lang=seq.lang,
        labels=tuple(labels),
        token_texts=tuple(out_tokens),
    )


def augment(
    example: TaggedSequence,
    mode: str,
    resources: AugmentResources,
    seed: int,
    schema: LabelSchema,
) -> list[TaggedSequence]:
    """Produce augmented copies of one example (currently one per call)."""
    if example.token_texts is None:
        raise ValueError(f"record {example.record_id} has no token texts to augment")
    if mode == "synonym":
        rng = np.random.Generator(np.random.Philox(seed))
        return [synonym_replace(example, resources, rng, schema)]
    if mode == "backtranslate":
        return [backtranslate(example, resources, schema)]
    raise ValueError(f"unknown augmentation mode {mode!r}")
