"""Character n-gram language identification.

A trainable stand-in for an off-the-shelf detector: per-language profiles
of character 1..n-gram counts with add-one smoothing, scored by average
per-n-gram log-likelihood.  Dependency-free and deterministic, which is
all that desk-scale, script-distinct feeds need.
"""

from __future__ import annotations

import json
import math
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import EmptyTrainingSet
from .ingest import RawFeedRecord

UNDETERMINED = "und"
DEFAULT_MIN_CHARS = 10


def _normalize(text: str) -> str:
    """NFC + casefold + whitespace collapse; the n-gram alphabet."""
    t = unicodedata.normalize("NFC", text).casefold()
    return " ".join(t.split())


def _ngrams(text: str, order: int) -> Iterable[str]:
    for i in range(len(text) - order + 1):
        yield text[i : i + order]


@dataclass(frozen=True)
class LanguageProfile:
    """Smoothed n-gram model for one language.

    ngram_log_probs maps each observed n-gram (all orders merged; the gram
    length is its order) to log((count+1) / (total_order + vocab_order)).
    unseen_log_prob holds the order-indexed smoothing floor for grams never
    seen in training.  counts keeps the raw per-order tallies, which is
    what gets serialized; log probabilities are derived.
    """

    lang: str
    n_max: int
    ngram_log_probs: Mapping[str, float]
    unseen_log_prob: Mapping[int, float]
    total_ngrams: int
    counts: Mapping[int, Mapping[str, int]] = field(repr=False, default_factory=dict)


@dataclass(frozen=True)
class LanguageVerdict:
    lang: str
    confidence: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")


def _profile_from_counts(
    lang: str, n_max: int, counts: dict[int, dict[str, int]]
) -> LanguageProfile:
    log_probs: dict[str, float] = {}
    unseen: dict[int, float] = {}
    total = 0
    for order in range(1, n_max + 1):
        order_counts = counts.get(order, {})
        vocab = len(order_counts)
        order_total = sum(order_counts.values())
        total += order_total
        denom = order_total + vocab
        # Degenerate order (nothing observed): harmless 0.0 floor, never used.
        unseen[order] = -math.log(denom) if denom > 0 else 0.0
        for gram, c in order_counts.items():
            log_probs[gram] = math.log((c + 1) / denom)
    return LanguageProfile(
        lang=lang,
        n_max=n_max,
        ngram_log_probs=log_probs,
        unseen_log_prob=unseen,
        total_ngrams=total,
        counts=counts,
    )


def train_profiles(samples: Mapping[str, list[str]], n_max: int = 3) -> list[LanguageProfile]:
    """Build one add-one-smoothed profile per language from raw sample texts.

    Raises EmptyTrainingSet when no language, or any language, has a
    non-empty sample.
    """
    if not samples:
        raise EmptyTrainingSet("no languages in training set")
    profiles = []
    for lang in sorted(samples):
        counts: dict[int, dict[str, int]] = {n: {} for n in range(1, n_max + 1)}
        usable = 0
        for raw in samples[lang]:
            text = _normalize(raw)
            if not text:
                continue
            usable += 1
            for order in range(1, n_max + 1):
                bucket = counts[order]
                for gram in _ngrams(text, order):
                    bucket[gram] = bucket.get(gram, 0) + 1
        if usable == 0:
            raise EmptyTrainingSet(f"language {lang!r} has no non-empty samples")
        profiles.append(_profile_from_counts(lang, n_max, counts))
    return profiles


def _avg_log_likelihood(text: str, profile: LanguageProfile) -> float:
    total = 0.0
    n = 0
    for order in range(1, profile.n_max + 1):
        floor = profile.unseen_log_prob[order]
        for gram in _ngrams(text, order):
            total += profile.ngram_log_probs.get(gram, floor)
            n += 1
    return total / n if n else float("-inf")


def detect_language(
    text: str,
    profiles: list[LanguageProfile],
    min_chars: int = DEFAULT_MIN_CHARS,
) -> LanguageVerdict:
    """Argmax average per-n-gram log-likelihood over the profiled languages.

    Confidence is the two-way softmax between the best and second-best
    average log-likelihoods (1.0 with a single profile).  Texts with fewer
    than min_chars usable (non-space) characters get ("und", 0.0).
    """
    if not profiles:
        raise ValueError("profiles must be non-empty")
    normalized = _normalize(text)
    usable = len(normalized.replace(" ", ""))
    if usable < min_chars:
        return LanguageVerdict(UNDETERMINED, 0.0)

    scored = sorted(
        ((_avg_log_likelihood(normalized, p), p.lang) for p in profiles),
        key=lambda item: (-item[0], item[1]),
    )
    best_ll, best_lang = scored[0]
    if len(scored) == 1:
        return LanguageVerdict(best_lang, 1.0)
    second_ll = scored[1][0]
    gap = second_ll - best_ll  # <= 0
    confidence = 1.0 / (1.0 + math.exp(gap))
    return LanguageVerdict(best_lang, confidence)


def segment_by_language(
    corpus: Iterable[RawFeedRecord],
    profiles: list[LanguageProfile],
    min_chars: int = DEFAULT_MIN_CHARS,
) -> dict[str, list[int]]:
    """Partition record ids into per-language buckets (including "und").

    Every record lands in exactly one bucket; assignment is exactly
    detect_language on its text.
    """
    buckets: dict[str, list[int]] = {}
    for record in corpus:
        verdict = detect_language(record.text, profiles, min_chars)
        buckets.setdefault(verdict.lang, []).append(record.record_id)
    return buckets


def save_profiles(profiles: list[LanguageProfile], path: str | Path) -> None:
    """Persist raw counts per order; log probabilities are rebuilt on load."""
    entries = [
        {
            "lang": p.lang,
            "n_max": p.n_max,
            "counts": {str(order): dict(grams) for order, grams in p.counts.items()},
        }
        for p in profiles
    ]
    Path(path).write_text(
        json.dumps(entries, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_profiles(path: str | Path) -> list[LanguageProfile]:
    entries = json.loads(Path(path).read_text(encoding="utf-8"))
    profiles = []
    for entry in entries:
        counts = {
            int(order): {g: int(c) for g, c in grams.items()}
            for order, grams in entry["counts"].items()
        }
        profiles.append(_profile_from_counts(entry["lang"], int(entry["n_max"]), counts))
    return profiles
