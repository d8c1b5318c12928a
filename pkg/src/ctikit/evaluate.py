"""Span-level scoring and the cross-variant accuracy matrix.

A predicted span is a true positive iff (start, end, type) match a gold
span exactly.  Micro-averaged overall scores come with per-type and
per-language breakdowns; the zero-division policy is P = R = F1 = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .annotate import LabelSchema, TaggedSequence, spans_of
from .errors import AlignmentError

MATRIX_METRICS = ("precision", "recall", "f1", "token_accuracy")


@dataclass(frozen=True)
class Prf:
    precision: float
    recall: float
    f1: float


def _prf(tp: int, fp: int, fn: int) -> Prf:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Prf(precision, recall, f1)


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    token_accuracy: float
    per_type: Mapping[str, Prf] = field(default_factory=dict)
    per_lang: Mapping[str, Prf] = field(default_factory=dict)
    support: Mapping[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "token_accuracy": self.token_accuracy,
            "per_type": {
                t: {"precision": p.precision, "recall": p.recall, "f1": p.f1}
                for t, p in sorted(self.per_type.items())
            },
            "per_lang": {
                g: {"precision": p.precision, "recall": p.recall, "f1": p.f1}
                for g, p in sorted(self.per_lang.items())
            },
            "support": dict(sorted(self.support.items())),
        }


def span_prf(
    gold: Sequence[TaggedSequence],
    pred: Sequence[TaggedSequence],
    schema: LabelSchema,
) -> EvalReport:
    """Exact-match span precision/recall/F1 plus token accuracy.

    Raises AlignmentError when the two sides do not share the same record
    ids or a shared record differs in length.
    """
    gold_by_id = {seq.record_id: seq for seq in gold}
    pred_by_id = {seq.record_id: seq for seq in pred}
    if len(gold_by_id) != len(gold) or len(pred_by_id) != len(pred):
        raise AlignmentError("duplicate record ids in label file")
    if set(gold_by_id) != set(pred_by_id):
        missing = set(gold_by_id) ^ set(pred_by_id)
        raise AlignmentError(f"record ids do not align; first differences: {sorted(missing)[:5]}")

    counts: dict[str, list[int]] = {}   # entity type -> [tp, fp, fn]
    lang_counts: dict[str, list[int]] = {}
    support: dict[str, int] = {}
    tp = fp = fn = 0
    tokens_equal = tokens_total = 0

    for record_id, gold_seq in gold_by_id.items():
        pred_seq = pred_by_id[record_id]
        if len(gold_seq.labels) != len(pred_seq.labels):
            raise AlignmentError(
                f"record {record_id}: gold length {len(gold_seq.labels)} != "
                f"pred length {len(pred_seq.labels)}"
            )
        tokens_total += len(gold_seq.labels)
        tokens_equal += sum(g == p for g, p in zip(gold_seq.labels, pred_seq.labels))

        gold_spans = {
            (s.start_token, s.end_token, s.entity_type)
            for s in spans_of(gold_seq.labels, schema, source="gold")
        }
        pred_spans = {
            (s.start_token, s.end_token, s.entity_type)
            for s in spans_of(pred_seq.labels, schema, source="model")
        }
        lang = gold_seq.lang
        lang_row = lang_counts.setdefault(lang, [0, 0, 0])
        for span in gold_spans:
            support[span[2]] = support.get(span[2], 0) + 1
        for span in pred_spans & gold_spans:
            tp += 1
            counts.setdefault(span[2], [0, 0, 0])[0] += 1
            lang_row[0] += 1
        for span in pred_spans - gold_spans:
            fp += 1
            counts.setdefault(span[2], [0, 0, 0])[1] += 1
            lang_row[1] += 1
        for span in gold_spans - pred_spans:
            fn += 1
            counts.setdefault(span[2], [0, 0, 0])[2] += 1
            lang_row[2] += 1

    overall = _prf(tp, fp, fn)
    return EvalReport(
        precision=overall.precision,
        recall=overall.recall,
        f1=overall.f1,
        token_accuracy=tokens_equal / tokens_total if tokens_total else 0.0,
        per_type={t: _prf(*row) for t, row in counts.items()},
        per_lang={g: _prf(*row) for g, row in lang_counts.items()},
        support=support,
    )


# ---------------------------------------------------------------------------
# Cross-variant accuracy matrix, rendered as aligned text and JSON.
# ---------------------------------------------------------------------------

def _metric_value(report: EvalReport | Mapping, metric: str) -> float | None:
    if isinstance(report, EvalReport):
        return getattr(report, metric)
    value = report.get(metric)
    return float(value) if value is not None else None


def accuracy_matrix(results: Mapping[str, EvalReport | Mapping]) -> dict:
    """Machine-readable matrix: one row per variant, stably ordered by name."""
    if not results:
        raise ValueError("at least one variant is required")
    rows = []
    for variant in sorted(results):
        row: dict[str, object] = {"variant": variant}
        for metric in MATRIX_METRICS:
            row[metric] = _metric_value(results[variant], metric)
        rows.append(row)
    return {"columns": list(MATRIX_METRICS), "rows": rows}


def _cell(value: object) -> str:
    if value is None:
        return "-"
    return f"{100.0 * float(value):.1f}%"


def render_accuracy_matrix(results: Mapping[str, EvalReport | Mapping]) -> str:
    """Aligned text table; missing cells render as '-'."""
    matrix = accuracy_matrix(results)
    header = ["variant", *matrix["columns"]]
    body = [
        [str(row["variant"]), *(_cell(row[m]) for m in matrix["columns"])]
        for row in matrix["rows"]
    ]
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(len(header))]
    lines = [
        "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    for line in body:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)))
    return "\n".join(lines)


def write_report(report: EvalReport, path, extra: Mapping | None = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, sort_keys=True, indent=2)
        fh.write("\n")


def softmax_baseline(
    dataset: Sequence[TaggedSequence],
    dev: Sequence[TaggedSequence],
    config,
    embed_config,
    schema: LabelSchema,
    aug_resources=None,
):
    """Ablation comparator: the identical pipeline with per-token argmax
    decoding and per-token cross-entropy instead of the CRF."""
    from .model.training import train  # deferred to avoid an import cycle

    return train(
        dataset, dev, config, embed_config, schema,
        aug_resources=aug_resources, use_crf=False,
    )
