"""Mini-batch training with exact gradients, Adam/SGD, and early stopping.

Fully deterministic for a fixed seed: parameter init, shuffling, and
augmentation all draw from named sub-seeds of the config seed, and batch
gradients accumulate in batch index order.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace as dc_replace
from typing import Mapping, Sequence

import numpy as np

from ..annotate import LabelSchema, TaggedSequence, spans_of, to_bio
from ..embed import EmbedderConfig
from ..errors import (
    EmptyDataset,
    LabelOutOfRange,
    MissingSynonymTable,
    TranslatorUnavailable,
)
from ..hashing import sub_seed
from .augment import AugmentResources, augment
from .network import DEFAULT_HIDDEN_SIZE, SequenceModel

logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")
AUGMENT_MODES = ("synonym", "backtranslate")
MAX_SEQ_LEN = 256


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    epochs: int = 60
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "adam"
    grad_clip_norm: float = 5.0  # 0 disables clipping
    early_stop_patience: int = 10  # 0 disables early stopping
    augment: tuple[str, ...] = ()
    hard_bio_constraints: bool = True
    hidden_size: int = DEFAULT_HIDDEN_SIZE
    max_seq_len: int = MAX_SEQ_LEN

    def __post_init__(self) -> None:
        # learning_rate == 0 is allowed as the degenerate "no update" case.
        if self.learning_rate < 0:
            raise ValueError("learning_rate must not be negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        for mode in self.augment:
            if mode not in AUGMENT_MODES:
                raise ValueError(f"unknown augmentation mode {mode!r}")


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        for name, arr in params.items():
            arr -= self.lr * grads[name]


class Adam:
    """Adam with the standard bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        for name, arr in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** self.t)
            v_hat = self.v[name] / (1 - self.beta2 ** self.t)
            arr -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig) -> Sgd | Adam:
    if config.optimizer == "sgd":
        return Sgd(config.learning_rate)
    return Adam(config.learning_rate)


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float) -> float:
    """Global-norm clip, in place; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def split_long_sequences(
    sequences: Sequence[TaggedSequence], schema: LabelSchema, max_len: int = MAX_SEQ_LEN
) -> list[TaggedSequence]:
    """Split oversized records into independent chunks at token boundaries.

    Chunk ids are suffixed "#<k>".  Entity spans crossing a chunk boundary
    cannot survive as valid BIO, so their tokens are relabeled O with a
    warning (silver data is rule-derived; losing a boundary span is noise,
    not signal).
    """
    out = []
    for seq in sequences:
        if len(seq.labels) <= max_len:
            out.append(seq)
            continue
        spans = spans_of(seq.labels, schema)
        keep = []
        for span in spans:
            chunk_start = span.start_token // max_len
            chunk_end = (span.end_token - 1) // max_len
            if chunk_start == chunk_end:
                keep.append(span)
            else:
                logger.warning(
                    "record %s: dropping %s span [%d, %d) crossing a %d-token split",
                    seq.record_id, span.entity_type, span.start_token, span.end_token, max_len,
                )
        labels = to_bio(keep, len(seq.labels), schema)
        for k, start in enumerate(range(0, len(seq.labels), max_len)):
            stop = min(start + max_len, len(seq.labels))
            out.append(
                TaggedSequence(
                    record_id=f"{seq.record_id}#{k}",
                    lang=seq.lang,
                    labels=tuple(labels[start:stop]),
                    token_texts=None if seq.token_texts is None
                    else tuple(seq.token_texts[start:stop]),
                )
            )
    return out


def _validate_labels(sequences: Sequence[TaggedSequence], schema: LabelSchema) -> None:
    k = schema.num_labels
    for seq in sequences:
        for label in seq.labels:
            if not 0 <= label < k:
                raise LabelOutOfRange(
                    f"record {seq.record_id}: label id {label} outside vocabulary of {k}"
                )
        if seq.token_texts is None:
            raise ValueError(f"record {seq.record_id} has no token texts; cannot train on it")


def _augment_dataset(
    dataset: list[TaggedSequence],
    config: TrainConfig,
    schema: LabelSchema,
    resources: Mapping[str, AugmentResources],
) -> list[TaggedSequence]:
    extra = []
    for mode in sorted(config.augment):
        for i, seq in enumerate(dataset):
            res = resources.get(seq.lang)
            if res is None:
                if mode == "synonym":
                    raise MissingSynonymTable(f"no augmentation resources for {seq.lang!r}")
                raise TranslatorUnavailable(f"no augmentation resources for {seq.lang!r}")
            seed = sub_seed(config.seed, f"augment:{mode}:{seq.record_id}:{i}")
            extra.extend(augment(seq, mode, res, seed, schema))
    return dataset + extra


def _dev_f1(model: SequenceModel, dev: Sequence[TaggedSequence], schema: LabelSchema) -> float:
    from ..evaluate import span_prf  # deferred: evaluate imports annotate only

    preds = [
        dc_replace(seq, labels=tuple(model.predict(seq.token_texts)))
        for seq in dev
    ]
    return span_prf(list(dev), preds, schema).f1


def _snapshot(params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: arr.copy() for name, arr in params.items()}


def _restore(params: Mapping[str, np.ndarray], snapshot: Mapping[str, np.ndarray]) -> None:
    for name, arr in params.items():
        arr[...] = snapshot[name]


def train(
    dataset: Sequence[TaggedSequence],
    dev: Sequence[TaggedSequence],
    config: TrainConfig,
    embed_config: EmbedderConfig,
    schema: LabelSchema,
    aug_resources: Mapping[str, AugmentResources] | None = None,
    use_crf: bool = True,
) -> tuple[SequenceModel, list[dict]]:
    """Train a sequence labeler; returns the best-dev model and the history.

    History records one dict per epoch: epoch, train_nll, dev_f1, wall_ms.
    Early stopping restores the parameters of the best dev-F1 epoch.
    """
    if not dataset:
        raise EmptyDataset("training dataset is empty")
    train_set = split_long_sequences(list(dataset), schema, config.max_seq_len)
    dev_set = split_long_sequences(list(dev), schema, config.max_seq_len)
    _validate_labels(train_set, schema)
    _validate_labels(dev_set, schema)
    if config.augment:
        train_set = _augment_dataset(train_set, config, schema, aug_resources or {})

    model = SequenceModel.create(
        embed_config,
        schema,
        hidden_size=config.hidden_size,
        seed=config.seed,
        use_crf=use_crf,
        hard_bio_constraints=config.hard_bio_constraints,
    )
    optimizer = make_optimizer(config)
    shuffle_rng = np.random.Generator(np.random.Philox(sub_seed(config.seed, "shuffle")))
    params = model.params()

    history: list[dict] = []
    best_f1 = -1.0
    best_params: dict[str, np.ndarray] | None = None
    stale = 0

    examples = [(seq.token_texts, seq.labels) for seq in train_set]
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(examples))
        epoch_nll = 0.0
        n_batches = 0
        for lo in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[lo : lo + config.batch_size]]
            loss, grads = model.loss_and_grads(batch)
            clip_gradients(grads, config.grad_clip_norm)
            for name in grads:
                mask = model.trainable_mask(name)
                if mask is not None:
                    grads[name][mask] = 0.0
            optimizer.step(params, grads)
            epoch_nll += loss * len(batch)
            n_batches += 1
        train_nll = epoch_nll / len(examples)
        dev_f1 = _dev_f1(model, dev_set, schema) if dev_set else 0.0
        wall_ms = int((time.perf_counter() - started) * 1000)
        history.append(
            {"epoch": epoch, "train_nll": train_nll, "dev_f1": dev_f1, "wall_ms": wall_ms}
        )
        logger.info("epoch %d: train_nll=%.6f dev_f1=%.4f (%d ms)", epoch, train_nll, dev_f1, wall_ms)

        if dev_set:
            if dev_f1 > best_f1:
                best_f1 = dev_f1
                best_params = _snapshot(params)
                stale = 0
            else:
                stale += 1
                if config.early_stop_patience > 0 and stale >= config.early_stop_patience:
                    logger.info("early stop at epoch %d (best dev_f1=%.4f)", epoch, best_f1)
                    break

    if best_params is not None:
        _restore(params, best_params)
    return model, history


def dataset_seed(config_seed: int, name: str) -> int:
    """Sub-seed helper for dataset-level draws (splits, sampling)."""
    return sub_seed(config_seed, f"dataset:{name}")


def train_dev_split(
    sequences: Sequence[TaggedSequence], dev_fraction: float, seed: int
) -> tuple[list[TaggedSequence], list[TaggedSequence]]:
    """Deterministic shuffled split; dev gets round(n * fraction) items."""
    if not 0 <= dev_fraction < 1:
        raise ValueError("dev_fraction must be in [0, 1)")
    rng = np.random.Generator(np.random.Philox(dataset_seed(seed, "train-dev-split")))
    order = rng.permutation(len(sequences))
    n_dev = int(round(len(sequences) * dev_fraction))
    dev_idx = set(int(i) for i in order[:n_dev])
    train_set = [seq for i, seq in enumerate(sequences) if i not in dev_idx]
    dev_set = [seq for i, seq in enumerate(sequences) if i in dev_idx]
    return train_set, dev_set
