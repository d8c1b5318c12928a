"""The full sequence labeler: embeddings -> BiGRU -> emissions -> CRF.

A SequenceModel owns every trainable array and exposes them through a flat
name -> ndarray registry so the optimizer and the finite-difference checks
treat all parameters uniformly.  The softmax ablation variant replaces the
CRF objective with per-token cross-entropy and decodes by per-token argmax
(equivalently: a CRF with all transitions frozen at zero).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ..annotate import LabelSchema
from ..embed import Embedder, EmbedderConfig, make_embedder
from ..errors import LengthMismatch, ShapeMismatch
from ..hashing import sub_seed
from . import crf
from .gru import GruDirection, GruParams, bigru_backward, bigru_forward

DEFAULT_HIDDEN_SIZE = 16
MODEL_FORMAT_VERSION = 1

_DIRECTION_FIELDS = ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")


class SequenceModel:
    """All learnable parameters plus the decode policy."""

    def __init__(
        self,
        embed_config: EmbedderConfig,
        schema: LabelSchema,
        embedder: Embedder,
        gru: GruParams,
        w_emit: np.ndarray,
        b_emit: np.ndarray,
        transitions: np.ndarray,
        use_crf: bool = True,
        hard_bio_constraints: bool = True,
    ):
        k = schema.num_labels
        if w_emit.shape != (2 * gru.hidden_size, k) or b_emit.shape != (k,):
            raise ShapeMismatch(
                f"emission shapes {w_emit.shape}/{b_emit.shape} do not match "
                f"H={gru.hidden_size} K={k}"
            )
        if transitions.shape != (k + 2, k + 2):
            raise ShapeMismatch(f"transition shape {transitions.shape} for K={k}")
        self.embed_config = embed_config
        self.schema = schema
        self.embedder = embedder
        self.gru = gru
        self.w_emit = w_emit
        self.b_emit = b_emit
        self.transitions = transitions
        self.use_crf = use_crf
        self.hard_bio_constraints = hard_bio_constraints

    @classmethod
    def create(
        cls,
        embed_config: EmbedderConfig,
        schema: LabelSchema,
        hidden_size: int = DEFAULT_HIDDEN_SIZE,
        seed: int = 0,
        use_crf: bool = True,
        hard_bio_constraints: bool = True,
    ) -> "SequenceModel":
        embedder = make_embedder(embed_config)
        rng = np.random.Generator(np.random.Philox(sub_seed(seed, "model-init")))
        gru = GruParams.create(embed_config.dim, hidden_size, rng)
        k = schema.num_labels
        w_emit = rng.uniform(-0.1, 0.1, size=(2 * hidden_size, k))
        b_emit = np.zeros(k)
        return cls(
            embed_config=embed_config,
            schema=schema,
            embedder=embedder,
            gru=gru,
            w_emit=w_emit,
            b_emit=b_emit,
            transitions=crf.make_transitions(k),
            use_crf=use_crf,
            hard_bio_constraints=hard_bio_constraints,
        )

    @property
    def hidden_size(self) -> int:
        return self.gru.hidden_size

    # -- parameter registry -------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        """Live views of every trainable array, keyed by stable names."""
        out: dict[str, np.ndarray] = {}
        if self.embedder.trainable:
            out["embed.table"] = self.embedder.table
        for direction in ("fwd", "bwd"):
            block: GruDirection = getattr(self.gru, direction)
            for name in _DIRECTION_FIELDS:
                out[f"gru.{direction}.{name}"] = getattr(block, name)
        out["emit.w"] = self.w_emit
        out["emit.b"] = self.b_emit
        if self.use_crf:
            out["crf.trans"] = self.transitions
        return out

    def trainable_mask(self, name: str) -> np.ndarray | None:
        """Boolean mask of cells that must NOT be updated (None = all free)."""
        if name == "crf.trans":
            return crf.structural_mask(self.schema.num_labels)
        return None

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params().items()}

    # -- forward / loss / decode --------------------------------------------

    def emissions(self, token_texts: Sequence[str]) -> tuple[np.ndarray, dict]:
        """Per-token label scores (T, K) plus the caches backward needs."""
        embedded, rows = self.embedder.embed(token_texts)
        states, gru_cache = bigru_forward(embedded, self.gru)
        em = states @ self.w_emit + self.b_emit
        cache = {"embedded": embedded, "rows": rows, "states": states, "gru": gru_cache}
        return em, cache

    def sequence_nll(self, token_texts: Sequence[str], labels: Sequence[int]) -> float:
        em, _ = self.emissions(token_texts)
        if self.use_crf:
            return crf.nll(em, self.transitions, list(labels))
        value, _ = _softmax_ce(em, list(labels))
        return value

    def predict(self, token_texts: Sequence[str]) -> list[int]:
        em, _ = self.emissions(token_texts)
        if not self.use_crf:
            return [int(i) for i in np.argmax(em, axis=1)]
        tags, _ = crf.viterbi(
            em,
            self.transitions,
            label_vocab=self.schema.label_vocab,
            hard_constraints=self.hard_bio_constraints,
        )
        return tags

    def loss_and_grads(
        self, batch: Sequence[tuple[Sequence[str], Sequence[int]]]
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean per-sequence NLL over the batch and exact gradients.

        Accumulation follows batch index order, so results are
        deterministic for a fixed batch.
        """
        if not batch:
            raise ValueError("empty batch")
        grads = self.zero_grads()
        total = 0.0
        for token_texts, labels in batch:
            labels = list(labels)
            em, cache = self.emissions(token_texts)
            if len(labels) != em.shape[0]:
                raise LengthMismatch(f"{len(labels)} labels for {em.shape[0]} tokens")
            if self.use_crf:
                value, d_em, d_trans = crf.nll_gradients(em, self.transitions, labels)
                grads["crf.trans"] += d_trans
            else:
                value, d_em = _softmax_ce(em, labels)
            total += value

            states: np.ndarray = cache["states"]
            grads["emit.w"] += states.T @ d_em
            grads["emit.b"] += d_em.sum(axis=0)
            d_states = d_em @ self.w_emit.T

            gru_grads, d_embedded = bigru_backward(d_states, cache["gru"], self.gru)
            for direction in ("fwd", "bwd"):
                block = getattr(gru_grads, direction)
                for name in _DIRECTION_FIELDS:
                    grads[f"gru.{direction}.{name}"] += getattr(block, name)

            if self.embedder.trainable and cache["rows"] is not None:
                np.add.at(grads["embed.table"], cache["rows"], d_embedded)

        scale = 1.0 / len(batch)
        for arr in grads.values():
            arr *= scale
        return total * scale, grads


def _softmax_ce(em: np.ndarray, labels: list[int]) -> tuple[float, np.ndarray]:
    """Per-token cross-entropy summed over the sequence, and d/d em."""
    if len(labels) != em.shape[0]:
        raise LengthMismatch(f"{len(labels)} labels for {em.shape[0]} tokens")
    idx = np.arange(em.shape[0])
    lse = logsumexp(em, axis=1)
    value = float(np.sum(lse - em[idx, labels]))
    d_em = np.exp(em - lse[:, None])
    d_em[idx, labels] -= 1.0
    return value, d_em
