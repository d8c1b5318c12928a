"""Linear-chain CRF with virtual START/STOP states and exact inference.

Scores live entirely in the log domain.  The transition matrix is
(K+2) x (K+2) where rows/columns 0..K-1 are labels, K is START and K+1 is
STOP; transitions into START and out of STOP are masked to NEG_INF, which
stands in for -infinity while keeping all arithmetic total.

score(y) = trans[START, y_1] + sum_t em[t, y_t] + sum_t trans[y_t, y_{t+1}]
           + trans[y_T, STOP]

The forward recursion, Viterbi, and the forward-backward marginals used
for gradients all accumulate in the same left-to-right order as the
per-sequence score, so a brute-force enumeration over all K^T sequences
reproduces the DP values to float precision (exactly, for Viterbi).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from ..errors import LengthMismatch

NEG_INF = -1e30


def make_transitions(num_labels: int) -> np.ndarray:
    """Zero-initialized transition matrix with START/STOP masking applied."""
    trans = np.zeros((num_labels + 2, num_labels + 2), dtype=np.float64)
    apply_structural_mask(trans)
    return trans


def apply_structural_mask(trans: np.ndarray) -> np.ndarray:
    """Force transitions into START and out of STOP to NEG_INF, in place."""
    start, stop = trans.shape[0] - 2, trans.shape[0] - 1
    trans[:, start] = NEG_INF
    trans[stop, :] = NEG_INF
    return trans


def structural_mask(num_labels: int) -> np.ndarray:
    """Boolean mask of the masked (non-trainable) transition cells."""
    mask = np.zeros((num_labels + 2, num_labels + 2), dtype=bool)
    mask[:, num_labels] = True
    mask[num_labels + 1, :] = True
    return mask


def bio_transition_mask(label_vocab: Sequence[str]) -> np.ndarray:
    """Boolean mask of transitions that violate the BIO scheme.

    I-X may only follow B-X or I-X; in particular it may not open a
    sequence (START -> I-X is masked).
    """
    k = len(label_vocab)
    start = k
    mask = np.zeros((k + 2, k + 2), dtype=bool)
    for j, name in enumerate(label_vocab):
        if not name.startswith("I-"):
            continue
        allowed = {f"B-{name[2:]}", f"I-{name[2:]}"}
        for i in range(k):
            if label_vocab[i] not in allowed:
                mask[i, j] = True
        mask[start, j] = True
    return mask


def constrained_transitions(trans: np.ndarray, label_vocab: Sequence[str]) -> np.ndarray:
    masked = trans.copy()
    masked[bio_transition_mask(label_vocab)] = NEG_INF
    return masked


def _check_lengths(emissions: np.ndarray, tags: Sequence[int]) -> None:
    if len(tags) != emissions.shape[0]:
        raise LengthMismatch(
            f"{len(tags)} tags for {emissions.shape[0]} emission rows"
        )


def sequence_score(emissions: np.ndarray, trans: np.ndarray, tags: Sequence[int]) -> float:
    """Unnormalized log score of one tag sequence."""
    _check_lengths(emissions, tags)
    k = emissions.shape[1]
    start, stop = k, k + 1
    score = trans[start, tags[0]] + emissions[0, tags[0]]
    for t in range(1, len(tags)):
        score = score + trans[tags[t - 1], tags[t]] + emissions[t, tags[t]]
    return float(score + trans[tags[-1], stop])


def log_partition(emissions: np.ndarray, trans: np.ndarray) -> float:
    """log sum over all K^T sequences of exp(sequence_score), via the
    forward recursion with max-subtracted log-sum-exp at every step."""
    big_t, k = emissions.shape
    start, stop = k, k + 1
    alpha = trans[start, :k] + emissions[0]
    for t in range(1, big_t):
        alpha = logsumexp(alpha[:, None] + trans[:k, :k], axis=0) + emissions[t]
    return float(logsumexp(alpha + trans[:k, stop]))


def viterbi(
    emissions: np.ndarray,
    trans: np.ndarray,
    label_vocab: Sequence[str] | None = None,
    hard_constraints: bool = False,
) -> tuple[list[int], float]:
    """Exact argmax decode.

    Ties break toward the smaller label id at every backpointer (argmax
    returns the first maximum).  With hard_constraints, BIO-invalid
    transitions are masked to NEG_INF before decoding, which guarantees a
    scheme-valid output for arbitrary emissions.
    """
    if hard_constraints:
        if label_vocab is None:
            raise ValueError("hard_constraints requires the label vocabulary")
        trans = constrained_transitions(trans, label_vocab)
    big_t, k = emissions.shape
    start, stop = k, k + 1

    delta = trans[start, :k] + emissions[0]
    backptr = np.zeros((big_t, k), dtype=np.int64)
    for t in range(1, big_t):
        scores = delta[:, None] + trans[:k, :k]
        backptr[t] = np.argmax(scores, axis=0)
        delta = scores[backptr[t], np.arange(k)] + emissions[t]
    final = delta + trans[:k, stop]
    last = int(np.argmax(final))
    tags = [last]
    for t in range(big_t - 1, 0, -1):
        last = int(backptr[t, last])
        tags.append(last)
    tags.reverse()
    return tags, float(final[tags[-1]])


def forward_backward(
    emissions: np.ndarray, trans: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """Log-domain alpha/beta lattices and the log partition.

    alpha[t, k] scores prefixes ending in label k at t (emissions through t
    included); beta[t, k] scores suffixes given label k at t (emissions
    after t included, plus the STOP transition).
    """
    big_t, k = emissions.shape
    start, stop = k, k + 1
    alpha = np.empty((big_t, k), dtype=np.float64)
    alpha[0] = trans[start, :k] + emissions[0]
    for t in range(1, big_t):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + trans[:k, :k], axis=0) + emissions[t]

    beta = np.empty((big_t, k), dtype=np.float64)
    beta[-1] = trans[:k, stop]
    for t in range(big_t - 2, -1, -1):
        beta[t] = logsumexp(
            trans[:k, :k] + (emissions[t + 1] + beta[t + 1])[None, :], axis=1
        )
    log_z = float(logsumexp(alpha[-1] + beta[-1]))
    return alpha, beta, log_z


def nll(emissions: np.ndarray, trans: np.ndarray, tags: Sequence[int]) -> float:
    """Negative log-likelihood of the gold tags; always >= 0."""
    return log_partition(emissions, trans) - sequence_score(emissions, trans, tags)


def nll_gradients(
    emissions: np.ndarray, trans: np.ndarray, tags: Sequence[int]
) -> tuple[float, np.ndarray, np.ndarray]:
    """NLL and its exact gradients w.r.t. emissions and transitions.

    d/d em[t, k]      = P(y_t = k) - 1{gold_t = k}
    d/d trans[j, k]   = sum_t P(y_t = j, y_{t+1} = k) - #gold(j -> k)
    with the analogous marginal-minus-indicator rows for START and STOP.
    Masked cells get zero gradient.
    """
    _check_lengths(emissions, tags)
    big_t, k = emissions.shape
    start, stop = k, k + 1
    alpha, beta, log_z = forward_backward(emissions, trans)

    # Unary marginals P(y_t = k).
    unary = np.exp(alpha + beta - log_z)

    d_em = unary.copy()
    d_em[np.arange(big_t), tags] -= 1.0

    d_trans = np.zeros_like(trans)
    if big_t > 1:
        for t in range(big_t - 1):
            # P(y_t = j, y_{t+1} = k)
            pair = np.exp(
                alpha[t][:, None]
                + trans[:k, :k]
                + (emissions[t + 1] + beta[t + 1])[None, :]
                - log_z
            )
            d_trans[:k, :k] += pair
        for t in range(big_t - 1):
            d_trans[tags[t], tags[t + 1]] -= 1.0
    d_trans[start, :k] += unary[0]
    d_trans[start, tags[0]] -= 1.0
    d_trans[:k, stop] += unary[-1]
    d_trans[tags[-1], stop] -= 1.0

    value = log_z - sequence_score(emissions, trans, tags)
    return float(value), d_em, d_trans
