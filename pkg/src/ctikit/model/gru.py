"""Bidirectional GRU encoder with hand-rolled backpropagation through time.

Gate convention (pinned; conventions differ across the literature):

    z = sigmoid(x W_z + h_prev U_z + b_z)        update gate
    r = sigmoid(x W_r + h_prev U_r + b_r)        reset gate
    h~ = tanh(x W_h + (r * h_prev) U_h + b_h)    candidate state
    h = (1 - z) * h_prev + z * h~                z applies to the candidate

Input-to-hidden weights are (D, H) and hidden-to-hidden are (H, H), used
as row-vector right-multiplications.  Initial hidden states are zero.
All math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import EmptySequence, ShapeMismatch


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Split form avoids overflow warnings for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GruDirection:
    """Parameters for one recurrence direction."""

    w_z: np.ndarray
    w_r: np.ndarray
    w_h: np.ndarray
    u_z: np.ndarray
    u_r: np.ndarray
    u_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    @classmethod
    def create(cls, dim: int, hidden: int, rng: np.random.Generator) -> "GruDirection":
        def w() -> np.ndarray:
            return rng.uniform(-0.1, 0.1, size=(dim, hidden))

        def u() -> np.ndarray:
            return rng.uniform(-0.1, 0.1, size=(hidden, hidden))

        return cls(
            w_z=w(), w_r=w(), w_h=w(),
            u_z=u(), u_r=u(), u_h=u(),
            b_z=np.zeros(hidden), b_r=np.zeros(hidden), b_h=np.zeros(hidden),
        )

    @classmethod
    def zeros_like(cls, other: "GruDirection") -> "GruDirection":
        return cls(**{f.name: np.zeros_like(getattr(other, f.name)) for f in fields(other)})

    @property
    def hidden_size(self) -> int:
        return self.b_z.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_z.shape[0]


@dataclass
class GruParams:
    """Forward and backward direction parameters of the BiGRU."""

    fwd: GruDirection
    bwd: GruDirection

    @classmethod
    def create(cls, dim: int, hidden: int, rng: np.random.Generator) -> "GruParams":
        return cls(
            fwd=GruDirection.create(dim, hidden, rng),
            bwd=GruDirection.create(dim, hidden, rng),
        )

    @property
    def hidden_size(self) -> int:
        return self.fwd.hidden_size


def gru_cell(x: np.ndarray, h_prev: np.ndarray, p: GruDirection) -> np.ndarray:
    """One recurrence step; see the module docstring for the equations."""
    if x.shape != (p.input_dim,) or h_prev.shape != (p.hidden_size,):
        raise ShapeMismatch(
            f"x{x.shape} h_prev{h_prev.shape} vs D={p.input_dim} H={p.hidden_size}"
        )
    z = _sigmoid(x @ p.w_z + h_prev @ p.u_z + p.b_z)
    r = _sigmoid(x @ p.w_r + h_prev @ p.u_r + p.b_r)
    h_cand = np.tanh(x @ p.w_h + (r * h_prev) @ p.u_h + p.b_h)
    return (1.0 - z) * h_prev + z * h_cand


@dataclass
class _DirectionCache:
    inputs: np.ndarray   # (T, D) as consumed, i.e. reversed for bwd
    states: np.ndarray   # (T+1, H), states[0] is the zero initial state
    z: np.ndarray        # (T, H)
    r: np.ndarray        # (T, H)
    h_cand: np.ndarray   # (T, H)


def _run_direction(inputs: np.ndarray, p: GruDirection) -> tuple[np.ndarray, _DirectionCache]:
    big_t = inputs.shape[0]
    h = p.hidden_size
    states = np.zeros((big_t + 1, h))
    zs = np.empty((big_t, h))
    rs = np.empty((big_t, h))
    cands = np.empty((big_t, h))
    for t in range(big_t):
        x, h_prev = inputs[t], states[t]
        zs[t] = _sigmoid(x @ p.w_z + h_prev @ p.u_z + p.b_z)
        rs[t] = _sigmoid(x @ p.w_r + h_prev @ p.u_r + p.b_r)
        cands[t] = np.tanh(x @ p.w_h + (rs[t] * h_prev) @ p.u_h + p.b_h)
        states[t + 1] = (1.0 - zs[t]) * h_prev + zs[t] * cands[t]
    cache = _DirectionCache(inputs=inputs, states=states, z=zs, r=rs, h_cand=cands)
    return states[1:], cache


def _backprop_direction(
    d_states: np.ndarray, cache: _DirectionCache, p: GruDirection
) -> tuple[GruDirection, np.ndarray]:
    """Reverse-mode accumulation through the recurrence for one direction.

    d_states[t] is the loss gradient w.r.t. the emitted state at step t;
    returns parameter gradients and the gradient w.r.t. the inputs, in the
    same (consumed) order as the cache.
    """
    grads = GruDirection.zeros_like(p)
    d_inputs = np.zeros_like(cache.inputs)
    carry = np.zeros(p.hidden_size)
    for t in range(d_states.shape[0] - 1, -1, -1):
        dh = d_states[t] + carry
        x, h_prev = cache.inputs[t], cache.states[t]
        z, r, h_cand = cache.z[t], cache.r[t], cache.h_cand[t]

        dz = dh * (h_cand - h_prev)
        d_cand = dh * z
        dh_prev = dh * (1.0 - z)

        da_h = d_cand * (1.0 - h_cand ** 2)
        grads.w_h += np.outer(x, da_h)
        grads.u_h += np.outer(r * h_prev, da_h)
        grads.b_h += da_h
        d_rh = da_h @ p.u_h.T
        dr = d_rh * h_prev
        dh_prev += d_rh * r

        da_z = dz * z * (1.0 - z)
        grads.w_z += np.outer(x, da_z)
        grads.u_z += np.outer(h_prev, da_z)
        grads.b_z += da_z
        dh_prev += da_z @ p.u_z.T

        da_r = dr * r * (1.0 - r)
        grads.w_r += np.outer(x, da_r)
        grads.u_r += np.outer(h_prev, da_r)
        grads.b_r += da_r
        dh_prev += da_r @ p.u_r.T

        d_inputs[t] = da_z @ p.w_z.T + da_r @ p.w_r.T + da_h @ p.w_h.T
        carry = dh_prev
    return grads, d_inputs


@dataclass
class BiGruCache:
    fwd: _DirectionCache
    bwd: _DirectionCache


def bigru_forward(embeddings: np.ndarray, params: GruParams) -> tuple[np.ndarray, BiGruCache]:
    """Encode a (T, D) sequence into (T, 2H) states.

    Row t is the concatenation of the forward state after consuming tokens
    0..t and the backward state after consuming tokens T-1..t.
    """
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise EmptySequence("BiGRU needs at least one input row")
    fwd_states, fwd_cache = _run_direction(embeddings, params.fwd)
    bwd_states_rev, bwd_cache = _run_direction(embeddings[::-1], params.bwd)
    out = np.concatenate([fwd_states, bwd_states_rev[::-1]], axis=1)
    return out, BiGruCache(fwd=fwd_cache, bwd=bwd_cache)


def bigru_backward(
    d_out: np.ndarray, cache: BiGruCache, params: GruParams
) -> tuple[GruParams, np.ndarray]:
    """Gradients of the BiGRU parameters and inputs given d(output rows)."""
    h = params.hidden_size
    fwd_grads, d_in_fwd = _backprop_direction(d_out[:, :h], cache.fwd, params.fwd)
    bwd_grads, d_in_bwd_rev = _backprop_direction(d_out[:, h:][::-1], cache.bwd, params.bwd)
    d_inputs = d_in_fwd + d_in_bwd_rev[::-1]
    return GruParams(fwd=fwd_grads, bwd=bwd_grads), d_inputs
