from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from crgan.errors import DimensionError, NonFiniteError
from crgan.tensor import DTYPE, Tensor


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-5
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: AdamState):
    """One bias-corrected Adam update, in place.

    L2 regularization enters as ``2 * weight_decay * w`` added to the gradient
    of every weight (rank >= 2: kernels, matrices, embeddings); biases and
    batch-norm affine terms are not decayed. A missing gradient counts as zero.
    Nothing is modified if any gradient is non-finite.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}; Adam step refused")

    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data, dtype=DTYPE)
            state.v[name] = np.zeros_like(p.data, dtype=DTYPE)
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        gflat = np.zeros_like(flat) if g is None else np.ravel(g)
        decay = state.weight_decay if p.ndim >= 2 else 0.0
        m, v = state.m[name].reshape(-1), state.v[name].reshape(-1)
        # cache-sized chunks: the update is a dozen elementwise passes and would
        # otherwise be bound by memory traffic on the multi-million-entry LSTM matrices
        for lo in range(0, flat.size, CHUNK):
            hi = min(lo + CHUNK, flat.size)
            _update(flat[lo:hi], gflat[lo:hi], m[lo:hi], v[lo:hi], state, decay, c1, c2)


CHUNK = 16384
_buffers = np.empty((3, CHUNK), dtype=DTYPE)


def _update(p, g, m, v, state: AdamState, decay: float, c1: float, c2: float):
    """lr * (m / c1) / (sqrt(v / c2) + eps), evaluated in place with the same rounding."""
    n = p.size
    tmp, den, decayed = _buffers[0, :n], _buffers[1, :n], _buffers[2, :n]
    if decay:
        np.multiply(p, 2.0 * decay, out=decayed)
        decayed += g
        g = decayed
    np.multiply(g, 1.0 - state.beta1, out=tmp)
    m *= state.beta1
    m += tmp
    np.multiply(g, 1.0 - state.beta2, out=tmp)
    tmp *= g
    v *= state.beta2
    v += tmp
    np.divide(v, c2, out=den)
    np.sqrt(den, out=den)
    den += state.epsilon
    np.divide(m, c1, out=tmp)
    tmp *= state.learning_rate
    tmp /= den
    p -= tmp
