"""Central-difference gradient oracle used by the test suite."""
from __future__ import annotations

from typing import Callable

import numpy as np

from crgan.tensor import Tape, Tensor, backward_pass


def numerical_grad(f: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-5) -> np.ndarray:
    x = point.data
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f(point).item()
        flat[i] = old - step
        lo = f(point).item()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def analytic_grad(f: Callable[[Tensor], Tensor], point: Tensor) -> np.ndarray:
    was = point.requires_grad
    point.requires_grad = True
    point.grad = None
    with Tape() as tape:
        out = f(point)
    backward_pass(out, tape)
    g = point.grad if point.grad is not None else np.zeros_like(point.data)
    point.grad = None
    point.requires_grad = was
    return g


def finite_diff_check(f: Callable[[Tensor], Tensor], point: Tensor, step: float = 1e-5) -> float:
    """Max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

    ``f`` must map ``point`` to a scalar tensor; the numeric side perturbs
    ``point.data`` in place and restores it.
    """
    a = analytic_grad(f, point)
    n = numerical_grad(f, point, step)
    err = np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))
    return float(err.max())
