"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded only while a :class:`Tape` is active and at least one
operand has ``requires_grad`` set. Outside a tape everything runs as plain
numpy, which is how inference and "treat as constant" evaluation are done::

    with Tape() as tape:
        loss = (x * w).sum()
    backward_pass(loss, tape)   # x.grad / w.grad now populated
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from crgan.errors import ContractError, DimensionError

DTYPE = np.float64

_active_tapes: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_leaf")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self):
        return self.data.shape[0]

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("outputs", "inputs", "backward")

    def __init__(self, outputs, inputs, backward):
        self.outputs = outputs
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; nested tapes are allowed and operations go to the
    innermost one.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes.clear()

    def backward(self, loss: Tensor):
        backward_pass(loss, self)


def recording() -> bool:
    return bool(_active_tapes)


def _record(outputs: Sequence[Tensor], inputs: Sequence[Tensor], backward: Callable):
    """Attach ``backward`` to the active tape when any input needs a gradient.

    ``backward`` receives one gradient array per output and returns one
    gradient (or None) per input.
    """
    if not _active_tapes or not any(t.requires_grad for t in inputs):
        return
    for out in outputs:
        out.requires_grad = True
        out._leaf = False
    _active_tapes[-1].nodes.append(_Node(tuple(outputs), tuple(inputs), backward))


def _accumulate(t: Tensor, g: np.ndarray):
    # never in place: backward rules may hand the same array to several inputs
    if g.shape != t.data.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    t.grad = g if t.grad is None else t.grad + g


def backward_pass(loss: Tensor, tape: Tape):
    """Populate ``.grad`` of every requires_grad tensor that ``loss`` depends on.

    Leaf gradients accumulate across calls until :meth:`Tensor.zero_grad`.
    Intermediate gradients are released as soon as they have been propagated,
    and the tape is emptied afterwards.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward_pass needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        tape.clear()
        return
    seed = np.ones_like(loss.data)
    if loss._leaf:
        _accumulate(loss, seed)
        tape.clear()
        return
    loss.grad = seed
    for node in reversed(tape.nodes):
        grads_out = [o.grad for o in node.outputs]
        if all(g is None for g in grads_out):
            continue
        grads_out = [np.zeros_like(o.data) if g is None else g for o, g in zip(node.outputs, grads_out)]
        grads_in = node.backward(*grads_out)
        for o in node.outputs:
            o.grad = None
        for t, g in zip(node.inputs, grads_in):
            if g is not None and t.requires_grad:
                _accumulate(t, g)
    tape.clear()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    _record((out,), (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    _record((out,), (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    _record((out,), (a, b), backward)
    return out


def tabs(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data))
    _record((out,), (a,), lambda g: (g * np.sign(a.data),))
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    _record((out,), (a,), lambda g: (g / a.data,))
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    _record((out,), (a,), lambda g: (g * out.data,))
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient passes straight through (clamping is a guard, not a model)."""
    out = Tensor(np.clip(a.data, lo, hi))
    _record((out,), (a,), lambda g: (g,))
    return out


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[0] or b.ndim != 2:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    _record((out,), (a, b), backward)
    return out


# ---------------------------------------------------------------- shape plumbing

def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    _record((out,), (a,), lambda g: (g.reshape(a.shape),))
    return out


def transpose(a: Tensor, axes) -> Tensor:
    out = Tensor(np.transpose(a.data, axes))
    inverse = np.argsort(axes)
    _record((out,), (a,), lambda g: (np.transpose(g, inverse),))
    return out


def getitem(a: Tensor, index) -> Tensor:
    out = Tensor(a.data[index])

    basic = all(isinstance(i, (slice, int)) for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    _record((out,), (a,), backward)
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    _record((out,), tensors, backward)
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    _record((out,), tensors, backward)
    return out


def split(a: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Cut ``a`` into consecutive pieces of the given sizes along ``axis``."""
    if sum(sizes) != a.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not add up to extent {a.shape[axis]} of {a.shape}")
    parts = [Tensor(p) for p in np.split(a.data, np.cumsum(sizes)[:-1], axis=axis)]
    _record(parts, (a,), lambda *gs: (np.concatenate(gs, axis=axis),))
    return parts


def unstack(a: Tensor, axis: int = 0) -> list[Tensor]:
    parts = [Tensor(np.take(a.data, i, axis=axis)) for i in range(a.shape[axis])]
    _record(parts, (a,), lambda *gs: (np.stack(gs, axis=axis),))
    return parts


def take_rows(table: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D table (embedding lookup)."""
    indices = np.asarray(indices, dtype=np.int64)
    out = Tensor(table.data[indices])

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, indices, g)
        return (full,)

    _record((out,), (table,), backward)
    return out


# ---------------------------------------------------------------- reductions

def tsum(a: Tensor, axis=None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    _record((out,), (a,), backward)
    return out


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis), 1.0 / n)
