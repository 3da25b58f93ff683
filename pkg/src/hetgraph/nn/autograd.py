"""A small reverse-mode autodiff engine over 2-D numpy arrays.

Only the handful of ops the scene-graph model needs are provided. Every op
records its inputs and a closure that pushes the output gradient back to
them; :func:`backward` walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

DTYPE = np.float64

_recording = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph."""
    global _recording
    prev, _recording = _recording, False
    try:
        yield
    finally:
        _recording = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward needs the Tensor produced by a forward pass")
    if loss.data.size != 1:
        raise ValueError("backward needs a scalar loss")
    if not loss.requires_grad:
        raise RuntimeError("loss has no recorded graph; run a forward pass with parameters first")

    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _accumulate(node, g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    """Hadamard product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


hadamard = mul


def scale(a: Tensor, k: float) -> Tensor:
    return _make(a.data * k, (a,), lambda g: (g * k,))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


# -- linear algebra / shape ----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        if axis == 0:
            return [g[bounds[k]:bounds[k + 1]] for k in range(len(tensors))]
        return [g[:, bounds[k]:bounds[k + 1]] for k in range(len(tensors))]

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def take_rows(a: Tensor, rows) -> Tensor:
    """Gather rows ``a[rows]`` (rows may repeat)."""
    rows = np.asarray(rows, dtype=np.int64)
    n = a.shape[0]

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, rows, g)
        return (out,)

    if rows.size == n and np.array_equal(rows, np.arange(n)):
        return a
    return _make(a.data[rows], (a,), bw)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        out = np.zeros_like(a.data)
        out[:, start:stop] = g
        return (out,)

    return _make(a.data[:, start:stop], (a,), bw)


def gather_flat(a: Tensor, index) -> Tensor:
    """``out[k] = a.flat[index[k]]``; negative indices read as 0. Output keeps index shape."""
    index = np.asarray(index, dtype=np.int64)
    valid = index >= 0
    safe = np.where(valid, index, 0)
    flat = a.data.reshape(-1)

    def bw(g):
        out = np.zeros(a.data.size, dtype=DTYPE)
        np.add.at(out, safe[valid], g[valid])
        return (out.reshape(a.shape),)

    return _make(np.where(valid, flat[safe], 0.0), (a,), bw)


def sum_all(a: Tensor) -> Tensor:
    return _make(np.array([[a.data.sum()]]), (a,), lambda g: (np.full_like(a.data, g.item()),))


def weighted_sum(a: Tensor, weights) -> Tensor:
    """Scalar ``sum(a * weights)`` with constant weights."""
    w = np.asarray(weights, dtype=DTYPE).reshape(a.shape)
    return _make(np.array([[float((a.data * w).sum())]]), (a,), lambda g: (g.item() * w,))


# -- normalisation -----------------------------------------------------------

def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax."""
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, (a,), bw)


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bw(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _make(y, (a,), bw)


def zeros(rows: int, cols: int) -> Tensor:
    return Tensor(np.zeros((rows, cols), dtype=DTYPE))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
