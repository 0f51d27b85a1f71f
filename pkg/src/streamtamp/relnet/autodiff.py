"""A small tape-free reverse-mode differentiation engine over float64 numpy arrays.

Every Tensor remembers its parents and a closure that pushes its gradient back.
backward() runs the closures in reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np


class NonFiniteError(AssertionError):
    pass


def _check(value: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite values produced by {what}")
    return value


class Tensor:
    __slots__ = ("value", "grad", "parents", "_back", "op", "requires_grad")

    def __init__(self, value, parents: Sequence["Tensor"] = (), back: Optional[Callable] = None,
                 op: str = "leaf", requires_grad: bool = False):
        self.value = _check(np.asarray(value, dtype=np.float64), op)
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self._back = back
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor({self.op}, shape={self.value.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=np.float64).copy()
        for node in reversed(order):
            if node._back is not None and node.grad is not None:
                node._back(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value) -> Tensor:
    return Tensor(value, op="const")


def parameter(value) -> Tensor:
    return Tensor(value, op="param", requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value + b.value, (a, b), op="add")
    out._back = lambda g: (a._accumulate(_unbroadcast(g, a.shape)), b._accumulate(_unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value - b.value, (a, b), op="sub")
    out._back = lambda g: (a._accumulate(_unbroadcast(g, a.shape)), b._accumulate(_unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value * b.value, (a, b), op="mul")
    out._back = lambda g: (a._accumulate(_unbroadcast(g * b.value, a.shape)),
                           b._accumulate(_unbroadcast(g * a.value, b.shape)))
    return out


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value / b.value, (a, b), op="div")
    out._back = lambda g: (a._accumulate(_unbroadcast(g / b.value, a.shape)),
                           b._accumulate(_unbroadcast(-g * a.value / b.value ** 2, b.shape)))
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.value * c, (a,), op="scale")
    out._back = lambda g: a._accumulate(g * c)
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.value @ b.value, (a, b), op="matmul")

    def back(g):
        a._accumulate(g @ b.value.T)
        b._accumulate(a.value.T @ g)
    out._back = back
    return out


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    pos = a.value > 0
    out = Tensor(np.where(pos, a.value, slope * a.value), (a,), op="leaky_relu")
    out._back = lambda g: a._accumulate(np.where(pos, g, slope * g))
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    out = Tensor(s, (a,), op="sigmoid")
    out._back = lambda g: a._accumulate(g * s * (1.0 - s))
    return out


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.value)
    out = Tensor(e, (a,), op="exp")
    out._back = lambda g: a._accumulate(g * e)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.value), (a,), op="log")
    out._back = lambda g: a._accumulate(g / a.value)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.value >= lo) & (a.value <= hi)
    out = Tensor(np.clip(a.value, lo, hi), (a,), op="clip")
    out._back = lambda g: a._accumulate(np.where(inside, g, 0.0))
    return out


def total(a: Tensor, axis=None) -> Tensor:
    out = Tensor(a.value.sum(axis=axis), (a,), op="sum")

    def back(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())
    out._back = back
    return out


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if len(parts) == 1:
        return parts[0]
    sizes = [p.shape[axis] for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts], axis=axis), parts, op="concat")

    def back(g):
        offs = np.cumsum([0] + sizes)
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            p._accumulate(g[tuple(sl)])
    out._back = back
    return out


def take(a: Tensor, index) -> Tensor:
    """Gather along the first axis; index may be any integer array."""
    index = np.asarray(index, dtype=np.int64)
    out = Tensor(a.value[index], (a,), op="take")

    def back(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            np.add.at(full, index, g)
            a._accumulate(full)
    out._back = back
    return out


def segment_sum(a: Tensor, segments, n: int) -> Tensor:
    """Sum rows of a into n buckets given by segments."""
    segments = np.asarray(segments, dtype=np.int64)
    acc = np.zeros((n,) + a.shape[1:])
    np.add.at(acc, segments, a.value)
    out = Tensor(acc, (a,), op="segment_sum")
    out._back = lambda g: a._accumulate(g[segments])
    return out


def row_min(a: Tensor, mask: np.ndarray) -> Tensor:
    """Exact minimum over masked entries of each row; rows with an empty mask give 1."""
    big = np.where(mask, a.value, np.inf)
    arg = np.argmin(big, axis=1)
    empty = ~mask.any(axis=1)
    vals = np.where(empty, 1.0, big[np.arange(len(arg)), arg] if len(arg) else np.zeros(0))
    out = Tensor(vals, (a,), op="row_min")

    def back(g):
        full = np.zeros_like(a.value)
        rows = np.nonzero(~empty)[0]
        full[rows, arg[rows]] = g[rows]
        a._accumulate(full)
    out._back = back
    return out


def soft_min(a: Tensor, mask: np.ndarray) -> Tensor:
    """Average of masked row entries weighted by softmax of their negatives.
    Rows with an empty mask give 1."""
    maskf = mask.astype(np.float64)
    empty = ~mask.any(axis=1)
    shift = np.where(mask, a.value, np.inf).min(axis=1, initial=np.inf)
    shift = np.where(empty, 0.0, shift)
    w = exp(sub(scale(a, -1.0), constant(-shift[:, None])))
    w = mul(w, constant(maskf))
    num = total(mul(w, a), axis=1)
    den = total(w, axis=1)
    den = add(den, constant(empty.astype(np.float64)))
    return add(div(num, den), constant(empty.astype(np.float64)))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.value.reshape(shape), (a,), op="reshape")
    out._back = lambda g: a._accumulate(g.reshape(a.shape))
    return out
