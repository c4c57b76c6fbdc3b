"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` records the operation that produced it.  Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order and accumulates ``.grad`` on every tensor that requires it.
Recording is switched off inside :func:`no_grad`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

_RECORDING = [True]


@contextlib.contextmanager
def no_grad():
    prev = _RECORDING[0]
    _RECORDING[0] = False
    try:
        yield
    finally:
        _RECORDING[0] = prev


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor({self.value!r})"

    def backward(self, seed: Optional[np.ndarray] = None):
        if seed is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor")
            seed = np.ones_like(self.value)
        order: list[Tensor] = []
        seen: set[int] = set()
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)


def leaf(value, requires_grad=True) -> Tensor:
    return Tensor(value, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward) -> Tensor:
    out = Tensor(value)
    if _RECORDING[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (undo numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (unbroadcast(g * b.value, a.shape), unbroadcast(g * a.value, b.shape)),
    )


def exp(a: Tensor) -> Tensor:
    v = np.exp(a.value)
    return _make(v, (a,), lambda g: (g * v,))


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; no gradient flows where the floor is active."""
    x = np.maximum(a.value, floor) if floor > 0 else a.value
    with np.errstate(divide="ignore"):
        v = np.log(x)
    if floor > 0:
        active = a.value >= floor
        return _make(v, (a,), lambda g: (np.where(active, g / x, 0.0),))
    return _make(v, (a,), lambda g: (g / x,))


def tanh(a: Tensor) -> Tensor:
    v = np.tanh(a.value)
    return _make(v, (a,), lambda g: (g * (1.0 - v * v),))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    v = _sigmoid(a.value)
    return _make(v, (a,), lambda g: (g * v * (1.0 - v),))


def softplus(a: Tensor) -> Tensor:
    v = np.logaddexp(0.0, a.value)
    return _make(v, (a,), lambda g: (g * _sigmoid(a.value),))


def power(a: Tensor, k: float) -> Tensor:
    v = a.value**k
    return _make(v, (a,), lambda g: (g * k * a.value ** (k - 1),))


def square(a: Tensor) -> Tensor:
    return _make(a.value**2, (a,), lambda g: (2.0 * g * a.value,))


def relu(a: Tensor) -> Tensor:
    return _make(np.maximum(a.value, 0.0), (a,), lambda g: (g * (a.value > 0),))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.value >= b.value
    return _make(
        np.where(pick_a, a.value, b.value),
        (a, b),
        lambda g: (unbroadcast(np.where(pick_a, g, 0.0), a.shape), unbroadcast(np.where(pick_a, 0.0, g), b.shape)),
    )


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.value <= b.value
    return _make(
        np.where(pick_a, a.value, b.value),
        (a, b),
        lambda g: (unbroadcast(np.where(pick_a, g, 0.0), a.shape), unbroadcast(np.where(pick_a, 0.0, g), b.shape)),
    )


# shape ---------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    if a.shape == tuple(shape):
        return a
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if axes == tuple(range(a.ndim)):
        return a
    inv = np.argsort(axes)
    return _make(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    if a.shape == tuple(shape):
        return a
    return _make(np.broadcast_to(a.value, shape), (a,), lambda g: (unbroadcast(g, a.shape),))


def getitem(a: Tensor, idx) -> Tensor:
    def back(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.value[idx], (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.value for t in tensors], axis=axis), tensors, back)


# reductions ----------------------------------------------------------------


def sum_(a: Tensor, axis=None) -> Tensor:
    v = a.value.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(v, (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.value.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def max_(a: Tensor, axis: int) -> Tensor:
    """Max along ``axis``; the gradient goes to the first maximal element."""
    idx = np.argmax(a.value, axis=axis)
    v = np.take_along_axis(a.value, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        out = np.zeros_like(a.value)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (out,)

    return _make(v, (a,), back)


def geometric_mean(a: Tensor, axis: int, floor: float) -> Tensor:
    """``(prod a)^(1/n)`` along ``axis`` computed as ``exp(mean(log a))``.

    Values below ``floor`` are floored inside the log; a slice that contains
    an exact zero yields exactly zero so that Boolean inputs stay exact.
    """
    x = a.value
    n = x.shape[axis]
    xf = np.maximum(x, floor)
    v = np.exp(np.log(xf).mean(axis=axis))
    zero = (x <= 0.0).any(axis=axis)
    v = np.where(zero, 0.0, v)

    def back(g):
        gv = np.expand_dims(g * v, axis) / (n * xf)
        return (np.where(x >= floor, gv, 0.0),)

    return _make(v, (a,), back)


def power_mean(a: Tensor, axis: int, k: float) -> Tensor:
    """``(mean a^k)^(1/k)``."""
    if k == 1.0:
        return mean(a, axis)
    m = mean(power(a, k), axis)
    x = m.value
    v = x ** (1.0 / k)

    def back(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(x > 0, (1.0 / k) * x ** (1.0 / k - 1.0), 0.0)
        return (g * d,)

    return _make(v, (m,), back)


# linear algebra ------------------------------------------------------------


def affine(x: Tensor, V: Tensor, b: Tensor) -> Tensor:
    """``x @ V.T + b`` for ``x`` of shape (..., L), ``V`` (D, L), ``b`` (D,)."""
    lead = x.shape[:-1]
    X = x.value.reshape(-1, x.shape[-1])
    out = X @ V.value.T + b.value

    def back(g):
        G = g.reshape(-1, V.shape[0])
        return ((G @ V.value).reshape(x.shape), G.T @ X, G.sum(axis=0))

    return _make(out.reshape(*lead, V.shape[0]), (x, V, b), back)


def ntn(x: Tensor, W: Tensor, V: Tensor, b: Tensor, U: Tensor) -> Tensor:
    """Bilinear-tensor predicate ``sigmoid(U . tanh(x^T W[1:K] x + V x + b))``.

    ``x`` has shape (..., L), ``W`` (K, L, L), ``V`` (K, L), ``b`` (K,), ``U`` (K,).
    Returns shape (...).
    """
    lead = x.shape[:-1]
    L = x.shape[-1]
    X = x.value.reshape(-1, L)
    K = W.shape[0]
    XW = np.einsum("nl,klm->nkm", X, W.value, optimize=True)  # (N, K, L)
    z = np.einsum("nkm,nm->nk", XW, X) + X @ V.value.T + b.value
    h = np.tanh(z)
    s = _sigmoid(h @ U.value)

    def back(g):
        gs = g.reshape(-1) * s * (1.0 - s)  # (N,)
        gU = h.T @ gs
        dz = gs[:, None] * U.value[None, :] * (1.0 - h * h)  # (N, K)
        gW = np.einsum("nk,nl,nm->klm", dz, X, X, optimize=True) if K else np.zeros_like(W.value)
        gV = dz.T @ X
        gb = dz.sum(axis=0)
        XWt = np.einsum("nl,kml->nkm", X, W.value, optimize=True)  # x^T W_k^T
        gX = np.einsum("nk,nkm->nm", dz, XW + XWt) + dz @ V.value
        return (gX.reshape(x.shape), gW, gV, gb, gU)

    return _make(s.reshape(lead), (x, W, V, b, U), back)
