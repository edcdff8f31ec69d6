"""Minimal reverse-mode automatic differentiation over numpy arrays.

Just the operations the attention classifier needs: elementwise arithmetic,
tanh/exp/log/clip, axis sums, reshape/broadcast/concatenate, two-operand
einsum, and integer gathers.  Graph construction is skipped entirely when no
input requires gradients, so the same forward code serves inference.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- helpers -----------------------------------------------------------

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(out_data)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor(out_data, True, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(out_data)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor(out_data, True, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data
        if not (self.requires_grad or other.requires_grad):
            return Tensor(out_data)

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / other.data**2, other.shape)
                )

        return Tensor(out_data, True, (self, other), backward)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    # -- elementwise --------------------------------------------------------

    def tanh(self):
        out_data = np.tanh(self.data)
        if not self.requires_grad:
            return Tensor(out_data)

        def backward(g):
            self._accumulate(g * (1.0 - out_data**2))

        return Tensor(out_data, True, (self,), backward)

    def exp(self):
        out_data = np.exp(self.data)
        if not self.requires_grad:
            return Tensor(out_data)

        def backward(g):
            self._accumulate(g * out_data)

        return Tensor(out_data, True, (self,), backward)

    def log(self):
        out_data = np.log(self.data)
        if not self.requires_grad:
            return Tensor(out_data)

        def backward(g):
            self._accumulate(g / self.data)

        return Tensor(out_data, True, (self,), backward)

    def clip(self, lo: float, hi: float):
        out_data = np.clip(self.data, lo, hi)
        if not self.requires_grad:
            return Tensor(out_data)
        mask = (self.data > lo) & (self.data < hi)

        def backward(g):
            self._accumulate(g * mask)

        return Tensor(out_data, True, (self,), backward)

    # -- shape --------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        if not self.requires_grad:
            return Tensor(out_data)
        shape = self.shape

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, shape).copy())
                return
            gg = g
            if not keepdims:
                gg = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(gg, shape).copy())

        return Tensor(out_data, True, (self,), backward)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        if not self.requires_grad:
            return Tensor(out_data)
        orig = self.shape

        def backward(g):
            self._accumulate(g.reshape(orig))

        return Tensor(out_data, True, (self,), backward)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def broadcast_to(t: Tensor, shape) -> Tensor:
    out_data = np.broadcast_to(t.data, shape)
    if not t.requires_grad:
        return Tensor(out_data)

    def backward(g):
        t._accumulate(_unbroadcast(g, t.shape))

    return Tensor(out_data, True, (t,), backward)


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    if not any(p.requires_grad for p in parts):
        return Tensor(out_data)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(a, b)
                p._accumulate(g[tuple(idx)])

    return Tensor(out_data, True, tuple(parts), backward)


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; gradients derived by swapping subscripts.

    Every index of each operand must appear in the output or in the other
    operand (true for ordinary contractions without internal traces).
    """
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_sub = subscripts.split("->")
    a_sub, b_sub = lhs.split(",")
    out_data = np.einsum(subscripts, a.data, b.data)
    if not (a.requires_grad or b.requires_grad):
        return Tensor(out_data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.einsum(f"{out_sub},{b_sub}->{a_sub}", g, b.data))
        if b.requires_grad:
            b._accumulate(np.einsum(f"{out_sub},{a_sub}->{b_sub}", g, a.data))

    return Tensor(out_data, True, (a, b), backward)


def gather_rows(t: Tensor, idx: np.ndarray) -> Tensor:
    """out[i] = t[idx[i]] over axis 0."""
    idx = np.asarray(idx, dtype=np.intp)
    out_data = t.data[idx]
    if not t.requires_grad:
        return Tensor(out_data)
    shape = t.shape

    def backward(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx, g)
        t._accumulate(gt)

    return Tensor(out_data, True, (t,), backward)


def index_select1(t: Tensor, idx: np.ndarray) -> Tensor:
    """out[i, ...] = t[i, idx[i], ...]; selects along axis 1."""
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(idx.size)
    out_data = t.data[rows, idx]
    if not t.requires_grad:
        return Tensor(out_data)
    shape = t.shape

    def backward(g):
        gt = np.zeros(shape)
        np.add.at(gt, (rows, idx), g)
        t._accumulate(gt)

    return Tensor(out_data, True, (t,), backward)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable log-softmax (max subtraction as a constant shift)."""
    shift = Tensor(np.max(t.data, axis=axis, keepdims=True))
    y = t - shift
    lse = y.exp().sum(axis=axis, keepdims=True).log()
    return y - lse
