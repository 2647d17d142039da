"""Dense float64 tensors with a recorded graph for reverse-mode differentiation.

Every primitive op returns a new :class:`Tensor` holding its parents and a
closure that pushes the output gradient back into them. Calling
:meth:`Tensor.backward` on a scalar walks that graph in reverse topological
order. Inside :func:`no_grad` nothing is recorded, which is what rollout
collection uses.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | float | None = None) -> None:
        """Back-propagate from this tensor; defaults to d(self)/d(self) = 1 for scalars."""
        if not self.requires_grad:
            raise RuntimeError(
                f"backward() on a tensor with no recorded graph (op={self.op!r}); "
                "run a forward pass with gradients enabled first"
            )
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match output shape {self.shape}")

        order = topological_order(self)
        # intermediate gradients are scratch; leaves (parameters, inputs) keep accumulating
        for node in order:
            if node._parents:
                node.grad = None
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data, op=op)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), backward, "neg")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return _make(a.data * mask, (a,), backward, "relu")


_sigmoid = expit


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    return _make(s, (a,), backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - t * t))

    return _make(t, (a,), backward, "tanh")


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def backward(g):
        a._accumulate(g * e)

    return _make(e, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward, "log")


def square(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(2.0 * g * a.data)

    return _make(a.data * a.data, (a,), backward, "square")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        a._accumulate(g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), backward, "clip")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    take_a = a.data <= b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return _make(np.where(take_a, a.data, b.data), (a, b), backward, "minimum")


# ---------------------------------------------------------------- reductions and shape


def tsum(a: Tensor, axis=None) -> Tensor:
    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _make(np.asarray(a.data.sum(axis=axis)), (a,), backward, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def getitem(a: Tensor, idx) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        if _fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        a._accumulate(full)

    return _make(a.data[idx], (a,), backward, "getitem")


def _fancy(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, backward, "concat")


def take_last(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather ``a[..., index[...]]`` along the last axis (index has a's shape minus that axis)."""
    idx = np.asarray(index)[..., None]

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        a._accumulate(full)

    return _make(np.take_along_axis(a.data, idx, axis=-1)[..., 0], (a,), backward, "take")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax over the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        a._accumulate(g - p * g.sum(axis=-1, keepdims=True))

    return _make(out, (a,), backward, "log_softmax")


def softmax(a: Tensor) -> Tensor:
    return exp(log_softmax(a))


def log_sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = -np.logaddexp(0.0, -x)

    def backward(g):
        a._accumulate(g * _sigmoid(-x))

    return _make(out, (a,), backward, "log_sigmoid")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation on NCHW input with an (out, in, k, k) kernel."""
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d kernel {k} does not fit input {h}x{wd} with padding {padding}")
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    wmat = w.data.reshape(o, -1)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        if w.requires_grad:
            w._accumulate((gm.T @ cols).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(gm.sum(axis=0))
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(n, ho, wo, c, k, k)
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                        :, :, :, :, i, j
                    ].transpose(0, 3, 1, 2)
            x._accumulate(dxp[:, :, padding : padding + h, padding : padding + wd])

    return _make(np.ascontiguousarray(out), parents, backward, "conv2d")
