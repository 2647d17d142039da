"""Parameterised layers built on the tensor primitives."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable tensor plus the optimizer state that travels with it."""

    __slots__ = ("name", "moment1", "moment2", "step_count")

    def __init__(self, value, name: str = ""):
        super().__init__(value, requires_grad=True, op="param")
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.moment1 = np.zeros_like(self.data)
        self.moment2 = np.zeros_like(self.data)
        self.step_count = 0

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            name = f"{prefix}.{key}" if prefix else key
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def _uniform(rng: np.random.Generator, shape, fan_in: int, gain: float) -> np.ndarray:
    limit = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Affine(Module):
    """y = x W + b with W of shape (n_in, n_out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None,
                 gain: float = 1.0, zero: bool = False):
        self.n_in, self.n_out = n_in, n_out
        if zero or rng is None:
            w = np.zeros((n_in, n_out))
        else:
            w = _uniform(rng, (n_in, n_out), n_in, gain)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"Affine({self.n_in}->{self.n_out}) got input of shape {x.shape}")
        return T.matmul(x, self.weight) + self.bias


class Conv2D(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1, padding: int = 0,
                 rng: np.random.Generator | None = None, gain: float = 1.0):
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.padding = kernel, stride, padding
        fan_in = c_in * kernel * kernel
        shape = (c_out, c_in, kernel, kernel)
        self.weight = Parameter(np.zeros(shape) if rng is None else _uniform(rng, shape, fan_in, gain))
        self.bias = Parameter(np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ValueError(f"Conv2D({self.c_in}->{self.c_out}) got input of shape {x.shape}")
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class LSTMCell(Module):
    """Gated recurrent cell with cell state.

    Pre-activations are ``x @ w_input + h @ w_hidden + bias`` with the 4H
    columns laid out as [input gate | forget gate | candidate | output gate].
    """

    def __init__(self, n_in: int, hidden: int = 256, rng: np.random.Generator | None = None):
        self.n_in, self.hidden = n_in, hidden
        if rng is None:
            wx = np.zeros((n_in, 4 * hidden))
            wh = np.zeros((hidden, 4 * hidden))
        else:
            wx = _uniform(rng, (n_in, 4 * hidden), n_in, 1.0)
            blocks = []
            for _ in range(4):
                q, r = np.linalg.qr(rng.standard_normal((hidden, hidden)))
                blocks.append(q * np.sign(np.diag(r)))
            wh = np.concatenate(blocks, axis=1)
        self.w_input = Parameter(wx)
        self.w_hidden = Parameter(wh)
        self.bias = Parameter(np.zeros(4 * hidden))

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"LSTMCell({self.n_in}->{self.hidden}) got input of shape {x.shape}")
        H = self.hidden
        pre = T.matmul(x, self.w_input) + T.matmul(h, self.w_hidden) + self.bias
        i = T.sigmoid(pre[:, :H])
        f = T.sigmoid(pre[:, H : 2 * H])
        g = T.tanh(pre[:, 2 * H : 3 * H])
        o = T.sigmoid(pre[:, 3 * H :])
        c_new = f * c + i * g
        h_new = o * T.tanh(c_new)
        h_new.op = "lstm_h"
        return h_new, c_new


class ReLU(Module):
    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(x)


class Sigmoid(Module):
    def __call__(self, x: Tensor) -> Tensor:
        return T.sigmoid(x)


class Softmax(Module):
    """Softmax over the last axis."""

    def __call__(self, x: Tensor) -> Tensor:
        return T.softmax(x)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x
