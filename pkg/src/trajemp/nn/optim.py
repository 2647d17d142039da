"""Adam with global gradient-norm clipping."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .layers import Parameter


class NonFiniteGradient(FloatingPointError):
    pass


def global_grad_norm(params: Sequence[Parameter]) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params))


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 7e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-5, max_grad_norm: float | None = 0.5):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.max_grad_norm = max_grad_norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> float:
        """Clip, update, zero the gradients. Returns the pre-clip gradient norm."""
        norm = global_grad_norm(self.params)
        if not math.isfinite(norm):
            bad = [p.name or f"#{i}" for i, p in enumerate(self.params) if not np.all(np.isfinite(p.grad))]
            self.zero_grad()
            raise NonFiniteGradient(f"non-finite gradient in {bad}; update skipped")
        scale = 1.0
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            scale = self.max_grad_norm / (norm + 1e-12)
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            g = p.grad
            if scale != 1.0:
                g *= scale
            p.step_count += 1
            p.moment1 *= b1
            p.moment1 += (1.0 - b1) * g
            g *= g
            p.moment2 *= b2
            p.moment2 += (1.0 - b2) * g
            step_size = self.lr / (1.0 - b1 ** p.step_count)
            denom = np.sqrt(p.moment2 / (1.0 - b2 ** p.step_count))
            denom += self.eps
            p.data -= step_size * (p.moment1 / denom)
            p.grad = np.zeros_like(p.data)
        return norm
