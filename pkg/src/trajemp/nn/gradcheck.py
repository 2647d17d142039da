"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .layers import Parameter
from .tensor import Tensor


def numerical_grad(loss_fn: Callable[[], Tensor], param: Parameter, coords, eps: float) -> np.ndarray:
    out = np.empty(len(coords))
    flat = param.data.reshape(-1)
    for k, idx in enumerate(coords):
        orig = flat[idx]
        flat[idx] = orig + eps
        up = loss_fn().item()
        flat[idx] = orig - eps
        down = loss_fn().item()
        flat[idx] = orig
        out[k] = (up - down) / (2.0 * eps)
    return out


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None,
               inputs: Sequence[Tensor] = ()) -> float:
    """Largest relative error between reverse-mode and finite-difference gradients.

    The error for each parameter is ``|g_a - g_n| / max(|g_a| + |g_n|, 1e-12)``
    with norms taken over the checked coordinates. ``max_coords`` samples that
    many coordinates per tensor instead of sweeping all of them. Tensors in
    ``inputs`` (with ``requires_grad``) are checked the same way.
    """
    rng = rng or np.random.default_rng(0)
    targets = list(params) + list(inputs)
    for p in targets:
        p.grad = np.zeros_like(p.data)
    loss_fn().backward()
    analytic = [p.grad.reshape(-1).copy() for p in targets]

    worst = 0.0
    for p, ga in zip(targets, analytic):
        n = p.data.size
        if max_coords is None or n <= max_coords:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        gn = numerical_grad(loss_fn, p, coords, eps)
        ga = ga[coords]
        denom = max(np.linalg.norm(ga) + np.linalg.norm(gn), 1e-12)
        worst = max(worst, float(np.linalg.norm(ga - gn) / denom))
    for p in targets:
        p.grad = np.zeros_like(p.data)
    return worst
