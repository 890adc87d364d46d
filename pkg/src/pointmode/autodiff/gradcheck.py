from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(f: Callable[[], Tensor], x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``x.data``."""
    out = np.zeros_like(x.data)
    flat, gflat = x.data.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f().item()
        flat[i] = orig - step
        lo = f().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return out


def grad_check(f: Callable, x: Tensor | Sequence[Tensor], step: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``f`` is called with ``x`` exactly as passed and must return a scalar
    Tensor. The error per component is ``|a - n| / max(1, |a|)``.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        if t.dtype != np.float64:
            raise TypeError("grad_check requires float64 tensors")
        t.requires_grad = True
        t.grad = None
    loss = f(x)
    backward(loss, xs)
    worst = 0.0
    for t in xs:
        analytic = t.grad.copy()
        numeric = numeric_grad(lambda: f(x), t, step)
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
