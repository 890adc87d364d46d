"""AdamW with decoupled weight decay."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamWState:
    lr: float = 1e-3
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.lr < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ValueError("lr and weight_decay must be >= 0 and eps > 0")


def adamw_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamWState,
               lr: float | None = None) -> None:
    """One in-place AdamW update of ``params``.

    Decay is applied first (``p -= lr * wd * p``), then the bias-corrected
    Adam step. ``lr`` overrides ``state.lr`` for scheduled learning rates.
    """
    if len(params) != len(grads):
        raise ShapeError(f"adamw_step: {len(params)} params but {len(grads)} grads")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError(f"adamw_step: optimizer holds {len(state.m)} slots for {len(params)} params")
    lr = state.lr if lr is None else lr
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ShapeError(f"adamw_step: param {p.shape} vs grad {g.shape} vs slot {m.shape}")
        p -= lr * state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class AdamW:
    """Binds an :class:`AdamWState` to a fixed list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr=1e-3, weight_decay=0.05, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamWState(lr=lr, weight_decay=weight_decay, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adamw_step([p.data for p in self.params], grads, self.state, lr)


def cosine_lr(base: float, step: int, total: int, floor: float = 0.0) -> float:
    if total <= 0:
        return base
    frac = min(step, total) / total
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * frac))
