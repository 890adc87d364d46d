"""Finite-difference checks for every differentiable primitive.

Each case builds random float64 inputs away from kinks (relu at 0, ties in
max/min) and a loss ``sum(op(inputs) * weights)`` so every output component
is exercised.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .gradcheck import grad_check
from .tensor import Tensor


def _away_from_zero(rng, shape, margin=0.2):
    x = rng.uniform(margin, 2.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape):
    """Values separated by at least 0.05 so argmax/argmin are stable under FD steps."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.05 + rng.uniform(0, 0.01, size=n)).reshape(shape)


def _cases() -> dict[str, Callable[[np.random.Generator], tuple[Callable, list[np.ndarray]]]]:
    c: dict[str, Callable] = {}
    c["add"] = lambda r: (lambda a, b: T.add(a, b), [r.normal(size=(3, 4)), r.normal(size=(4,))])
    c["sub"] = lambda r: (lambda a, b: T.sub(a, b), [r.normal(size=(2, 3)), r.normal(size=(2, 1))])
    c["mul"] = lambda r: (lambda a, b: T.mul(a, b), [r.normal(size=(2, 3, 4)), r.normal(size=(3, 1))])
    c["div"] = lambda r: (lambda a, b: T.div(a, b), [r.normal(size=(3, 4)), r.uniform(0.5, 2, size=(3, 4))])
    c["neg"] = lambda r: (T.neg, [r.normal(size=(5,))])
    c["scale"] = lambda r: (lambda a: T.scale(a, -1.7), [r.normal(size=(2, 5))])
    c["matmul"] = lambda r: (T.matmul, [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))])
    c["power"] = lambda r: (lambda a: T.power(a, 3.0), [r.normal(size=(6,))])
    c["exp"] = lambda r: (T.exp, [r.normal(size=(3, 3))])
    c["log"] = lambda r: (T.log, [r.uniform(0.3, 3, size=(3, 3))])
    c["relu"] = lambda r: (T.relu, [_away_from_zero(r, (4, 4))])
    c["gelu"] = lambda r: (T.gelu, [r.normal(size=(4, 4)) * 2])
    c["softplus"] = lambda r: (T.softplus, [r.normal(size=(4, 4)) * 3])
    c["maximum"] = lambda r: _pair_separated(r, T.maximum)
    c["minimum"] = lambda r: _pair_separated(r, T.minimum)
    c["sum"] = lambda r: (lambda a: T.sum(a, axis=1), [r.normal(size=(3, 4, 2))])
    c["mean"] = lambda r: (lambda a: T.mean(a, axis=-1, keepdims=True), [r.normal(size=(3, 4))])
    c["amax"] = lambda r: (lambda a: T.amax(a, axis=1), [_distinct(r, (3, 5, 2))])
    c["amin"] = lambda r: (lambda a: T.amin(a, axis=0), [_distinct(r, (4, 3))])
    c["reshape"] = lambda r: (lambda a: T.reshape(a, (6, 2)), [r.normal(size=(3, 4))])
    c["transpose"] = lambda r: (lambda a: T.transpose(a, (2, 0, 1)), [r.normal(size=(2, 3, 4))])
    c["getitem"] = lambda r: (lambda a: T.getitem(a, (np.array([0, 2, 2]), slice(1, 3))), [r.normal(size=(3, 4))])
    c["embedding"] = lambda r: (lambda a: T.embedding(a, [1, 0, 1, 3]), [r.normal(size=(4, 3))])
    c["concat"] = lambda r: (lambda a, b: T.concat([a, b], axis=1), [r.normal(size=(2, 3)), r.normal(size=(2, 2))])
    c["softmax"] = lambda r: (lambda a: T.softmax(a, axis=-1), [r.normal(size=(3, 5)) * 2])
    c["layer_norm"] = lambda r: (T.layer_norm, [r.normal(size=(2, 3, 6)), r.normal(size=(6,)), r.normal(size=(6,))])
    return c


def _pair_separated(rng, op):
    a = rng.normal(size=(3, 4))
    b = a + _away_from_zero(rng, (3, 4), margin=0.1)
    return op, [a, b]


PRIMITIVE_CASES = _cases()


def check_primitive(name: str, seed: int, step: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    op, arrays = PRIMITIVE_CASES[name](rng)
    inputs = [Tensor(a.astype(np.float64)) for a in arrays]
    out_shape = op(*inputs).shape
    weights = Tensor(rng.normal(size=out_shape))
    return grad_check(lambda xs: T.sum(T.mul(op(*xs), weights)), inputs, step)


def run_primitive_checks(seeds=range(10), step: float = 1e-5) -> dict[str, float]:
    """Worst relative error per primitive over ``seeds``."""
    return {name: max(check_primitive(name, s, step) for s in seeds) for name in PRIMITIVE_CASES}
