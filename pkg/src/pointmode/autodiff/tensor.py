"""Reverse-mode automatic differentiation over numpy arrays.

Every primitive builds a :class:`Tensor` node that remembers its parents and
an op name. Gradient rules live in :data:`BACKWARD`, keyed by op name and
looked up at backward time, so a rule can be swapped out (the grad-check
fault-injection fixture relies on this).
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Tensor", "NonFiniteError", "ShapeError", "BACKWARD", "backward",
    "add", "sub", "mul", "div", "neg", "scale", "matmul", "power", "exp", "log",
    "relu", "gelu", "softplus", "maximum", "minimum", "sum", "mean", "amax", "amin",
    "reshape", "transpose", "getitem", "concat", "softmax", "layer_norm",
    "embedding", "stop_gradient",
]


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "ctx", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self.ctx = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return amax(self, axis, keepdims)

    def min(self, axis=None, keepdims=False):
        return amin(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


BACKWARD: dict[str, Callable[[Tensor, np.ndarray], tuple]] = {}


def _rule(name: str):
    def register(fn):
        BACKWARD[name] = fn
        return fn
    return register


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _node(op: str, data: np.ndarray, parents: Sequence[Tensor], ctx=None) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.ctx = ctx
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("add", a, b)
    return _node("add", a.data + b.data, (a, b))


@_rule("add")
def _add_back(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("sub", a, b)
    return _node("sub", a.data - b.data, (a, b))


@_rule("sub")
def _sub_back(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def mul(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("mul", a, b)
    return _node("mul", a.data * b.data, (a, b))


@_rule("mul")
def _mul_back(node, g):
    a, b = node.parents
    return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)


def div(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("div", a, b)
    return _node("div", a.data / b.data, (a, b))


@_rule("div")
def _div_back(node, g):
    a, b = node.parents
    return (_unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape))


def maximum(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("maximum", a, b)
    return _node("maximum", np.maximum(a.data, b.data), (a, b))


@_rule("maximum")
def _maximum_back(node, g):
    a, b = node.parents
    pick_a = a.data >= b.data  # ties route to the first argument
    return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)


def minimum(a, b) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    _check_broadcast("minimum", a, b)
    return _node("minimum", np.minimum(a.data, b.data), (a, b))


@_rule("minimum")
def _minimum_back(node, g):
    a, b = node.parents
    pick_a = a.data <= b.data
    return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)


# -- elementwise unary -------------------------------------------------

def neg(x: Tensor) -> Tensor:
    return _node("neg", -x.data, (x,))


@_rule("neg")
def _neg_back(node, g):
    return (-g,)


def scale(x: Tensor, factor: float) -> Tensor:
    return _node("scale", x.data * factor, (x,), factor)


@_rule("scale")
def _scale_back(node, g):
    return (g * node.ctx,)


def power(x: Tensor, p: float) -> Tensor:
    return _node("power", x.data ** p, (x,), p)


@_rule("power")
def _power_back(node, g):
    (x,), p = node.parents, node.ctx
    return (g * p * x.data ** (p - 1),)


def exp(x: Tensor) -> Tensor:
    return _node("exp", np.exp(x.data), (x,))


@_rule("exp")
def _exp_back(node, g):
    return (g * node.data,)


def log(x: Tensor) -> Tensor:
    return _node("log", np.log(x.data), (x,))


@_rule("log")
def _log_back(node, g):
    return (g / node.parents[0].data,)


def relu(x: Tensor) -> Tensor:
    return _node("relu", np.maximum(x.data, 0), (x,))


@_rule("relu")
def _relu_back(node, g):
    return (g * (node.parents[0].data > 0),)


_SQRT1_2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    return _node("gelu", 0.5 * x.data * (1.0 + erf(x.data * _SQRT1_2)), (x,))


@_rule("gelu")
def _gelu_back(node, g):
    x = node.parents[0].data
    cdf = 0.5 * (1.0 + erf(x * _SQRT1_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (g * (cdf + x * pdf),)


def softplus(x: Tensor) -> Tensor:
    d = x.data
    return _node("softplus", np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d))), (x,))


@_rule("softplus")
def _softplus_back(node, g):
    return (g * expit(node.parents[0].data),)


def stop_gradient(x: Tensor) -> Tensor:
    """Identity forward; contributes nothing to ancestors on backward."""
    out = Tensor(x.data)
    out.op = "stop_gradient"
    return out


# -- matmul ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a, b if isinstance(b, Tensor) else None), _lift(b, a if isinstance(a, Tensor) else None)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    return _node("matmul", a.data @ b.data, (a, b))


@_rule("matmul")
def _matmul_back(node, g):
    a, b = node.parents
    ga = g @ np.swapaxes(b.data, -1, -2)
    gb = np.swapaxes(a.data, -1, -2) @ g
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


# -- reductions --------------------------------------------------------

def _expand(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    return _node("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), (axis, keepdims))


@_rule("sum")
def _sum_back(node, g):
    axis, keepdims = node.ctx
    return (_expand(g, node.parents[0].shape, axis, keepdims).copy(),)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    return _node("mean", np.mean(x.data, axis=axis, keepdims=keepdims), (x,), (axis, keepdims))


@_rule("mean")
def _mean_back(node, g):
    axis, keepdims = node.ctx
    x = node.parents[0]
    count = x.data.size // max(node.data.size, 1)
    return (_expand(g, x.shape, axis, keepdims) / count,)


def _extremum(op: str, pick, x: Tensor, axis, keepdims) -> Tensor:
    if axis is None:
        flat = pick(x.data.reshape(-1))
        idx = np.unravel_index(flat, x.shape)
        out = x.data[idx]
        if keepdims:
            out = out.reshape((1,) * x.ndim)
        return _node(op, np.asarray(out), (x,), (axis, keepdims, idx))
    axis = axis % x.ndim
    idx = np.expand_dims(pick(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis)
    if not keepdims:
        out = np.squeeze(out, axis)
    return _node(op, out, (x,), (axis, keepdims, idx))


def _extremum_back(node, g):
    axis, keepdims, idx = node.ctx
    x = node.parents[0]
    gx = np.zeros(x.shape, dtype=g.dtype)
    if axis is None:
        gx[idx] = g.reshape(())
    else:
        if not keepdims:
            g = np.expand_dims(g, axis)
        np.put_along_axis(gx, idx, g, axis)
    return (gx,)


def amax(x: Tensor, axis=None, keepdims=False) -> Tensor:
    """Max reduction; the gradient flows to the first maximal entry only."""
    return _extremum("amax", np.argmax, x, axis, keepdims)


def amin(x: Tensor, axis=None, keepdims=False) -> Tensor:
    return _extremum("amin", np.argmin, x, axis, keepdims)


BACKWARD["amax"] = _extremum_back
BACKWARD["amin"] = _extremum_back


# -- shape manipulation ------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _node("reshape", out, (x,))


@_rule("reshape")
def _reshape_back(node, g):
    return (g.reshape(node.parents[0].shape),)


def transpose(x: Tensor, axes=None) -> Tensor:
    return _node("transpose", np.transpose(x.data, axes), (x,), axes)


@_rule("transpose")
def _transpose_back(node, g):
    axes = node.ctx
    inv = None if axes is None else np.argsort(axes)
    return (np.transpose(g, inv),)


def getitem(x: Tensor, index) -> Tensor:
    return _node("getitem", x.data[index], (x,), index)


@_rule("getitem")
def _getitem_back(node, g):
    x = node.parents[0]
    gx = np.zeros(x.shape, dtype=g.dtype)
    np.add.at(gx, node.ctx, g)
    return (gx,)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; repeated ids accumulate gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    return _node("embedding", table.data[ids], (table,), ids)


@_rule("embedding")
def _embedding_back(node, g):
    table = node.parents[0]
    gt = np.zeros(table.shape, dtype=g.dtype)
    np.add.at(gt, node.ctx, g)
    return (gt,)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref.shape} and {t.shape} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    return _node("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, (ax, sizes))


@_rule("concat")
def _concat_back(node, g):
    ax, sizes = node.ctx
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=ax))


# -- normalisation -----------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return _node("softmax", e / e.sum(axis=axis, keepdims=True), (x,), axis)


@_rule("softmax")
def _softmax_back(node, g):
    y, axis = node.data, node.ctx
    return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply the affine ``gamma``/``beta``."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return _node("layer_norm", xhat * gamma.data + beta.data, (x, gamma, beta), (xhat, inv))


@_rule("layer_norm")
def _layer_norm_back(node, g):
    x, gamma, _ = node.parents
    xhat, inv = node.ctx
    n = x.shape[-1]
    dxhat = g * gamma.data
    dx = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
    lead = tuple(range(g.ndim - 1))
    return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)


# -- reverse pass ------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Sequence[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    ``params`` that the loss does not reach receive a zero gradient so that
    callers can treat every parameter uniformly.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
        for node in reversed(_topo(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, BACKWARD[node.op](node, g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=parent.dtype)
                if pg.shape != parent.shape:
                    raise ShapeError(f"backward rule '{node.op}' returned shape {pg.shape} for {parent.shape}")
                if not np.all(np.isfinite(pg)):
                    raise NonFiniteError(f"non-finite gradient produced by the backward rule of '{node.op}'")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    for p in params or ():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
