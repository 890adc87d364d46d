"""Small layer library composed from the tensor primitives.

Attention is written out of matmul/softmax/scale rather than fused, so the
gradient checks on those primitives cover it as well.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Parameter container; names follow attribute insertion order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, list) and val and isinstance(val[0], Module):
                for i, sub in enumerate(val):
                    yield from sub.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(np.sum([p.data.size for p in self.parameters()]))


def _param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float64, bias: bool = True):
        std = np.sqrt(2.0 / (n_in + n_out))
        self.weight = _param(rng.normal(0.0, std, size=(n_in, n_out)).astype(dtype))
        self.bias = _param(np.zeros(n_out, dtype=dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-5):
        self.gamma = _param(np.ones(dim, dtype=dtype))
        self.beta = _param(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Linear -> GELU -> Linear."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng, dtype=np.float64):
        self.fc1 = Linear(n_in, hidden, rng, dtype)
        self.fc2 = Linear(hidden, n_out, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, m, c = x.shape
    return x.reshape(b, m, heads, c // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    b, h, m, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, m, h * d)


def attend(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(q.shape[-1]))
    return T.softmax(scores, axis=-1) @ v


class Attention(Module):
    """Multi-head self-attention over (batch, tokens, channels)."""

    def __init__(self, dim: int, heads: int, rng, dtype=np.float64):
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng, dtype)
        self.proj = Linear(dim, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        b, m, c = x.shape
        qkv = self.qkv(x).reshape(b, m, 3, self.heads, c // self.heads).transpose(2, 0, 3, 1, 4)
        out = attend(qkv[0], qkv[1], qkv[2])
        return self.proj(_merge_heads(out))


class CrossAttention(Module):
    def __init__(self, dim: int, heads: int, rng, dtype=np.float64):
        if dim % heads:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng, dtype)
        self.kv = Linear(dim, 2 * dim, rng, dtype)
        self.proj = Linear(dim, dim, rng, dtype)

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        b, n, c = memory.shape
        q = _split_heads(self.q(x), self.heads)
        kv = self.kv(memory).reshape(b, n, 2, self.heads, c // self.heads).transpose(2, 0, 3, 1, 4)
        return self.proj(_merge_heads(attend(q, kv[0], kv[1])))


class EncoderLayer(Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim: int, heads: int, rng, dtype=np.float64, mlp_ratio: int = 4):
        self.norm1 = LayerNorm(dim, dtype)
        self.attn = Attention(dim, heads, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype)
        self.mlp = MLP(dim, mlp_ratio * dim, dim, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class DecoderLayer(Module):
    """Pre-norm block: self-attention, cross-attention to memory, feed-forward."""

    def __init__(self, dim: int, heads: int, rng, dtype=np.float64, mlp_ratio: int = 4):
        self.norm1 = LayerNorm(dim, dtype)
        self.self_attn = Attention(dim, heads, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype)
        self.norm_mem = LayerNorm(dim, dtype)
        self.cross_attn = CrossAttention(dim, heads, rng, dtype)
        self.norm3 = LayerNorm(dim, dtype)
        self.mlp = MLP(dim, mlp_ratio * dim, dim, rng, dtype)

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        x = x + self.self_attn(self.norm1(x))
        x = x + self.cross_attn(self.norm2(x), self.norm_mem(memory))
        return x + self.mlp(self.norm3(x))


class Transformer(Module):
    """Stack of encoder layers followed by a final LayerNorm."""

    def __init__(self, dim: int, depth: int, heads: int, rng, dtype=np.float64, mlp_ratio: int = 4):
        self.layers = [EncoderLayer(dim, heads, rng, dtype, mlp_ratio) for _ in range(depth)]
        self.norm = LayerNorm(dim, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)
