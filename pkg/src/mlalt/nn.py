"""Parameterized layers built on the tensor core.

Weights are initialized from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) using the
generator handed to the constructor; biases start at zero and layer-norm gains
at one.
"""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = zeros_param((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = zeros_param((d,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, padding: int,
                 rng: np.random.Generator):
        self.kernels = uniform_init(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel)
        self.bias = zeros_param((c_out,))
        self.stride = stride
        self.padding = padding
        self.kernel = kernel

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernels, self.bias, self.stride, self.padding)

    def output_size(self, n: int) -> int:
        return T.conv_output_size(n, self.kernel, self.stride, self.padding)


class Embedding(Module):
    def __init__(self, num: int, dim: int, rng: np.random.Generator):
        self.table = uniform_init(rng, (num, dim), dim)

    def __call__(self, ids) -> Tensor:
        return T.embedding_lookup(self.table, ids)


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((length, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float, rng: np.random.Generator):
        if d_model % n_heads:
            raise ConfigError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)
        self.dropout = dropout

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return T.transpose(T.reshape(x, (b, n, self.n_heads, self.d_head)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, memory: Tensor, mask: Optional[np.ndarray],
                 rng: Optional[np.random.Generator] = None) -> Tensor:
        """``mask`` is boolean, True where attention is blocked; broadcastable to B x 1 x Tq x Tk."""
        b, tq, d = query.shape
        q = self._split(self.q(query))
        k = self._split(self.k(memory))
        v = self._split(self.v(memory))
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(self.d_head))
        if mask is not None:
            scores = T.masked_fill(scores, mask, -1e9)
        weights = T.dropout(T.softmax(scores, axis=-1), self.dropout, rng, self.training)
        ctx = T.matmul(weights, v)
        ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, tq, d))
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, d_model: int, ff_dim: int, dropout: float, rng: np.random.Generator):
        self.fc1 = Linear(d_model, ff_dim, rng)
        self.fc2 = Linear(ff_dim, d_model, rng)
        self.dropout = dropout

    def __call__(self, x: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        hidden = T.dropout(T.relu(self.fc1(x)), self.dropout, rng, self.training)
        return self.fc2(hidden)


class EncoderLayer(Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, d_model: int, n_heads: int, ff_dim: int, dropout: float, rng):
        self.norm1 = LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, n_heads, dropout, rng)
        self.norm2 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, ff_dim, dropout, rng)
        self.dropout = dropout

    def __call__(self, x: Tensor, mask, rng=None) -> Tensor:
        y = self.norm1(x)
        x = x + T.dropout(self.attn(y, y, mask, rng), self.dropout, rng, self.training)
        x = x + T.dropout(self.ff(self.norm2(x), rng), self.dropout, rng, self.training)
        return x


class DecoderLayer(Module):
    """Pre-norm causal self-attention, cross-attention, feed-forward."""

    def __init__(self, d_model: int, n_heads: int, ff_dim: int, dropout: float, rng):
        self.norm1 = LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, n_heads, dropout, rng)
        self.norm2 = LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, dropout, rng)
        self.norm3 = LayerNorm(d_model)
        self.ff = FeedForward(d_model, ff_dim, dropout, rng)
        self.dropout = dropout

    def __call__(self, x: Tensor, memory: Tensor, self_mask, memory_mask, rng=None) -> Tensor:
        y = self.norm1(x)
        x = x + T.dropout(self.self_attn(y, y, self_mask, rng), self.dropout, rng, self.training)
        x = x + T.dropout(self.cross_attn(self.norm2(x), memory, memory_mask, rng),
                          self.dropout, rng, self.training)
        x = x + T.dropout(self.ff(self.norm3(x), rng), self.dropout, rng, self.training)
        return x
