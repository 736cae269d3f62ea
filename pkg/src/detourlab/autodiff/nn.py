"""Parameter containers and the transformer building blocks."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import (
    ShapeMismatch,
    Tensor,
    as_dtype,
    gelu,
    layer_norm,
    masked_fill,
    matmul,
    reshape,
    softmax,
    swapaxes,
)

NEG_INF = -1e9


class Module:
    """Tree of named parameters discovered from instance attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key in sorted(vars(self)):
            val = vars(self)[key]
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def astype(self, dtype) -> "Module":
        dt = as_dtype(dtype)
        for p in self.parameters().values():
            p.data = p.data.astype(dt)
            p.grad = None
        return self

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"missing tensors: {sorted(missing)[:5]}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ShapeMismatch(f"{name}: stored {arrays[name].shape} vs model {p.shape}")
            p.data = np.array(arrays[name], dtype=arrays[name].dtype, copy=True)


def param(shape, rng: np.random.Generator, std: float, dtype, name: str | None = None) -> Tensor:
    data = rng.standard_normal(shape) * std if std > 0 else np.zeros(shape)
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng, dtype="f32", bias: bool = True, std=None):
        self.weight = param((n_in, n_out), rng, std if std is not None else 1 / math.sqrt(n_in), dtype)
        self.bias = param((n_out,), rng, 0.0, dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeMismatch(f"Linear expects last dim {self.weight.shape[0]}, got {x.shape}")
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, dtype="f32"):
        self.gamma = Tensor(np.ones(d), requires_grad=True, dtype=dtype)
        self.beta = Tensor(np.zeros(d), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, axis=-1)


def attention_mask(t_q: int, t_k: int, causal: bool, key_padding=None):
    """Boolean mask (True = blocked) broadcastable to [..., heads, t_q, t_k]."""
    mask = None
    if causal:
        # query i sits at absolute position (t_k - t_q + i) when queries are a suffix of keys
        off = t_k - t_q
        mask = np.triu(np.ones((t_q, t_k), dtype=bool), k=off + 1)
    if key_padding is not None:
        kp = np.asarray(key_padding, dtype=bool)[..., None, None, :]
        mask = kp if mask is None else (mask | kp)
    return mask


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, causal: bool = False,
                         key_padding=None, return_weights: bool = False):
    """Scaled dot-product attention split over ``heads``.

    ``q`` is [..., Tq, d], ``k``/``v`` are [..., Tk, d]; inputs are already
    projected. ``key_padding`` is a [..., Tk] bool array marking padded keys.
    """
    d = q.shape[-1]
    if d % heads:
        raise ShapeMismatch(f"model dim {d} not divisible by {heads} heads")
    if k.shape[-1] != d or v.shape != k.shape:
        raise ShapeMismatch(f"attention operands q{q.shape} k{k.shape} v{v.shape}")
    dh = d // heads
    lead_q, lead_k = q.shape[:-2], k.shape[:-2]
    t_q, t_k = q.shape[-2], k.shape[-2]

    def split(x, lead, t):
        return swapaxes(reshape(x, lead + (t, heads, dh)), -2, -3)  # [..., h, T, dh]

    qh, kh, vh = split(q, lead_q, t_q), split(k, lead_k, t_k), split(v, lead_k, t_k)
    scores = matmul(qh, swapaxes(kh, -1, -2)) * (1.0 / math.sqrt(dh))
    mask = attention_mask(t_q, t_k, causal, key_padding)
    if mask is not None:
        scores = masked_fill(scores, mask, NEG_INF)
    weights = softmax(scores, axis=-1)
    ctx = matmul(weights, vh)  # [..., h, Tq, dh]
    out = reshape(swapaxes(ctx, -2, -3), lead_q + (t_q, d))
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng, dtype="f32"):
        if d % heads:
            raise ShapeMismatch(f"model dim {d} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d, rng, dtype)
        # no key bias: it shifts every score in a row equally, so softmax ignores it
        self.k = Linear(d, d, rng, dtype, bias=False)
        self.v = Linear(d, d, rng, dtype)
        self.o = Linear(d, d, rng, dtype)

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor, causal: bool = False,
                 key_padding=None) -> Tensor:
        ctx = multi_head_attention(self.q(q_in), self.k(k_in), self.v(v_in), self.heads,
                                   causal=causal, key_padding=key_padding)
        return self.o(ctx)


class TransformerBlock(Module):
    """Pre-norm block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, d: int, heads: int, ffn_dim: int, rng, dtype="f32"):
        self.ln1 = LayerNorm(d, dtype)
        self.attn = MultiHeadAttention(d, heads, rng, dtype)
        self.ln2 = LayerNorm(d, dtype)
        self.fc1 = Linear(d, ffn_dim, rng, dtype)
        self.fc2 = Linear(ffn_dim, d, rng, dtype, std=1 / math.sqrt(ffn_dim))

    def __call__(self, x: Tensor, causal: bool = True, key_padding=None) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, h, causal=causal, key_padding=key_padding)
        return x + self.fc2(gelu(self.fc1(self.ln2(x))))


def masked_positions(x: Tensor, valid) -> Tensor:
    """Zero-out rows of [..., T, d] where ``valid`` is False."""
    return masked_fill(x, ~np.asarray(valid, dtype=bool)[..., None], 0.0)
