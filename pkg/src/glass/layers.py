"""Parameterized layers: linear, layer norm, rotary attention, transformer blocks.

Modules hold `Parameter` leaves; `Module.parameters()` walks attributes in
construction order, so parameter names (used by checkpoints and the
optimizer) are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, as_tensor
from .errors import ConfigError, ShapeError


@dataclass
class AttentionConfig:
    model_dim: int
    heads: int
    causal: bool = False

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if (self.model_dim // self.heads) % 2 != 0:
            raise ConfigError(f"per-head dim {self.model_dim // self.heads} must be even for rotary pairs")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


class Module:
    """Minimal parameter container; submodules are attributes or lists of modules."""

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out: list[tuple[str, Parameter]] = []
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                out.append((path, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix=path + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(prefix=f"{path}.{i}."))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def linear(x, weight, bias=None) -> Tensor:
    """x[..., a] @ weight[a, b] + bias[b]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear shape mismatch: input {x.shape} vs weight {weight.shape}")
    out = x @ weight
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"linear bias shape {bias.shape} vs weight {weight.shape}")
        out = out + bias
    return out


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float32):
        bound = float(np.sqrt(6.0 / (in_dim + out_dim)))
        self.weight = Parameter(rng.uniform(-bound, bound, size=(in_dim, out_dim)).astype(dtype))
        self.bias = Parameter(np.zeros(out_dim, dtype=dtype))

    def __call__(self, x) -> Tensor:
        return linear(x, self.weight, self.bias)


def layer_norm(x, gain, offset, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then scale and shift."""
    x = as_tensor(x)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / ad.sqrt(var + eps)
    return normed * as_tensor(gain) + as_tensor(offset)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float32, eps: float = 1e-5):
        self.gain = Parameter(np.ones(dim, dtype=dtype))
        self.offset = Parameter(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return layer_norm(x, self.gain, self.offset, self.eps)


def rope_rotate(x, positions, base: float = 10000.0, axis: int = -2) -> Tensor:
    """Rotate consecutive value pairs of the last axis by position-dependent angles.

    Pair i of a token at position m is rotated by m * base**(-2i/p); `positions`
    runs along `axis`. Rotations are isometries, so per-pair norms are preserved
    and q/k dot products depend only on relative position.
    """
    x = as_tensor(x)
    p = x.shape[-1]
    if p % 2 != 0:
        raise ConfigError(f"rotary embedding needs an even pair dimension, got {p}")
    positions = np.asarray(positions, dtype=x.dtype)
    theta = np.asarray(base, dtype=x.dtype) ** (
        -2.0 * np.arange(p // 2, dtype=x.dtype) / np.asarray(p, dtype=x.dtype)
    )
    angles = positions[:, None] * theta[None, :]  # (T, p/2)
    # broadcast angles against x laid out as (..., T at `axis`, ..., pairs)
    ax = axis % x.ndim
    for _ in range(x.ndim - 2 - ax):
        angles = angles[:, None, :]
    cos, sin = np.cos(angles), np.sin(angles)

    even, odd = x.data[..., 0::2], x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos

    def vjp(g):
        ge, go = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = ge * cos + go * sin
        gx[..., 1::2] = -ge * sin + go * cos
        return (gx,)

    return Tensor._make(out, (x,), vjp)


def causal_mask(t_q: int, t_k: int) -> np.ndarray:
    """True where query i may attend key j (j - (t_k - t_q) <= i)."""
    return np.tril(np.ones((t_q, t_k), dtype=bool), k=t_k - t_q)


def scaled_dot_attention(q, k, v, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q kᵀ / sqrt(head_dim)) v over the key axis.

    q, k are expected to be per-head projections, already rotary-rotated.
    `mask` is boolean (True = may attend), broadcastable to the score shape.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    scale = 1.0 / float(np.sqrt(q.shape[-1]))
    scores = (q @ k.swapaxes(-1, -2)) * scale
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            np.broadcast_shapes(mask.shape, scores.shape)
        except ValueError:
            raise ShapeError(f"mask shape {mask.shape} incompatible with scores {scores.shape}") from None
        neg = np.asarray(-np.inf, dtype=scores.dtype)
        scores = ad.where(mask, scores, neg)
    weights = ad.softmax(scores, axis=-1)
    return weights @ v


class MultiHeadAttention(Module):
    """Self- or cross-attention with rotary position encoding on q and k."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float32, rope_base: float = 10000.0):
        self.cfg = cfg
        self.rope_base = rope_base
        d = cfg.model_dim
        self.wq = Linear(d, d, rng, dtype)
        self.wk = Linear(d, d, rng, dtype)
        self.wv = Linear(d, d, rng, dtype)
        self.wo = Linear(d, d, rng, dtype)

    def _split_heads(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self.cfg.heads, self.cfg.head_dim).transpose(0, 2, 1, 3)

    def __call__(self, x_q, x_kv, pos_q: np.ndarray, pos_k: np.ndarray) -> Tensor:
        x_q, x_kv = as_tensor(x_q), as_tensor(x_kv)
        q = rope_rotate(self._split_heads(self.wq(x_q)), pos_q, self.rope_base)
        k = rope_rotate(self._split_heads(self.wk(x_kv)), pos_k, self.rope_base)
        v = self._split_heads(self.wv(x_kv))
        mask = causal_mask(x_q.shape[1], x_kv.shape[1]) if self.cfg.causal else None
        out = scaled_dot_attention(q, k, v, mask)
        b, _, t, _ = out.shape
        merged = out.transpose(0, 2, 1, 3).reshape(b, t, self.cfg.model_dim)
        return self.wo(merged)


class FeedForward(Module):
    """Position-wise MLP with 4x expansion and GELU."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.w1 = Linear(dim, 4 * dim, rng, dtype)
        self.w2 = Linear(4 * dim, dim, rng, dtype)

    def __call__(self, x) -> Tensor:
        return self.w2(ad.gelu(self.w1(x)))


class TransformerBlock(Module):
    """Pre-norm residual block: x + attn(ln(x)), then x + mlp(ln(x)).

    With `cross=True` a second attention sublayer attends over external
    states between the self-attention and the MLP.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 causal: bool = False, cross: bool = False, dtype=np.float32):
        self.ln1 = LayerNorm(dim, dtype)
        self.attn = MultiHeadAttention(AttentionConfig(dim, heads, causal=causal), rng, dtype)
        if cross:
            self.ln_cross = LayerNorm(dim, dtype)
            self.cross_attn = MultiHeadAttention(AttentionConfig(dim, heads, causal=False), rng, dtype)
        else:
            self.ln_cross = None
            self.cross_attn = None
        self.ln2 = LayerNorm(dim, dtype)
        self.mlp = FeedForward(dim, rng, dtype)

    def __call__(self, x, positions: np.ndarray, context: Tensor | None = None,
                 context_positions: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        x = as_tensor(x) + self.attn(h, h, positions, positions)
        if self.cross_attn is not None:
            if context is None:
                raise ConfigError("cross-attention block called without context states")
            x = x + self.cross_attn(self.ln_cross(x), context, positions, context_positions)
        x = x + self.mlp(self.ln2(x))
        return x


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when rate is 0 or not training."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    return x * (keep / np.asarray(1.0 - rate, dtype=x.dtype))


def global_grad_norm(params: list[Parameter]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def clip_grad_norm(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm; returns the pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.grad.dtype)
    return norm
