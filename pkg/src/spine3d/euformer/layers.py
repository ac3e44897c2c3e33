"""Building blocks of the generator: CMHA, revised LeFF, ETB and resampling.

All convolutions are bias-free.  Kernels use the (k, k, c_in/groups, c_out)
layout of :func:`spine3d.tensor_core.conv2d`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from .. import tensor_core as tc
from ..tensor_core import Tensor

LEFF_EXPANSION = 4


def init_kernel(rng: np.random.Generator, k: int, cin_g: int, cout: int, name: str | None = None) -> Tensor:
    std = 1.0 / math.sqrt(k * k * cin_g)
    return tc.parameter(rng.normal(0.0, std, size=(k, k, cin_g, cout)), name=name)


class _Named:
    """Mixin: round-trip a parameter dataclass through a flat name -> Tensor dict."""

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + f.name: getattr(self, f.name) for f in fields(self) if isinstance(getattr(self, f.name), Tensor)}

    @classmethod
    def tensor_fields(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.type in ("Tensor", Tensor)]


@dataclass
class CmhaParams(_Named):
    q_point: Tensor
    q_depth: Tensor
    k_point: Tensor
    k_depth: Tensor
    v_point: Tensor
    v_depth: Tensor
    alpha: Tensor
    heads: int = 1

    @property
    def channels(self) -> int:
        return self.q_point.shape[-1]

    @classmethod
    def init(cls, c: int, heads: int, rng: np.random.Generator) -> "CmhaParams":
        if heads < 1 or c % heads:
            raise ValueError(f"heads={heads} must divide channels={c}")
        kw = {}
        for b in "qkv":
            kw[f"{b}_point"] = init_kernel(rng, 1, c, c)
            kw[f"{b}_depth"] = init_kernel(rng, 3, 1, c)
        kw["alpha"] = tc.parameter(np.full(heads, math.sqrt(c // heads)))
        return cls(heads=heads, **kw)

    @classmethod
    def from_named(cls, named: dict[str, Tensor], prefix: str, heads: int) -> "CmhaParams":
        return cls(heads=heads, **{n: named[prefix + n] for n in cls.tensor_fields()})


@dataclass
class LeffParams(_Named):
    expand: Tensor
    depth: Tensor
    project: Tensor

    @classmethod
    def init(cls, c: int, rng: np.random.Generator, ratio: int = LEFF_EXPANSION) -> "LeffParams":
        hidden = ratio * c
        return cls(init_kernel(rng, 1, c, hidden), init_kernel(rng, 3, 1, hidden), init_kernel(rng, 1, hidden, c))

    @classmethod
    def from_named(cls, named, prefix):
        return cls(**{n: named[prefix + n] for n in cls.tensor_fields()})


@dataclass
class EtbParams:
    norm1_gamma: Tensor
    norm1_beta: Tensor
    attn: CmhaParams
    norm2_gamma: Tensor
    norm2_beta: Tensor
    ffn: LeffParams

    @classmethod
    def init(cls, c: int, heads: int, rng: np.random.Generator) -> "EtbParams":
        return cls(
            tc.parameter(np.ones(c)), tc.parameter(np.zeros(c)), CmhaParams.init(c, heads, rng),
            tc.parameter(np.ones(c)), tc.parameter(np.zeros(c)), LeffParams.init(c, rng),
        )

    def named(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + "norm1_gamma": self.norm1_gamma, prefix + "norm1_beta": self.norm1_beta,
               prefix + "norm2_gamma": self.norm2_gamma, prefix + "norm2_beta": self.norm2_beta}
        out.update(self.attn.named(prefix + "attn."))
        out.update(self.ffn.named(prefix + "ffn."))
        return out

    @classmethod
    def from_named(cls, named, prefix, heads):
        return cls(
            named[prefix + "norm1_gamma"], named[prefix + "norm1_beta"],
            CmhaParams.from_named(named, prefix + "attn.", heads),
            named[prefix + "norm2_gamma"], named[prefix + "norm2_beta"],
            LeffParams.from_named(named, prefix + "ffn."),
        )


def _project(x: Tensor, point: Tensor, depth: Tensor) -> Tensor:
    # 1x1 cross-channel mix first, then per-channel 3x3 spatial filter
    y = tc.conv2d(x, point)
    return tc.conv2d(y, depth, pad=1, groups=y.shape[-1])


def cmha_forward(
    x: Tensor,
    p: CmhaParams,
    residual: Tensor | None = None,
    inspect: Callable[[np.ndarray], None] | None = None,
) -> Tensor:
    """Channel-wise multi-head attention with residual.

    Per head the d x d channel map is ``softmax(Q^T K / alpha)`` over the key
    channel, so each output channel is a convex mixture of value channels.
    ``residual`` defaults to ``x``; ETB passes its pre-norm input here.
    ``inspect`` receives the attention maps, shape (n, heads, d, d), rows
    indexed by output channel.
    """
    x4 = x if x.ndim == 4 else x.reshape((1,) + x.shape)
    n, h, w, c = x4.shape
    heads = p.heads
    if c % heads:
        raise tc.ShapeError(f"channels {c} not divisible by heads {heads}")
    if p.channels != c:
        raise tc.ShapeError(f"CMHA built for {p.channels} channels, input has {c}")
    d = c // heads
    hw = h * w

    def split(t):
        # (n, h, w, c) -> (n, heads, hw, d)
        return t.reshape((n, hw, heads, d)).transpose((0, 2, 1, 3))

    q = split(_project(x4, p.q_point, p.q_depth))
    k = split(_project(x4, p.k_point, p.k_depth))
    v = split(_project(x4, p.v_point, p.v_depth))

    scores = tc.matmul(q.transpose((0, 1, 3, 2)), k)  # (n, heads, d_out, d_in)
    scores = scores * tc.reciprocal(p.alpha).reshape((1, heads, 1, 1))
    attn = tc.softmax(scores, axis=-1)
    if inspect is not None:
        inspect(attn.data)
    mixed = tc.matmul(v, attn.transpose((0, 1, 3, 2)))  # (n, heads, hw, d)
    out = mixed.transpose((0, 2, 1, 3)).reshape((n, h, w, c))
    if x.ndim == 3:
        out = out.reshape(x.shape)
    return out + (x if residual is None else residual)


def leff_forward(x: Tensor, p: LeffParams, residual: Tensor | None = None) -> Tensor:
    """Pointwise expand, GELU, depthwise 3x3, GELU, pointwise project, residual.

    Stays in (h, w, c) layout throughout.
    """
    y = tc.gelu(tc.conv2d(x, p.expand))
    y = tc.gelu(tc.conv2d(y, p.depth, pad=1, groups=y.shape[-1]))
    y = tc.conv2d(y, p.project)
    return y + (x if residual is None else residual)


def etb_forward(x: Tensor, p: EtbParams, inspect=None) -> Tensor:
    y = cmha_forward(tc.layer_norm_channels(x, p.norm1_gamma, p.norm1_beta), p.attn, residual=x, inspect=inspect)
    return leff_forward(tc.layer_norm_channels(y, p.norm2_gamma, p.norm2_beta), p.ffn, residual=y)


def downsample(x: Tensor, w: Tensor) -> Tensor:
    """3x3 conv c -> c/2, then unshuffle by 2: (h, w, c) -> (h/2, w/2, 2c)."""
    h, wd = x.shape[-3], x.shape[-2]
    if h % 2 or wd % 2:
        raise tc.ShapeError(f"downsample needs even spatial dims, got {h}x{wd}")
    return tc.pixel_unshuffle(tc.conv2d(x, w, pad=1), 2)


def upsample(x: Tensor, w: Tensor) -> Tensor:
    """3x3 conv c -> 2c, then shuffle by 2: (h, w, c) -> (2h, 2w, c/2)."""
    return tc.pixel_shuffle(tc.conv2d(x, w, pad=1), 2)


def init_downsample(c: int, rng) -> Tensor:
    if c % 2:
        raise ValueError(f"downsample needs even channels, got {c}")
    return init_kernel(rng, 3, c, c // 2)


def init_upsample(c: int, rng) -> Tensor:
    if c % 2:
        raise ValueError(f"upsample needs even channels, got {c}")
    return init_kernel(rng, 3, c, 2 * c)
