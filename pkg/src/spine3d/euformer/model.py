"""U-shaped generator and 5-layer patch discriminator.

Parameters live in flat ``{name: Tensor}`` dicts so the optimizer,
checkpoint writer and gradient checker can treat them uniformly.
"""

from __future__ import annotations

import numpy as np

from .. import tensor_core as tc
from ..tensor_core import Tensor
from .config import EUFormerConfig
from .layers import EtbParams, downsample, etb_forward, init_downsample, init_kernel, init_upsample, upsample

DISC_CHANNELS = (64, 128, 256, 512, 1)
DISC_STRIDES = (2, 2, 2, 1, 1)
DISC_KERNEL = 4
DISC_NORMED = (1, 2, 3)

VIEWS = ("PA", "LAT")


def _view_prefix(config: EUFormerConfig, view: str) -> str:
    if view not in VIEWS:
        raise ValueError(f"view must be one of {VIEWS}, got {view!r}")
    return f"{view.lower()}." if config.separate_views else ""


def init_generator_params(config: EUFormerConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    prefixes = [f"{v.lower()}." for v in VIEWS] if config.separate_views else [""]
    params: dict[str, Tensor] = {}
    for pre in prefixes:
        params.update(_init_one(config, rng, pre))
    for name, t in params.items():
        t.name = name
    return params


def _init_one(config: EUFormerConfig, rng, pre: str) -> dict[str, Tensor]:
    s = config.scales
    p = {pre + "in_proj": init_kernel(rng, 3, config.input_channels, config.base_channels)}
    for i in range(s):
        c = config.channels(i)
        for j in range(config.etbs_per_scale[i]):
            p.update(EtbParams.init(c, config.heads_per_scale[i], rng).named(f"{pre}enc{i}.etb{j}."))
        if i < s - 1:
            p[f"{pre}down{i}"] = init_downsample(c, rng)
    for i in reversed(range(s - 1)):
        c = config.channels(i)
        p[f"{pre}up{i}"] = init_upsample(config.channels(i + 1), rng)
        p[f"{pre}fuse{i}"] = init_kernel(rng, 1, 2 * c, c)
        for j in range(config.etbs_per_scale[i]):
            p.update(EtbParams.init(c, config.heads_per_scale[i], rng).named(f"{pre}dec{i}.etb{j}."))
    p[pre + "out_proj"] = init_kernel(rng, 3, config.base_channels, config.output_channels)
    return p


def generator_forward(rgb, config: EUFormerConfig, params: dict[str, Tensor], view: str = "PA") -> Tensor:
    """Map an (H, W, 3) or (N, H, W, 3) image to a curve map in (0, 1).

    Each decoder level concatenates the same-scale encoder features and
    fuses them back to that level's width with a 1x1 conv.
    """
    x = rgb if isinstance(rgb, Tensor) else Tensor(rgb)
    if x.ndim not in (3, 4):
        raise tc.ShapeError(f"expected (H, W, C) or (N, H, W, C), got {x.shape}")
    h, w, cin = x.shape[-3:]
    if h % config.divisor or w % config.divisor:
        raise tc.ShapeError(
            f"input {h}x{w} not divisible by {config.divisor} (scales={config.scales})")
    if cin != config.input_channels:
        raise tc.ShapeError(f"expected {config.input_channels} input channels, got {cin}")
    pre = _view_prefix(config, view)
    try:
        return _generator(x, config, params, pre)
    except KeyError as exc:
        raise ValueError(f"parameter set does not match config: missing {exc}") from None


def _generator(x: Tensor, config: EUFormerConfig, params, pre: str) -> Tensor:
    s = config.scales
    feat = tc.conv2d(x, params[pre + "in_proj"], pad=1)
    skips = []
    for i in range(s):
        for j in range(config.etbs_per_scale[i]):
            etb = EtbParams.from_named(params, f"{pre}enc{i}.etb{j}.", config.heads_per_scale[i])
            feat = etb_forward(feat, etb)
        if i < s - 1:
            skips.append(feat)
            feat = downsample(feat, params[f"{pre}down{i}"])
    for i in reversed(range(s - 1)):
        feat = upsample(feat, params[f"{pre}up{i}"])
        feat = tc.conv2d(tc.concat([feat, skips[i]], axis=-1), params[f"{pre}fuse{i}"])
        for j in range(config.etbs_per_scale[i]):
            etb = EtbParams.from_named(params, f"{pre}dec{i}.etb{j}.", config.heads_per_scale[i])
            feat = etb_forward(feat, etb)
    return tc.sigmoid(tc.conv2d(feat, params[pre + "out_proj"], pad=1))


def init_discriminator_params(seed: int = 0, channels=DISC_CHANNELS, in_channels: int = 4) -> dict[str, Tensor]:
    if len(channels) != len(DISC_STRIDES):
        raise ValueError(f"discriminator needs {len(DISC_STRIDES)} layer widths")
    rng = np.random.default_rng(seed)
    params = {}
    cin = in_channels
    for i, cout in enumerate(channels):
        w = rng.normal(0.0, 0.02, size=(DISC_KERNEL, DISC_KERNEL, cin, cout))
        params[f"d{i}"] = tc.parameter(w, name=f"d{i}")
        cin = cout
    return params


def discriminator_forward(rgb, curve_map, params: dict[str, Tensor]) -> Tensor:
    """Patch logits for the conditional pair (image, curve map)."""
    a = rgb if isinstance(rgb, Tensor) else Tensor(rgb)
    b = curve_map if isinstance(curve_map, Tensor) else Tensor(curve_map)
    if a.shape[:-1] != b.shape[:-1]:
        raise tc.ShapeError(f"image {a.shape} and map {b.shape} disagree spatially")
    x = tc.concat([a, b], axis=-1)
    for i, stride in enumerate(DISC_STRIDES):
        x = tc.conv2d(x, params[f"d{i}"], stride=stride, pad=1)
        if i in DISC_NORMED:
            x = tc.instance_norm(x)
        if i < len(DISC_STRIDES) - 1:
            x = tc.leaky_relu(x, 0.2)
    return x


def patch_grid(h: int, w: int) -> tuple[int, int]:
    """Logit-grid size of the discriminator for an h x w input."""
    for stride in DISC_STRIDES:
        h = (h + 2 - DISC_KERNEL) // stride + 1
        w = (w + 2 - DISC_KERNEL) // stride + 1
    return h, w


def count_params(params: dict[str, Tensor]) -> int:
    return sum(t.size for t in params.values())
