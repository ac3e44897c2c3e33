"""The gradient suite: every differentiable op plus a tiny full generator.

Each case reduces its output to a scalar through a fixed random weighting,
so every output element contributes a distinct gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor_core as tc
from .euformer import losses
from .euformer.config import EUFormerConfig
from .euformer.layers import CmhaParams, EtbParams, LeffParams, cmha_forward, downsample, etb_forward, leff_forward, upsample
from .euformer.model import discriminator_forward, generator_forward, init_discriminator_params, init_generator_params
from .tensor_core import GradReport, Tensor

TINY_GENERATOR = EUFormerConfig(scales=2, base_channels=8)
TINY_SHAPE = (16, 8)
# per-tensor coordinate sample for the network cases; the op cases check every coordinate
NETWORK_COORDS = 12


@dataclass
class GradCase:
    name: str
    f: Callable[[dict[str, Tensor]], Tensor]
    params: dict[str, np.ndarray]
    max_coords: int | None = None
    h: float | None = None


def _probe(shape, rng) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _weighted(out: Tensor, probe: Tensor) -> Tensor:
    return tc.tsum(out * probe)


def _unary(name, op, rng, shape=(2, 3, 4), positive=False, lo=-2.0, hi=2.0) -> GradCase:
    x = rng.uniform(0.3, 2.0, shape) if positive else rng.uniform(lo, hi, shape)
    with tc.no_grad():
        probe = _probe(op(Tensor(x)).shape, rng)
    return GradCase(name, lambda p: _weighted(op(p["x"]), probe), {"x": x})


def _named(prefix: str, named: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k[len(prefix):]: t.data for k, t in named.items()}


def op_cases(seed: int = 0) -> list[GradCase]:
    rng = np.random.default_rng(seed)
    cases = [
        _unary("neg", tc.neg, rng),
        _unary("reciprocal", tc.reciprocal, rng, positive=True),
        _unary("power", lambda x: tc.power(x, 3.0), rng),
        _unary("exp", tc.exp, rng),
        _unary("log", tc.log, rng, positive=True),
        _unary("sigmoid", tc.sigmoid, rng),
        _unary("gelu", tc.gelu, rng),
        _unary("softmax", lambda x: tc.softmax(x, axis=-1), rng),
        _unary("softmax_axis1", lambda x: tc.softmax(x, axis=1), rng),
        _unary("tsum_axis", lambda x: tc.tsum(x, axis=1, keepdims=True), rng),
        _unary("tmean_axis", lambda x: tc.tmean(x, axis=(0, 2)), rng),
        _unary("reshape", lambda x: tc.reshape(x, (4, 6)), rng),
        _unary("transpose", lambda x: tc.transpose(x, (2, 0, 1)), rng),
        _unary("instance_norm", tc.instance_norm, rng, shape=(2, 3, 3, 2)),
        _unary("pixel_unshuffle", lambda x: tc.pixel_unshuffle(x, 2), rng, shape=(1, 4, 4, 2)),
        _unary("pixel_shuffle", lambda x: tc.pixel_shuffle(x, 2), rng, shape=(1, 2, 2, 8)),
    ]
    # kink-free inputs: keep samples away from 0 for leaky_relu and from the clip bounds
    x = rng.uniform(0.1, 1.0, (2, 3, 4)) * rng.choice([-1.0, 1.0], (2, 3, 4))
    probe = _probe(x.shape, rng)
    cases.append(GradCase("leaky_relu", lambda p: _weighted(tc.leaky_relu(p["x"], 0.2), probe), {"x": x}))
    xc = np.array([-1.7, -0.6, 0.2, 0.55, 1.3, 2.4])
    probe_c = _probe(xc.shape, rng)
    cases.append(GradCase("clip", lambda p: _weighted(tc.clip(p["x"], -1.0, 1.0), probe_c), {"x": xc}))

    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((3, 1))
    probe_ab = _probe((2, 3, 4), rng)
    cases.append(GradCase("add_broadcast", lambda p: _weighted(tc.add(p["a"], p["b"]), probe_ab), {"a": a, "b": b}))
    cases.append(GradCase("mul_broadcast", lambda p: _weighted(tc.mul(p["a"], p["b"]), probe_ab), {"a": a, "b": b}))
    cases.append(GradCase("div", lambda p: _weighted(p["a"] / p["c"], probe_ab),
                          {"a": a, "c": rng.uniform(0.5, 2.0, (2, 3, 4))}))
    m1, m2 = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 5))
    probe_m = _probe((2, 3, 5), rng)
    cases.append(GradCase("matmul", lambda p: _weighted(tc.matmul(p["a"], p["b"]), probe_m), {"a": m1, "b": m2}))
    c1, c2 = rng.standard_normal((2, 3, 2)), rng.standard_normal((2, 3, 3))
    probe_cat = _probe((2, 3, 5), rng)
    cases.append(GradCase("concat", lambda p: _weighted(tc.concat([p["a"], p["b"]], axis=-1), probe_cat), {"a": c1, "b": c2}))

    for name, (cin, cout, k, stride, pad, groups) in {
        "conv2d": (3, 4, 3, 1, 1, 1),
        "conv2d_stride2": (2, 3, 4, 2, 1, 1),
        "conv2d_depthwise": (4, 4, 3, 1, 1, 4),
        "conv2d_grouped": (4, 6, 3, 1, 1, 2),
        "conv2d_pointwise": (3, 5, 1, 1, 0, 1),
    }.items():
        x = rng.standard_normal((2, 6, 5, cin))
        w = rng.standard_normal((k, k, cin // groups, cout)) * 0.5
        ho = (6 + 2 * pad - k) // stride + 1
        wo = (5 + 2 * pad - k) // stride + 1
        probe_v = _probe((2, ho, wo, cout), rng)
        cases.append(GradCase(name, (lambda s, pd, g, pv: lambda p: _weighted(tc.conv2d(p["x"], p["w"], s, pd, g), pv))(
            stride, pad, groups, probe_v), {"x": x, "w": w}))

    x = rng.standard_normal((2, 3, 3, 4))
    probe_ln = _probe(x.shape, rng)
    cases.append(GradCase("layer_norm_channels",
                          lambda p: _weighted(tc.layer_norm_channels(p["x"], p["g"], p["b"]), probe_ln),
                          {"x": x, "g": rng.uniform(0.5, 1.5, 4), "b": rng.standard_normal(4)}))

    kappa = rng.uniform(0.05, 0.95, (2, 3, 2, 1))
    y = (rng.uniform(size=kappa.shape) > 0.5).astype(float)
    cases.append(GradCase("loss_generator", lambda p: losses.loss_generator(p["k"], y), {"k": kappa}))
    gt = rng.uniform(size=(2, 4, 3, 1))
    cases.append(GradCase("loss_mse", lambda p: losses.loss_mse(p["g"], Tensor(gt)), {"g": rng.uniform(size=gt.shape)}))
    lr, lf = rng.standard_normal((2, 3, 2, 1)), rng.standard_normal((2, 3, 2, 1))
    cases.append(GradCase("loss_discriminator", lambda p: losses.loss_discriminator(p["r"], p["f"]), {"r": lr, "f": lf}))
    return cases


def block_cases(seed: int = 0) -> list[GradCase]:
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((1, 4, 4, 4))
    probe = _probe(x.shape, rng)
    cm = CmhaParams.init(4, 2, rng)
    lf = LeffParams.init(4, rng)
    etb = EtbParams.init(4, 2, rng)
    cases = [
        GradCase("cmha_forward", lambda p: _weighted(cmha_forward(p["x"], CmhaParams.from_named(p, "", 2)), probe),
                 {"x": x, **_named("", cm.named(""))}),
        GradCase("leff_forward", lambda p: _weighted(leff_forward(p["x"], LeffParams.from_named(p, "")), probe),
                 {"x": x, **_named("", lf.named(""))}),
        GradCase("etb_forward", lambda p: _weighted(etb_forward(p["x"], EtbParams.from_named(p, "", 2)), probe),
                 {"x": x, **_named("", etb.named(""))}, max_coords=NETWORK_COORDS),
    ]
    wd = rng.standard_normal((3, 3, 4, 2)) * 0.3
    probe_d = _probe((1, 2, 2, 8), rng)
    cases.append(GradCase("downsample", lambda p: _weighted(downsample(p["x"], p["w"]), probe_d), {"x": x, "w": wd}))
    wu = rng.standard_normal((3, 3, 4, 8)) * 0.3
    probe_u = _probe((1, 8, 8, 2), rng)
    cases.append(GradCase("upsample", lambda p: _weighted(upsample(p["x"], p["w"]), probe_u), {"x": x, "w": wu}))
    return cases


def network_cases(seed: int = 0) -> list[GradCase]:
    rng = np.random.default_rng(seed + 2)
    h, w = TINY_SHAPE
    rgb = Tensor(rng.uniform(size=(1, h, w, 3)))
    gt = Tensor(rng.uniform(size=(1, h, w, 1)))
    gen = {k: t.data for k, t in init_generator_params(TINY_GENERATOR, seed).items()}

    def gen_loss(p):
        return losses.loss_mse(generator_forward(rgb, TINY_GENERATOR, p), gt)

    disc = {k: t.data for k, t in init_discriminator_params(seed, channels=(4, 8, 8, 8, 1)).items()}
    cmap = Tensor(rng.uniform(size=(1, 64, 32, 1)))
    rgb_d = Tensor(rng.uniform(size=(1, 64, 32, 3)))

    def disc_loss(p):
        return losses.loss_generator(tc.sigmoid(discriminator_forward(rgb_d, cmap, p)), 1.0)

    return [
        GradCase("tiny_generator", gen_loss, gen, max_coords=NETWORK_COORDS),
        # leaky-ReLU kinks sit within 1e-4 of some pre-activations; a smaller step avoids straddling them
        GradCase("patch_discriminator", disc_loss, disc, max_coords=NETWORK_COORDS, h=1e-5),
    ]


def all_cases(seed: int = 0) -> list[GradCase]:
    return op_cases(seed) + block_cases(seed) + network_cases(seed)


def run_case(case: GradCase, h: float = 1e-4, tol: float = 1e-3, seed: int = 0) -> GradReport:
    return tc.grad_check(case.f, case.params, h=case.h or h, tol=tol, max_coords=case.max_coords, seed=seed)
