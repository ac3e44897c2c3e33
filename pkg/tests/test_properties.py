"""Randomized properties; hypothesis picks the shapes, seeds and values."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from spine3d import tensor_core as tc
from spine3d.cobb3d import cobb3d, grade
from spine3d.curve_recon import Curve2D, PolyCurve, fit_curve, reconstruct3d, tangents
from spine3d.euformer import EtbParams, etb_forward, flops_attention
from spine3d.metrics import class_metrics, confusion, iou_dice
from spine3d.tensor_core import Tensor

seeds = st.integers(0, 2**31 - 1)
angles = st.floats(0.0, 180.0, allow_nan=False)


def poly(coef, view="PA"):
    coef = np.asarray(coef, dtype=float)
    return PolyCurve(coef, len(coef) - 1, 0.0, (0.0, 1.0), view)


class TestGradeProperties:
    @given(angles, angles)
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert grade(lo) <= grade(hi)


class TestMetricProperties:
    @given(seeds, st.floats(0.05, 0.95))
    def test_dice_from_iou(self, seed, p):
        rng = np.random.default_rng(seed)
        a = (rng.uniform(size=(12, 9)) < p).astype(float)
        b = (rng.uniform(size=(12, 9)) < p).astype(float)
        iou, dice = iou_dice(a, b)
        assert iou <= dice
        assert abs(dice - 2 * iou / (1 + iou)) < 1e-12

    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=40), seeds)
    def test_count_and_order_invariance(self, pairs, seed):
        gt, pred = map(list, zip(*pairs))
        m = confusion(pred, gt, 3)
        assert m.total == len(pairs)
        perm = np.random.default_rng(seed).permutation(len(pairs))
        m2 = confusion([pred[i] for i in perm], [gt[i] for i in perm], 3)
        np.testing.assert_array_equal(m.counts, m2.counts)

    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=30))
    def test_binary_accuracy_symmetric(self, pairs):
        gt, pred = map(list, zip(*pairs))
        m = confusion(pred, gt, 2)
        assert class_metrics(m, 0)["accuracy"] == class_metrics(m, 1)["accuracy"]


class TestTensorProperties:
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(2, 3), seeds)
    def test_shuffle_round_trip(self, hb, wb, c, r, seed):
        x = np.random.default_rng(seed).standard_normal((2, hb * r, wb * r, c))
        down = tc.pixel_unshuffle(Tensor(x), r)
        assert down.shape == (2, hb, wb, c * r * r)
        np.testing.assert_array_equal(tc.pixel_shuffle(down, r).data, x)
        y = np.random.default_rng(seed + 1).standard_normal((hb, wb, c * r * r))
        np.testing.assert_array_equal(tc.pixel_unshuffle(tc.pixel_shuffle(Tensor(y), r), r).data, y)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([(1, 1), (2, 1), (2, 2), (4, 2), (6, 3), (8, 4)]),
           st.booleans(), seeds)
    def test_etb_preserves_shape(self, h, w, ch, batched, seed):
        c, heads = ch
        rng = np.random.default_rng(seed)
        shape = (2, h, w, c) if batched else (h, w, c)
        y = etb_forward(Tensor(rng.standard_normal(shape)), EtbParams.init(c, heads, rng))
        assert y.shape == shape
        assert np.all(np.isfinite(y.data))

    @given(seeds, st.integers(2, 5))
    def test_softmax_rows(self, seed, n):
        x = np.random.default_rng(seed).standard_normal((3, n)) * 30
        s = tc.softmax(Tensor(x)).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(s >= 0)


class TestFlopsProperties:
    @given(st.integers(1, 64), st.integers(1, 64), st.sampled_from([(8, 1), (16, 2), (32, 4), (64, 8)]))
    def test_ratios(self, h, w, ch):
        c, heads = ch
        chan = flops_attention(2 * h, w, c, heads, "channel") / flops_attention(h, w, c, heads, "channel")
        spat = flops_attention(2 * h, w, c, heads, "spatial") / flops_attention(h, w, c, heads, "spatial")
        assert 1.99 <= chan <= 2.01 and 3.99 <= spat <= 4.01
        if c < h * w:
            assert flops_attention(h, w, c, heads, "channel") < flops_attention(h, w, c, heads, "spatial")


class TestGeometryProperties:
    @given(st.lists(st.floats(-0.3, 0.3), min_size=1, max_size=6), st.lists(st.floats(-0.3, 0.3), min_size=1, max_size=6),
           st.integers(16, 300))
    def test_curve_invariants(self, pa, lat, n):
        c = reconstruct3d(poly(pa), poly(lat, "LAT"), n)
        dz = np.diff(c.z)
        assert np.all(dz > 0)
        np.testing.assert_allclose(dz, 1 / (n - 1), rtol=1e-9)
        t = tangents(c)
        np.testing.assert_allclose(np.linalg.norm(t, axis=1), 1.0, atol=1e-9)
        assert np.all(t[:, 2] > 0)

    @given(seeds, st.integers(1, 8))
    def test_residual_monotone_in_degree(self, seed, deg):
        rng = np.random.default_rng(seed)
        z = np.sort(rng.uniform(0, 1, 40))
        z = np.unique(z)
        curve = Curve2D(z, rng.uniform(0, 1, len(z)))
        a = fit_curve(curve, deg).residual_rms
        b = fit_curve(curve, deg + 1).residual_rms
        assert b <= a * (1 + 1e-9) + 1e-12

    @given(st.floats(0, 2 * math.pi), st.lists(st.floats(-0.2, 0.2), min_size=2, max_size=6),
           st.lists(st.floats(-0.2, 0.2), min_size=2, max_size=6), st.lists(st.floats(0.05, 0.95), max_size=3))
    def test_rotation_about_z(self, theta, pa, lat, marks):
        n = max(len(pa), len(lat))
        a, b = np.pad(pa, (0, n - len(pa))), np.pad(lat, (0, n - len(lat)))
        base = cobb3d(reconstruct3d(poly(a), poly(b, "LAT")), marks)
        cs, sn = math.cos(theta), math.sin(theta)
        rot = cobb3d(reconstruct3d(poly(cs * a - sn * b), poly(sn * a + cs * b, "LAT")), marks)
        np.testing.assert_allclose(rot.segment_angles_deg, base.segment_angles_deg, atol=1e-9)
        assert all(0 <= v <= 180 for v in rot.segment_angles_deg)
        assert rot.max_angle_deg == max(rot.segment_angles_deg)
