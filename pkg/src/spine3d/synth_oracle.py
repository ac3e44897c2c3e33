"""Analytic spines with closed-form derivatives, used as ground truth.

A spine is ``x(z) = sum A_i sin(2 pi k_i z + phi_i)`` (coronal deviation)
and a polynomial ``y(z)`` (sagittal deviation), both in the same normalized
units as :mod:`spine3d.curve_recon`: the projected curve sits at column
``(0.5 + x(z)) * (W - 1)`` of row ``z * (H - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P
from scipy import optimize

from . import imageio
from .cobb3d import SeverityLevel, angle_between, grade, sign_change_roots

BOUND = 0.4
FREQUENCIES = (0.5, 1.0, 1.5)
ORACLE_SCAN_POINTS = 4096
SEVERITY_BANDS = {
    SeverityLevel.NORMAL_MILD: (5.0, 15.0),
    SeverityLevel.MODERATE: (25.0, 35.0),
    SeverityLevel.SEVERE: (45.0, 60.0),
}
_DENSE = np.linspace(0.0, 1.0, 2001)
# inflections closer than this to either end are hard to resolve from a fit
EDGE_MARGIN = 0.08
GRAZE_FRACTION = 0.2
# presets need a coronal curve several pixels wide at the default 160-pixel width
MIN_CORONAL_SPAN = 0.025


class SpineBoundError(ValueError):
    """The spine leaves the +-0.4 band and would fall outside the image."""


@dataclass(frozen=True)
class CoronalTerm:
    amplitude: float
    frequency: float
    phase: float = 0.0


@dataclass
class AnalyticSpine:
    coronal: tuple[CoronalTerm, ...]
    sagittal: tuple[float, ...] = (0.0,)
    seed: int | None = None

    def __post_init__(self):
        self.coronal = tuple(t if isinstance(t, CoronalTerm) else CoronalTerm(*t) for t in self.coronal)
        self.sagittal = tuple(float(c) for c in self.sagittal)
        if not self.coronal:
            raise ValueError("a spine needs at least one coronal term")
        if np.max(np.abs(self.x(_DENSE))) > BOUND or np.max(np.abs(self.y(_DENSE))) > BOUND:
            raise SpineBoundError("spine deviation exceeds 0.4 of the image")

    def _coronal(self, z, order: int):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for t in self.coronal:
            w = 2.0 * math.pi * t.frequency
            arg = w * z + t.phase
            # d^n/dz^n sin(arg) = w^n sin(arg + n pi / 2)
            out = out + t.amplitude * w ** order * np.sin(arg + order * math.pi / 2)
        return out

    def x(self, z):
        return self._coronal(z, 0)

    def dx(self, z):
        return self._coronal(z, 1)

    def d2x(self, z):
        return self._coronal(z, 2)

    def y(self, z):
        return P.polyval(np.asarray(z, dtype=float), self.sagittal)

    def dy(self, z):
        return P.polyval(np.asarray(z, dtype=float), P.polyder(self.sagittal))

    def scaled(self, factor: float) -> "AnalyticSpine":
        terms = tuple(CoronalTerm(t.amplitude * factor, t.frequency, t.phase) for t in self.coronal)
        return AnalyticSpine(terms, self.sagittal, self.seed)

    def to_json(self) -> dict:
        return {
            "coronal": [{"amplitude": t.amplitude, "frequency": t.frequency, "phase": t.phase} for t in self.coronal],
            "sagittal": list(self.sagittal),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict) -> "AnalyticSpine":
        terms = tuple(CoronalTerm(t["amplitude"], t["frequency"], t["phase"]) for t in d["coronal"])
        return cls(terms, tuple(d["sagittal"]), d.get("seed"))


def analytic_landmarks(spine: AnalyticSpine) -> list[float]:
    """0, the exact coronal inflections, 1."""
    return [0.0] + sign_change_roots(spine.d2x, 0.0, 1.0, ORACLE_SCAN_POINTS, xtol=1e-10) + [1.0]


def analytic_tangents(spine: AnalyticSpine, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    t = np.column_stack([spine.dx(z), spine.dy(z), np.ones_like(z)])
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def analytic_segment_angles(spine: AnalyticSpine) -> tuple[list[float], list[float]]:
    zs = analytic_landmarks(spine)
    t = analytic_tangents(spine, zs)
    return zs, [angle_between(t[i], t[i + 1]) for i in range(len(zs) - 1)]


def analytic_cobb(spine: AnalyticSpine) -> float:
    """Largest adjacent-landmark tangent angle from exact derivatives, degrees."""
    return max(analytic_segment_angles(spine)[1])


def _sagittal_profile(rng: np.random.Generator) -> tuple[float, ...]:
    # gentle kyphosis/lordosis S-profile around mid-height, slopes below ~0.12
    b1 = rng.uniform(-0.05, 0.05)
    b3 = rng.uniform(-0.6, 0.6)
    q = Polynomial([0.0, b1, 0.0, b3])
    return tuple((q(Polynomial([-0.5, 1.0]))).coef)


def _random_shape(rng: np.random.Generator) -> tuple[tuple[CoronalTerm, ...], tuple[float, ...]]:
    n_terms = int(rng.integers(1, 3))
    freqs = rng.choice(FREQUENCIES, size=n_terms, replace=False)
    terms = []
    for i, k in enumerate(sorted(freqs)):
        amp = rng.uniform(0.02, 0.07) * (1.0 if i == 0 else rng.uniform(0.2, 0.5))
        terms.append(CoronalTerm(float(amp), float(k), float(rng.uniform(0.0, 2.0 * math.pi))))
    return tuple(terms), _sagittal_profile(rng)


def _well_separated(spine: AnalyticSpine) -> bool:
    """Landmarks away from the ends and each other, curvature never grazing zero."""
    zs = analytic_landmarks(spine)
    inner = zs[1:-1]
    if any(z < EDGE_MARGIN or z > 1.0 - EDGE_MARGIN for z in inner):
        return False
    if not all(b - a >= 2 * EDGE_MARGIN for a, b in zip(zs, zs[1:])):
        return False
    k = spine.d2x(_DENSE)
    mag = np.abs(k)
    # local minima of |x''| that are not sign changes make fitted landmarks flicker
    interior = (mag[1:-1] <= mag[:-2]) & (mag[1:-1] <= mag[2:]) & (k[:-2] * k[2:] > 0)
    return not np.any(mag[1:-1][interior] < GRAZE_FRACTION * mag.max())


def make_spine(seed: int | None = None, coronal=None, sagittal=None,
               severity: SeverityLevel | str | None = None, max_tries: int = 200) -> AnalyticSpine:
    """Build a spine from explicit terms or draw one deterministically from ``seed``.

    With ``severity`` the coronal amplitudes are rescaled so the analytic
    Cobb angle lands uniformly inside that level's band (5-15, 25-35 or
    45-60 degrees), with landmarks kept away from the ends.
    """
    if coronal is not None:
        return AnalyticSpine(tuple(coronal), tuple(sagittal) if sagittal is not None else (0.0,), seed)
    rng = np.random.default_rng(seed)
    if severity is None:
        terms, sag = _random_shape(rng)
        for _ in range(max_tries):
            try:
                return AnalyticSpine(terms, sag, seed)
            except SpineBoundError:
                terms = tuple(CoronalTerm(t.amplitude * 0.8, t.frequency, t.phase) for t in terms)
        raise RuntimeError("could not draw an in-bound spine")
    if isinstance(severity, str):
        severity = SeverityLevel.from_label(severity)
    lo, hi = SEVERITY_BANDS[severity]
    for _ in range(max_tries):
        terms, sag = _random_shape(rng)
        target = rng.uniform(lo, hi)
        base = AnalyticSpine(terms, sag, seed)
        if not _well_separated(base):
            continue
        spine = _scale_to_angle(base, target)
        if spine is not None and np.ptp(spine.x(_DENSE)) >= MIN_CORONAL_SPAN:
            return spine
    raise RuntimeError(f"no spine found for band {lo}-{hi} deg")


def _scale_to_angle(base: AnalyticSpine, target: float) -> AnalyticSpine | None:
    # scaling the coronal terms leaves the inflection heights unchanged
    zs = np.asarray(analytic_landmarks(base))
    dx, dy = base.dx(zs), base.dy(zs)
    s_max = BOUND / np.max(np.abs(base.x(_DENSE))) * 0.999

    def excess(s):
        t = np.column_stack([s * dx, dy, np.ones_like(zs)])
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        cos = np.clip(np.sum(t[:-1] * t[1:], axis=1), -1.0, 1.0)
        return math.degrees(float(np.max(np.arccos(cos)))) - target

    grid = np.linspace(0.0, s_max, 200)
    vals = [excess(s) for s in grid]
    for s0, s1, v0, v1 in zip(grid, grid[1:], vals, vals[1:]):
        if v0 < 0 <= v1:
            return base.scaled(optimize.brentq(excess, s0, s1, xtol=1e-13))
    return None


def severity_spines(n: int, seed: int) -> list[AnalyticSpine]:
    """``n`` preset spines cycling through the three severity bands."""
    levels = list(SEVERITY_BANDS)
    return [make_spine(seed=seed * 100_003 + i, severity=levels[i % 3]) for i in range(n)]


def _centers(spine: AnalyticSpine, view: str, h: int) -> np.ndarray:
    z = np.arange(h) / (h - 1)
    if view == "PA":
        return 0.5 + spine.x(z)
    if view == "LAT":
        return 0.5 + spine.y(z)
    raise ValueError(f"view must be PA or LAT, got {view!r}")


def rasterize(spine: AnalyticSpine, view: str, h: int = 320, w: int = 160,
              thickness: float = 5.0, antialias: bool = True) -> np.ndarray:
    """Curve map of the projected spine: a Gaussian stripe (sigma = thickness / 2) per row."""
    if h < 16 or w < 16:
        raise ValueError("maps must be at least 16 x 16")
    if thickness < 1:
        raise ValueError("thickness must be >= 1")
    c = _centers(spine, view, h) * (w - 1)
    cols = np.arange(w)[None, :]
    if not antialias:
        out = np.zeros((h, w))
        out[np.arange(h), np.clip(np.rint(c).astype(int), 0, w - 1)] = 1.0
        return out
    sigma = thickness / 2.0
    return np.exp(-((cols - c[:, None]) ** 2) / (2.0 * sigma * sigma))


def make_trunk_image(spine: AnalyticSpine, view: str = "PA", h: int = 320, w: int = 160,
                     seed: int = 0) -> np.ndarray:
    """Synthetic back/side view: a shaded torso whose midline furrow follows the spine."""
    z = (np.arange(h) / (h - 1))[:, None]
    col = (np.arange(w) / (w - 1))[None, :]
    furrow = _centers(spine, view, h)[:, None]
    body_mid = 0.5 + 0.5 * (furrow - 0.5)
    half = 0.30 + 0.05 * np.cos(2.0 * math.pi * z) - 0.03 * z
    rel = (col - body_mid) / half
    inside = 1.0 / (1.0 + np.exp(-(1.0 - np.abs(rel)) * 25.0))
    light = np.clip(1.0 - 0.35 * rel ** 2, 0.0, 1.0)
    groove_w = max(1.0, 0.012 * w) / (w - 1)
    groove = 1.0 - 0.35 * np.exp(-((col - furrow) ** 2) / (2.0 * groove_w ** 2))
    skin = np.array([0.86, 0.66, 0.55]) if view == "PA" else np.array([0.82, 0.64, 0.54])
    body = (light * groove)[..., None] * skin
    background = np.array([0.18, 0.2, 0.24]) * (0.9 + 0.1 * z)[..., None]
    img = inside[..., None] * body + (1.0 - inside[..., None]) * background
    img += np.random.default_rng(seed).normal(0.0, 0.015, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def write_case(case_dir, spine: AnalyticSpine, h: int = 320, w: int = 160, thickness: float = 5.0,
               seed: int = 0) -> dict:
    """Write one ``case_####`` directory and return its truth record."""
    case_dir = Path(case_dir)
    angle = analytic_cobb(spine)
    truth = {
        "spine": spine.to_json(),
        "analytic_angle_deg": angle,
        "severity": grade(angle).label,
        "height": h,
        "width": w,
        "thickness": thickness,
    }
    for view in ("PA", "LAT"):
        stem = view.lower()
        imageio.write_gray(case_dir / f"{stem}.pgm", rasterize(spine, view, h, w, thickness))
        imageio.write_rgb(case_dir / f"{stem}_rgb.ppm", make_trunk_image(spine, view, h, w, seed=seed + (view == "LAT")))
    imageio.write_json(case_dir / "truth.json", truth)
    return truth


CASE_FILES = ("pa.pgm", "lat.pgm", "pa_rgb.ppm", "lat_rgb.ppm", "truth.json")


def case_name(i: int) -> str:
    return f"case_{i:04d}"


def dataset_spines(n: int, seed: int, severity=None) -> list[AnalyticSpine]:
    if severity is None:
        return severity_spines(n, seed)
    return [make_spine(seed=seed * 100_003 + i, severity=severity) for i in range(n)]
