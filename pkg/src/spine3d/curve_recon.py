"""From two orthogonal curve maps to a smooth 3D spine curve.

Coordinates are normalized: row index / (H - 1) gives the height ``z`` and
column index / (W - 1) the lateral coordinate ``u``, both in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

DEFAULT_DEGREE = 9
DEFAULT_THRESHOLD = 0.5
DEFAULT_SAMPLES = 256
MIN_OVERLAP = 0.25


class EmptyCurveError(ValueError):
    """No row of the map passes the extraction threshold."""


class OverlapError(ValueError):
    """The PA and LAT curves do not share enough of the vertical range."""


class FitError(ValueError):
    """Too few samples for the requested polynomial degree."""


@dataclass
class Curve2D:
    z: np.ndarray
    u: np.ndarray
    view: str = "PA"

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.z.shape != self.u.shape or self.z.ndim != 1:
            raise ValueError("z and u must be 1-D arrays of equal length")
        if len(self.z) < 2:
            raise ValueError("a curve needs at least 2 samples")
        if np.any(np.diff(self.z) <= 0):
            raise ValueError("z must be strictly increasing")

    def __len__(self):
        return len(self.z)

    def to_json(self) -> dict:
        return {"view": self.view, "samples": [[float(a), float(b)] for a, b in zip(self.z, self.u)]}

    @classmethod
    def from_json(cls, d: dict) -> "Curve2D":
        s = np.asarray(d["samples"], dtype=float)
        return cls(s[:, 0], s[:, 1], d.get("view", "PA"))


@dataclass
class PolyCurve:
    """Least-squares polynomial u(z); ``coef`` in ascending powers of z."""

    coef: np.ndarray
    degree: int
    residual_rms: float
    z_range: tuple[float, float]
    view: str = "PA"

    def __call__(self, z):
        return P.polyval(z, self.coef)

    def derivative(self, z, order: int = 1):
        return P.polyval(z, P.polyder(self.coef, order))


@dataclass
class Curve3D:
    points: np.ndarray
    pa: PolyCurve
    lat: PolyCurve

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.points[:, 2]

    @property
    def z_range(self) -> tuple[float, float]:
        return float(self.z[0]), float(self.z[-1])

    def to_json(self) -> dict:
        return {"points": self.points.tolist(), "degree": int(self.pa.degree)}


def _row_centroid(row: np.ndarray, floor: float) -> float:
    # weight the contiguous run of pixels above ``floor`` around the peak
    peak = int(np.argmax(row))
    lo = peak
    while lo > 0 and row[lo - 1] > floor:
        lo -= 1
    hi = peak
    while hi < len(row) - 1 and row[hi + 1] > floor:
        hi += 1
    w = row[lo : hi + 1]
    return float(np.dot(w, np.arange(lo, hi + 1)) / w.sum())


def extract_curve(curve_map: np.ndarray, threshold: float = DEFAULT_THRESHOLD, view: str = "PA",
                  floor: float = 0.05) -> Curve2D:
    """Intensity-weighted centroid column of every row whose peak exceeds ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    m = np.asarray(curve_map, dtype=float)
    if m.ndim == 3:
        m = m[..., 0]
    h, w = m.shape
    rows = np.nonzero(m.max(axis=1) > threshold)[0]
    if len(rows) < 2:
        raise EmptyCurveError(f"{view} map: fewer than 2 rows exceed threshold {threshold}")
    cols = np.array([_row_centroid(m[r], min(floor, threshold)) for r in rows])
    return Curve2D(rows / (h - 1), cols / (w - 1), view)


def fit_weights(z: np.ndarray, eps: float = 1e-2) -> np.ndarray:
    """Residual weights giving the squared error a Chebyshev weight on the sample range.

    Uniform least squares is least accurate at the ends of the range, which
    is exactly where the end tangents are read; the Chebyshev weight pushes
    the fit towards the near-minimax approximation.
    """
    lo, hi = z[0], z[-1]
    t = (2.0 * z - lo - hi) / (hi - lo)
    return (1.0 - t * t + eps) ** -0.25


def fit_curve(curve: Curve2D, degree: int = DEFAULT_DEGREE, weighted: bool = True) -> PolyCurve:
    """Least-squares polynomial u(z), Chebyshev-weighted unless ``weighted`` is False.

    ``residual_rms`` is the weighted RMS, which is the plain RMS when unweighted.
    """
    if degree < 1:
        raise ValueError("degree must be >= 1")
    if len(curve) <= degree:
        raise FitError(f"{len(curve)} samples cannot determine a degree-{degree} polynomial")
    w = fit_weights(curve.z) if weighted else np.ones(len(curve))
    coef = P.polyfit(curve.z, curve.u, degree, w=w)
    resid = curve.u - P.polyval(curve.z, coef)
    # RMS in the metric the fit minimizes, so it never grows with degree
    rms = np.sqrt(np.sum((w * resid) ** 2) / np.sum(w ** 2))
    return PolyCurve(coef, degree, float(rms),
                     (float(curve.z[0]), float(curve.z[-1])), curve.view)


def reconstruct3d(pa: PolyCurve, lat: PolyCurve, n: int = DEFAULT_SAMPLES,
                  min_overlap: float = MIN_OVERLAP) -> Curve3D:
    """Fuse the PA fit x(z) and the LAT fit y(z) on their shared height range."""
    if n < 16:
        raise ValueError("n must be >= 16")
    lo = max(pa.z_range[0], lat.z_range[0])
    hi = min(pa.z_range[1], lat.z_range[1])
    if hi - lo < min_overlap:
        raise OverlapError(f"PA {pa.z_range} and LAT {lat.z_range} overlap by {max(hi - lo, 0):.3f} < {min_overlap}")
    z = np.linspace(lo, hi, n)
    return Curve3D(np.column_stack([pa(z), lat(z), z]), pa, lat)


def tangent_at(curve: Curve3D, z) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    t = np.column_stack([curve.pa.derivative(z), curve.lat.derivative(z), np.ones_like(z)])
    return t / np.linalg.norm(t, axis=1, keepdims=True)


def tangents(curve: Curve3D) -> np.ndarray:
    """Unit tangents (dx/dz, dy/dz, 1) / norm at every sample."""
    return tangent_at(curve, curve.z)
