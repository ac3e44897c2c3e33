"""Inflection landmarks, plane-to-plane Cobb angle and severity grades."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize

from .curve_recon import Curve3D, PolyCurve, tangent_at

MODERATE_FROM = 20.0
SEVERE_ABOVE = 40.0
SCAN_POINTS = 1024
ROOT_XTOL = 1e-7
# fitted curvature is unreliable this close to the ends (fraction of height)
EDGE_MARGIN = 0.05


class SeverityLevel(enum.IntEnum):
    NORMAL_MILD = 0
    MODERATE = 1
    SEVERE = 2

    @property
    def label(self) -> str:
        return ("normal-mild", "moderate", "severe")[self]

    @classmethod
    def from_label(cls, label: str) -> "SeverityLevel":
        return {"normal-mild": cls.NORMAL_MILD, "moderate": cls.MODERATE, "severe": cls.SEVERE}[label]


def grade(angle_deg: float) -> SeverityLevel:
    """[0, 20) normal-mild, [20, 40] moderate, above 40 severe."""
    if angle_deg < 0 or math.isnan(angle_deg):
        raise ValueError(f"angle must be non-negative, got {angle_deg}")
    if angle_deg < MODERATE_FROM:
        return SeverityLevel.NORMAL_MILD
    if angle_deg <= SEVERE_ABOVE:
        return SeverityLevel.MODERATE
    return SeverityLevel.SEVERE


def is_boundary(angle_deg: float, tol: float = 1e-9) -> bool:
    return any(math.isclose(angle_deg, b, abs_tol=tol) for b in (MODERATE_FROM, SEVERE_ABOVE))


def sign_change_roots(f: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                      points: int = SCAN_POINTS, xtol: float = ROOT_XTOL) -> list[float]:
    """Interior roots of ``f`` on [lo, hi] where it actually changes sign.

    A grid scan brackets each crossing and bisection refines it.  Roots
    within 1e-5 of the range ends are dropped; the ends are landmarks anyway.
    """
    grid = np.linspace(lo, hi, points)
    vals = np.asarray(f(grid), dtype=float)
    scale = np.max(np.abs(vals)) if vals.size else 0.0
    if scale == 0.0:
        return []
    # values at round-off level count as zero so they do not fake a crossing
    vals = np.where(np.abs(vals) <= 1e-12 * scale, 0.0, vals)
    sgn = np.sign(vals)
    roots = []
    i = 0
    while i < points - 1:
        if sgn[i] * sgn[i + 1] < 0:
            roots.append(optimize.bisect(lambda t: float(f(np.array([t]))[0]), grid[i], grid[i + 1], xtol=xtol))
        elif sgn[i + 1] == 0:
            # run of exact zeros: a root only if the sign differs across the run
            j = i + 1
            while j < points - 1 and sgn[j] == 0:
                j += 1
            if sgn[i] * sgn[j] < 0:
                roots.append(0.5 * (grid[i + 1] + grid[j - 1]))
            i = j
            continue
        i += 1
    margin = 1e-5 * (hi - lo)
    return sorted(r for r in roots if lo + margin < r < hi - margin)


def inflection_points(pa_poly: PolyCurve, z_range: tuple[float, float] | None = None,
                      points: int = SCAN_POINTS) -> list[float]:
    """Heights where the second derivative of the coronal fit changes sign."""
    if pa_poly.degree < 3:
        return []
    lo, hi = z_range or pa_poly.z_range
    return sign_change_roots(lambda z: pa_poly.derivative(z, 2), lo, hi, points)


def angle_between(t1: np.ndarray, t2: np.ndarray) -> float:
    """Angle in degrees between unit vectors.

    Equal to arccos of the clamped dot product, but evaluated as
    atan2(|t1 x t2|, t1 . t2), which keeps full precision near 0 and 180.
    """
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    cross = np.cross(t1, t2) if t1.size == 3 else np.array([t1[0] * t2[1] - t1[1] * t2[0]])
    return math.degrees(math.atan2(float(np.linalg.norm(cross)), float(np.dot(t1, t2))))


@dataclass
class CobbResult:
    landmarks_z: list[float]
    segment_angles_deg: list[float]
    max_angle_deg: float
    severity: SeverityLevel
    boundary_case: bool = False
    extra: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return {
            "landmarks_z": [float(z) for z in self.landmarks_z],
            "segment_angles_deg": [float(a) for a in self.segment_angles_deg],
            "max_angle_deg": float(self.max_angle_deg),
            "severity": self.severity.label,
            "boundary_case": bool(self.boundary_case),
        }


def _result(landmarks: list[float], unit_tangents: np.ndarray) -> CobbResult:
    angles = [angle_between(unit_tangents[i], unit_tangents[i + 1]) for i in range(len(landmarks) - 1)]
    top = max(angles)
    return CobbResult(landmarks, angles, top, grade(top), is_boundary(top))


def _landmark_set(z_range, landmarks) -> list[float]:
    lo, hi = z_range
    inner = sorted(float(z) for z in landmarks)
    for z in inner:
        if not lo <= z <= hi:
            raise ValueError(f"landmark z={z} outside curve range [{lo}, {hi}]")
    inner = [z for z in inner if lo < z < hi]
    return [float(lo)] + inner + [float(hi)]


def cobb3d(curve: Curve3D, landmarks) -> CobbResult:
    """Largest angle between curve-normal planes at adjacent landmarks.

    The plane perpendicular to the curve at a landmark has the unit tangent
    as its normal, so the dihedral angle between two such planes is the
    angle between the tangents.  Curve endpoints are always landmarks.
    """
    zs = _landmark_set(curve.z_range, landmarks)
    return _result(zs, tangent_at(curve, zs))


def cobb2d(pa_poly: PolyCurve, landmarks, z_range: tuple[float, float] | None = None) -> CobbResult:
    """In-plane baseline: the same construction on the PA projection only."""
    zs = _landmark_set(z_range or pa_poly.z_range, landmarks)
    z = np.asarray(zs)
    t = np.column_stack([pa_poly.derivative(z), np.ones_like(z)])
    return _result(zs, t / np.linalg.norm(t, axis=1, keepdims=True))


def pipeline_landmarks(poly: PolyCurve, z_range, edge_margin: float = EDGE_MARGIN) -> list[float]:
    lo, hi = z_range
    pad = edge_margin * (hi - lo)
    return [z for z in inflection_points(poly, z_range) if lo + pad <= z <= hi - pad]


def assess_curve(curve: Curve3D, include_sagittal: bool = False, edge_margin: float = EDGE_MARGIN) -> CobbResult:
    """Landmark a reconstructed curve and compute its 3D Cobb angle.

    Inflections within ``edge_margin`` of either end are ignored; the ends
    themselves are landmarks.
    """
    marks = pipeline_landmarks(curve.pa, curve.z_range, edge_margin)
    if include_sagittal:
        marks = sorted(set(marks) | set(pipeline_landmarks(curve.lat, curve.z_range, edge_margin)))
    return cobb3d(curve, marks)
