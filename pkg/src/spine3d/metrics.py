"""Overlap and one-vs-rest classification metrics.

A ratio with a zero denominator is ``None`` ("undefined"), never 0 or NaN,
so that averages cannot silently absorb it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

UNDEFINED = None
DEFAULT_THRESHOLD = 0.5


def iou_dice(a: np.ndarray, b: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> tuple[float, float]:
    """IoU and Dice of two maps binarized at ``threshold``; two empty masks give (1, 1)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"map shapes differ: {a.shape} vs {b.shape}")
    ma = a > threshold
    mb = b > threshold
    inter = int(np.count_nonzero(ma & mb))
    union = int(np.count_nonzero(ma | mb))
    total = int(np.count_nonzero(ma)) + int(np.count_nonzero(mb))
    if union == 0:
        return 1.0, 1.0
    return inter / union, 2.0 * inter / total


@dataclass
class ConfusionMatrix:
    """Counts with rows = ground-truth class and columns = predicted class."""

    counts: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError("confusion matrix must be square")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_json(self) -> dict:
        return {"labels": list(self.labels) if self.labels else list(range(self.k)),
                "rows_truth_cols_pred": self.counts.tolist()}


def confusion(pred: Sequence[int], gt: Sequence[int], k: int, labels=None) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"{len(pred)} predictions for {len(gt)} ground-truth labels")
    if len(pred) and (min(pred.min(), gt.min()) < 0 or max(pred.max(), gt.max()) >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (gt, pred), 1)
    return ConfusionMatrix(counts, tuple(labels) if labels else None)


def _ratio(num: int, den: int):
    return num / den if den else UNDEFINED


def class_metrics(m: ConfusionMatrix, cls: int) -> dict:
    if m.total == 0:
        raise ValueError("empty confusion matrix")
    if not 0 <= cls < m.k:
        raise ValueError(f"class {cls} out of range for {m.k} classes")
    c = m.counts
    tp = int(c[cls, cls])
    fn = int(c[cls].sum()) - tp
    fp = int(c[:, cls].sum()) - tp
    tn = m.total - tp - fn - fp
    return {
        "sensitivity": _ratio(tp, tp + fn),
        "specificity": _ratio(tn, tn + fp),
        "precision": _ratio(tp, tp + fp),
        "npv": _ratio(tn, tn + fn),
        "accuracy": (tp + tn) / m.total,
    }


def macro_avg_sensitivity(m: ConfusionMatrix) -> float:
    support = m.counts.sum(axis=1)
    if np.any(support == 0):
        missing = [int(i) for i in np.nonzero(support == 0)[0]]
        raise ValueError(f"classes {missing} have no ground-truth samples")
    return float(np.mean(np.diag(m.counts) / support))


def metric_table(m: ConfusionMatrix) -> dict:
    """Per-class metrics keyed by label, laid out metric -> class."""
    names = m.labels or tuple(str(i) for i in range(m.k))
    per_class = [class_metrics(m, i) for i in range(m.k)]
    return {metric: {names[i]: per_class[i][metric] for i in range(m.k)}
            for metric in ("sensitivity", "specificity", "precision", "npv", "accuracy")}


def summarize(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return {"mean": UNDEFINED, "sd": UNDEFINED, "n": 0}
    return {"mean": float(arr.mean()), "sd": float(arr.std(ddof=1)) if arr.size > 1 else UNDEFINED, "n": int(arr.size)}
