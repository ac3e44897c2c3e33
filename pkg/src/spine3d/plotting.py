"""Report figures rendered to PNG files with the non-interactive Agg backend."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import imageio  # noqa: E402
from .cobb3d import CobbResult  # noqa: E402
from .curve_recon import Curve3D, tangent_at  # noqa: E402
from .metrics import ConfusionMatrix  # noqa: E402


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    imageio.atomic_write_bytes(path, buf.getvalue())


def plot_curve(curve: Curve3D, result: CobbResult, path) -> None:
    """PA and LAT projections plus a 3D view, with landmarks and their tangents marked."""
    zs = np.asarray(result.landmarks_z)
    fig = plt.figure(figsize=(11, 5))
    for k, (label, coord, poly) in enumerate((("PA", curve.x, curve.pa), ("LAT", curve.y, curve.lat))):
        ax = fig.add_subplot(1, 3, k + 1)
        ax.plot(coord, curve.z, color="tab:blue", lw=1.5)
        ax.plot(poly(zs), zs, "o", color="tab:red", ms=5)
        ax.set_xlim(0, 1)
        ax.set_ylim(curve.z_range[1], curve.z_range[0])
        ax.set_xlabel("lateral" if label == "PA" else "anteroposterior")
        ax.set_ylabel("height")
        ax.set_title(label)
    ax = fig.add_subplot(1, 3, 3, projection="3d")
    ax.plot(curve.x, curve.y, curve.z, color="tab:blue")
    t = tangent_at(curve, zs)
    p = np.column_stack([curve.pa(zs), curve.lat(zs), zs])
    ax.quiver(p[:, 0], p[:, 1], p[:, 2], t[:, 0], t[:, 1], t[:, 2], length=0.08, color="tab:red")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_zlim(curve.z_range[1], curve.z_range[0])
    ax.set_box_aspect((1, 1, 2))
    ax.set_xlabel("lateral")
    ax.set_ylabel("AP")
    ax.set_title(f"3D Cobb {result.max_angle_deg:.1f} deg ({result.severity.label})")
    _save(fig, path)


def plot_confusion(m: ConfusionMatrix, path, title: str = "severity grading") -> None:
    labels = list(m.labels) if m.labels else [str(i) for i in range(m.k)]
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    ax.imshow(m.counts, cmap="Blues")
    top = m.counts.max() if m.counts.size else 0
    for i in range(m.k):
        for j in range(m.k):
            ax.text(j, i, str(m.counts[i, j]), ha="center", va="center",
                    color="white" if top and m.counts[i, j] > top / 2 else "black")
    ax.set_xticks(range(m.k), labels, rotation=30)
    ax.set_yticks(range(m.k), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    ax.set_title(title)
    _save(fig, path)


def plot_losses(history, path) -> None:
    steps = history.column("step")
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.plot(steps, history.column("loss_mse"), label="l2")
    a1.set_yscale("log")
    a1.set_xlabel("step")
    a1.legend()
    a2.plot(steps, history.column("loss_g"), label="generator adversarial")
    a2.plot(steps, history.column("loss_d"), label="discriminator")
    a2.set_xlabel("step")
    a2.legend()
    _save(fig, path)
