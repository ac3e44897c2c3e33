from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

DEFAULT_ETBS = (1, 2, 2)
DEFAULT_HEADS = (1, 2, 4)


@dataclass
class EUFormerConfig:
    """Generator layout.

    Level ``i`` runs at resolution ``H / 2**i`` with ``base_channels * 2**i``
    channels.  ``etbs_per_scale[i]`` ETBs run at encoder level ``i``; the
    last level is the bottleneck.  The decoder mirrors the first
    ``scales - 1`` entries.
    """

    scales: int = 3
    etbs_per_scale: tuple[int, ...] | None = None
    base_channels: int = 16
    heads_per_scale: tuple[int, ...] | None = None
    input_channels: int = 3
    output_channels: int = 1
    separate_views: bool = False

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError("scales must be >= 1")
        if self.etbs_per_scale is None:
            self.etbs_per_scale = _default_plan(DEFAULT_ETBS, self.scales)
        if self.heads_per_scale is None:
            self.heads_per_scale = _default_plan(DEFAULT_HEADS, self.scales, grow=2)
        self.etbs_per_scale = tuple(int(v) for v in self.etbs_per_scale)
        self.heads_per_scale = tuple(int(v) for v in self.heads_per_scale)
        if len(self.etbs_per_scale) != self.scales or len(self.heads_per_scale) != self.scales:
            raise ValueError("etbs_per_scale and heads_per_scale need one entry per scale")
        if self.scales > 1 and self.base_channels % 2:
            raise ValueError("base_channels must be even for pixel-shuffle resampling")
        for i, heads in enumerate(self.heads_per_scale):
            if self.channels(i) % heads:
                raise ValueError(f"heads {heads} do not divide {self.channels(i)} channels at scale {i}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    @property
    def divisor(self) -> int:
        return 2 ** (self.scales - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["etbs_per_scale"] = list(self.etbs_per_scale)
        d["heads_per_scale"] = list(self.heads_per_scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EUFormerConfig":
        return cls(**d)


def _default_plan(values, n, grow=1):
    out = list(values[:n])
    while len(out) < n:
        out.append(out[-1] * grow)
    return tuple(out)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 50
    epochs: int | None = None
    steps: int | None = None
    loss_weight_g: float = 0.01
    batch_size: int = 4
    seed: int = 0
    rotate: bool = True
    flip: bool = True
    max_rotation_deg: float = 10.0
    beta1: float = 0.5
    beta2: float = 0.999
    float32: bool = True
    disc_channels: tuple[int, ...] = (64, 128, 256, 512, 1)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.loss_weight_g < 0:
            raise ValueError("loss_weight_g must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainingPair:
    rgb: np.ndarray
    curve_map: np.ndarray
    view: str = "PA"

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        m = np.asarray(self.curve_map, dtype=np.float64)
        self.curve_map = m[..., None] if m.ndim == 2 else m
        if self.rgb.shape[:2] != self.curve_map.shape[:2]:
            raise ValueError(f"image {self.rgb.shape[:2]} and map {self.curve_map.shape[:2]} sizes differ")
        if self.view not in ("PA", "LAT"):
            raise ValueError(f"view must be PA or LAT, got {self.view!r}")


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows], dtype=float)
