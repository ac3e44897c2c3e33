"""Desk-scale adversarial trainer (Adam, step-decayed learning rate)."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .. import imageio
from .. import tensor_core as tc
from ..tensor_core import Tensor
from .config import EUFormerConfig, History, TrainConfig, TrainingPair
from .losses import loss_discriminator, loss_generator, loss_mse, loss_total
from .model import discriminator_forward, generator_forward, init_discriminator_params, init_generator_params

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ("step", "lr", "loss_g", "loss_mse", "loss_total", "loss_d")


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    k = epoch // config.lr_decay_every
    # snap to 15 significant digits so 1e-4 * 0.1 is exactly 1e-5
    return float(f"{config.learning_rate * config.lr_decay_factor ** k:.15g}")


class Adam:
    def __init__(self, params: dict[str, Tensor], beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if lr:
                p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def augment(rgb: np.ndarray, curve_map: np.ndarray, rng: np.random.Generator, config: TrainConfig):
    """Random rotation and horizontal flip, applied identically to image and map."""
    if config.rotate and config.max_rotation_deg > 0:
        angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg)
        rgb = ndimage.rotate(rgb, angle, axes=(0, 1), reshape=False, order=1, mode="nearest")
        curve_map = ndimage.rotate(curve_map, angle, axes=(0, 1), reshape=False, order=1, mode="constant")
    if config.flip and rng.random() < 0.5:
        rgb = rgb[:, ::-1]
        curve_map = curve_map[:, ::-1]
    return np.clip(rgb, 0.0, 1.0), np.clip(curve_map, 0.0, 1.0)


@dataclass
class TrainResult:
    generator: dict[str, Tensor]
    discriminator: dict[str, Tensor]
    history: History


def _frozen(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(p.data, dtype=p.data.dtype) for k, p in params.items()}


def _cast(params: dict[str, Tensor], dtype) -> dict[str, Tensor]:
    return {k: tc.Tensor(p.data, requires_grad=True, name=k, dtype=dtype) for k, p in params.items()}


def _forward_views(x: np.ndarray, views: list[str], config, params) -> Tensor:
    """Generator output for a batch whose rows are grouped PA first, then LAT."""
    if not config.separate_views or len(set(views)) == 1:
        return generator_forward(Tensor(x), config, params, view=views[0])
    parts = []
    for view in ("PA", "LAT"):
        rows = [i for i, v in enumerate(views) if v == view]
        parts.append(generator_forward(Tensor(x[rows]), config, params, view=view))
    return tc.concat(parts, axis=0)


def train(
    pairs: list[TrainingPair],
    gen_config: EUFormerConfig,
    train_config: TrainConfig,
    gen_params: dict[str, Tensor] | None = None,
    disc_params: dict[str, Tensor] | None = None,
    log_every: int = 50,
) -> TrainResult:
    """Alternate one discriminator and one generator update per step.

    The generator minimizes ``w * l_g + l_2``; the discriminator minimizes the
    mean patch cross-entropy of real (label 1) versus generated (label 0)
    pairs.  The learning rate follows :func:`lr_at_epoch`.
    """
    if not pairs:
        raise ValueError("training needs at least one pair")
    cfg = train_config
    rng = np.random.default_rng(cfg.seed)
    dtype = np.float32 if cfg.float32 else np.float64
    if gen_params is None:
        gen_params = init_generator_params(gen_config, seed=cfg.seed)
    if disc_params is None:
        disc_params = init_discriminator_params(seed=cfg.seed + 1, channels=cfg.disc_channels)
    gen = _cast(gen_params, dtype)
    disc = _cast(disc_params, dtype)
    opt_g = Adam(gen, cfg.beta1, cfg.beta2)
    opt_d = Adam(disc, cfg.beta1, cfg.beta2)

    n = len(pairs)
    batch = min(cfg.batch_size, n)
    steps_per_epoch = math.ceil(n / batch)
    if cfg.steps is not None:
        total = cfg.steps
    elif cfg.epochs is not None:
        total = cfg.epochs * steps_per_epoch
    else:
        raise ValueError("TrainConfig needs steps or epochs")

    history = History()
    perm = rng.permutation(n)
    cursor = 0
    with tc.default_dtype(dtype):
        for step in range(total):
            epoch = step // steps_per_epoch
            lr = lr_at_epoch(cfg, epoch)
            if cursor + batch > n:
                perm = rng.permutation(n)
                cursor = 0
            idx = sorted(perm[cursor : cursor + batch], key=lambda i: pairs[i].view != "PA")
            cursor += batch

            rgbs, maps = [], []
            for i in idx:
                a, m = augment(pairs[i].rgb, pairs[i].curve_map, rng, cfg)
                rgbs.append(a)
                maps.append(m)
            x = np.stack(rgbs).astype(dtype)
            y = np.stack(maps).astype(dtype)
            views = [pairs[i].view for i in idx]

            with tc.no_grad():
                fake = _forward_views(x, views, gen_config, _frozen(gen))
            loss_d = loss_discriminator(discriminator_forward(x, y, disc),
                                        discriminator_forward(x, fake.data, disc))
            opt_d.step(tc.backward(loss_d, disc), lr)

            fake = _forward_views(x, views, gen_config, gen)
            kappa = tc.sigmoid(discriminator_forward(x, fake, _frozen(disc)))
            lg = loss_generator(kappa, 1.0)
            l2 = loss_mse(fake, Tensor(y))
            total_loss = loss_total(lg, l2, cfg.loss_weight_g)
            opt_g.step(tc.backward(total_loss, gen), lr)

            row = dict(step=step, lr=lr, loss_g=lg.item(), loss_mse=l2.item(),
                       loss_total=total_loss.item(), loss_d=loss_d.item())
            history.rows.append(row)
            if log_every and (step % log_every == 0 or step == total - 1):
                logger.info("step %d lr %.2e l2 %.4f lg %.3f ld %.3f", step, lr, row["loss_mse"], row["loss_g"], row["loss_d"])

    return TrainResult(_cast(gen, np.float64), _cast(disc, np.float64), history)


def write_history_csv(history: History, path) -> None:
    buf = io.StringIO(newline="")
    writer = csv.DictWriter(buf, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in history.rows:
        writer.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in HISTORY_COLUMNS})
    imageio.atomic_write_text(path, buf.getvalue())
