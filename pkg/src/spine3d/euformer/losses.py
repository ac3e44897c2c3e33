from __future__ import annotations

import numpy as np

from .. import tensor_core as tc
from ..tensor_core import Tensor

KAPPA_EPS = 1e-7


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def loss_generator(kappa, y) -> Tensor:
    """Summed binary cross-entropy of discriminator probabilities ``kappa``."""
    k = tc.clip(_as_tensor(kappa), KAPPA_EPS, 1.0 - KAPPA_EPS)
    y = np.broadcast_to(np.asarray(y, dtype=k.dtype), k.shape)
    terms = tc.log(k) * y + tc.log(1.0 - k) * (1.0 - y)
    return -terms.sum()


def loss_mse(gen, gt) -> Tensor:
    """Mean squared error over samples and pixels."""
    a, b = _as_tensor(gen), _as_tensor(gt)
    if a.shape != b.shape:
        raise tc.ShapeError(f"generated {a.shape} and ground truth {b.shape} differ")
    diff = a - b
    return (diff * diff).mean()


def loss_total(lg, l2, w: float = 0.01):
    return lg * w + l2


def loss_discriminator(logits_real: Tensor, logits_fake: Tensor) -> Tensor:
    """Mean patch cross-entropy: real pairs labelled 1, generated pairs 0."""
    real = loss_generator(tc.sigmoid(logits_real), 1.0) * (1.0 / logits_real.size)
    fake = loss_generator(tc.sigmoid(logits_fake), 0.0) * (1.0 / logits_fake.size)
    return (real + fake) * 0.5
