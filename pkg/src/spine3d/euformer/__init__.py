"""Channel-attention U-shaped generator, patch discriminator, losses and trainer."""

from .config import EUFormerConfig, TrainConfig, TrainingPair
from .flops import flops_attention
from .layers import CmhaParams, EtbParams, LeffParams, cmha_forward, downsample, etb_forward, leff_forward, upsample
from .losses import loss_discriminator, loss_generator, loss_mse, loss_total
from .model import (
    discriminator_forward,
    generator_forward,
    init_discriminator_params,
    init_generator_params,
    patch_grid,
)
