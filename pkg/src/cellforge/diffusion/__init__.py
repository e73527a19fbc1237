"""Class-conditional diffusion: schedules, denoiser, training, sampling."""

from cellforge.diffusion.schedule import NoiseSchedule, make_schedule
from cellforge.diffusion.unet import CondUNet
from cellforge.diffusion.model import (
    DiffusionConfig,
    DiffusionState,
    clone_state,
    extend_vocabulary,
    init_state,
    forward_noise,
    per_example_losses,
    per_sample_loss,
    pretrain,
    records_to_tensors,
    sample,
)
from cellforge.diffusion.checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "CondUNet",
    "DiffusionConfig",
    "DiffusionState",
    "clone_state",
    "extend_vocabulary",
    "init_state",
    "forward_noise",
    "per_example_losses",
    "per_sample_loss",
    "pretrain",
    "records_to_tensors",
    "sample",
    "load_checkpoint",
    "save_checkpoint",
]
