"""Configuration shared by the three feedback-incorporation modes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

MODES = ("reward_weighted", "classifier_guided", "concept_combined")


@dataclass(frozen=True)
class FinetuneConfig:
    """Knobs for finetuning a pretrained generator with feedback.

    learning_rate None means one tenth of the pretraining rate. beta_real
    weighs the real-data denoising term; guidance_scale only matters in
    classifier_guided mode, subtype_weight only in concept_combined.
    """

    mode: str = "reward_weighted"
    beta_real: float = 1.0
    epochs: int = 20
    synthetic_batch_size: int = 64
    real_batch_size: int = 64
    learning_rate: Optional[float] = None
    guidance_scale: float = 1.0
    subtype_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not np.isfinite(self.beta_real) or self.beta_real < 0:
            raise ValueError(f"beta_real must be finite and >= 0, got {self.beta_real}")
        if self.subtype_weight < 0 or not np.isfinite(self.subtype_weight):
            raise ValueError(f"subtype_weight must be finite and >= 0, got {self.subtype_weight}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
