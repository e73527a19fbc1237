"""Forward-process noise schedules.

Discrete-time formulation: beta_t is the per-step noise variance, alpha_t =
1 - beta_t, alpha_bar_t the cumulative product. The signal coefficient
sqrt(alpha_bar) decreases monotonically in t while the noise coefficient
sqrt(1 - alpha_bar) increases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SCHEDULE_KINDS = ("linear", "cosine")


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    timesteps: int
    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.shape != (self.timesteps,):
            raise ValueError("betas must have one entry per timestep")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))


def make_schedule(kind: str, timesteps: int) -> NoiseSchedule:
    """Build a schedule; beta ranges follow the common DDPM settings scaled
    by 1000/T so shorter chains keep a comparable total noise budget."""
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    if kind == "linear":
        scale = 1000.0 / timesteps
        betas = np.linspace(scale * 1e-4, min(scale * 0.02, 0.5), timesteps)
    elif kind == "cosine":
        def bar(u: float) -> float:
            return math.cos((u + 0.008) / 1.008 * math.pi / 2.0) ** 2

        betas = np.empty(timesteps)
        for t in range(timesteps):
            betas[t] = min(1.0 - bar((t + 1) / timesteps) / bar(t / timesteps), 0.999)
        betas = np.clip(betas, 1e-8, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(kind=kind, timesteps=timesteps, betas=betas)
