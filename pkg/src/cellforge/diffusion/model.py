"""Conditional denoising model: training, sampling, per-example losses.

Images live in [0, 1] as float32 HxWx3 at the package boundary and in
[-1, 1] as (B, 3, H, W) tensors internally. The forward process adds
Gaussian noise per the schedule; the network predicts that noise and the
training objective is the per-pixel mean squared error.
"""

from __future__ import annotations

import copy
import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from cellforge.records import ClassVocabulary, ImageRecord
from cellforge.diffusion.schedule import NoiseSchedule, make_schedule
from cellforge.diffusion.unet import CondUNet

# Guidance hook: (x_t, t, y, posterior_variance) -> additive shift for the
# reverse-step mean. Must not consume the sampler's RNG stream so that a
# zero-shift hook reproduces unguided sampling bit for bit.
GuidanceFn = Callable[[torch.Tensor, int, torch.Tensor, float], torch.Tensor]


@dataclass(frozen=True)
class DiffusionConfig:
    image_size: int = 32
    base_channels: int = 16
    channel_mults: tuple[int, ...] = (1, 2, 4)
    emb_dim: int = 96
    timesteps: int = 200
    schedule: str = "cosine"
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 2e-4
    ema_decay: float = 0.999
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.ema_decay < 1.0):
            raise ValueError("ema_decay must be in (0, 1)")
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")


@dataclass
class DiffusionState:
    """Trained (or initialized) model plus everything needed to resume."""

    network: CondUNet
    ema: dict[str, torch.Tensor]
    schedule: NoiseSchedule
    vocabulary: ClassVocabulary
    config: DiffusionConfig
    step_counter: int = 0
    loss_history: list[float] = field(default_factory=list)

    def validate(self) -> None:
        params = dict(self.network.named_parameters())
        if set(params) != set(self.ema):
            raise ValueError("EMA keys do not match network parameters")
        for name, p in params.items():
            if self.ema[name].shape != p.shape:
                raise ValueError(f"EMA shape mismatch for {name}")

    def ema_network(self) -> CondUNet:
        """Copy of the network carrying the EMA weights (used for sampling)."""
        net = copy.deepcopy(self.network)
        with torch.no_grad():
            for name, p in net.named_parameters():
                p.copy_(self.ema[name])
        net.eval()
        return net


def clone_state(state: DiffusionState) -> DiffusionState:
    return DiffusionState(
        network=copy.deepcopy(state.network),
        ema={k: v.clone() for k, v in state.ema.items()},
        schedule=state.schedule,
        vocabulary=state.vocabulary,
        config=state.config,
        step_counter=state.step_counter,
        loss_history=list(state.loss_history),
    )


def init_state(vocabulary: ClassVocabulary, config: DiffusionConfig) -> DiffusionState:
    torch.manual_seed(config.seed)
    network = CondUNet(
        num_classes=len(vocabulary),
        base_channels=config.base_channels,
        channel_mults=config.channel_mults,
        emb_dim=config.emb_dim,
    )
    ema = {k: v.detach().clone() for k, v in network.named_parameters()}
    schedule = make_schedule(config.schedule, config.timesteps)
    return DiffusionState(
        network=network,
        ema=ema,
        schedule=schedule,
        vocabulary=vocabulary,
        config=config,
    )


def ema_update(network: CondUNet, ema: dict[str, torch.Tensor], decay: float) -> None:
    with torch.no_grad():
        for name, p in network.named_parameters():
            ema[name].mul_(decay).add_(p, alpha=1.0 - decay)


def records_to_tensors(
    records: Sequence[ImageRecord], vocabulary: ClassVocabulary
) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack records into ([-1, 1] image tensor, class index tensor)."""
    if not records:
        raise ValueError("empty record list")
    pixels = np.stack([r.pixels for r in records])
    x = torch.from_numpy(pixels).permute(0, 3, 1, 2).float() * 2.0 - 1.0
    y = torch.tensor([vocabulary.index(r.class_code) for r in records], dtype=torch.long)
    return x, y


def _gather(values: np.ndarray, t: torch.Tensor, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return torch.from_numpy(values).to(dtype)[t][:, None, None, None]


def forward_noise(
    schedule: NoiseSchedule, x0: torch.Tensor, t: torch.Tensor, noise: torch.Tensor
) -> torch.Tensor:
    """x_t drawn from the forward process given x0 and the noise draw."""
    ab = _gather(schedule.alpha_bars, t, x0.dtype)
    return ab.sqrt() * x0 + (1.0 - ab).sqrt() * noise


def per_example_losses(
    network: CondUNet,
    schedule: NoiseSchedule,
    x0: torch.Tensor,
    y: torch.Tensor,
    t: torch.Tensor,
    noise: torch.Tensor,
) -> torch.Tensor:
    """Denoising squared error per example (mean over pixels), shape (B,).

    Follows x0's dtype, so double-precision numerical checks can run the
    same code path.
    """
    x_t = forward_noise(schedule, x0, t, noise)
    pred = network(x_t, t, y)
    return (pred - noise).pow(2).flatten(1).mean(dim=1)


def pretrain(
    train_set: Sequence[ImageRecord],
    vocabulary: ClassVocabulary,
    config: DiffusionConfig,
) -> DiffusionState:
    """Train the conditional denoiser from scratch on real images.

    Deterministic given config.seed (single-device CPU math). Records one
    mean loss per epoch in state.loss_history. Raises on an empty dataset or
    a non-finite loss.
    """
    if not train_set:
        raise ValueError("training set is empty")
    state = init_state(vocabulary, config)
    x_all, y_all = records_to_tensors(train_set, vocabulary)
    if x_all.shape[2] != config.image_size:
        raise ValueError(
            f"config.image_size={config.image_size} but images are {x_all.shape[2]}px"
        )
    gen = torch.Generator().manual_seed(config.seed)
    optimizer = torch.optim.Adam(state.network.parameters(), lr=config.learning_rate)
    n = len(train_set)
    batch = min(config.batch_size, n)
    for epoch in range(config.epochs):
        perm = torch.randperm(n, generator=gen)
        epoch_losses = []
        for start in range(0, n - batch + 1, batch):
            idx = perm[start : start + batch]
            x0, y = x_all[idx], y_all[idx]
            t = torch.randint(0, config.timesteps, (len(idx),), generator=gen)
            noise = torch.randn(x0.shape, generator=gen)
            loss = per_example_losses(state.network, state.schedule, x0, y, t, noise).mean()
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch} step {state.step_counter}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            ema_update(state.network, state.ema, config.ema_decay)
            state.step_counter += 1
            epoch_losses.append(float(loss.detach()))
        if epoch_losses:
            state.loss_history.append(float(np.mean(epoch_losses)))
    state.network.eval()
    return state


def _posterior_coefficients(schedule: NoiseSchedule):
    ab = schedule.alpha_bars
    ab_prev = np.concatenate([[1.0], ab[:-1]])
    betas = schedule.betas
    variance = betas * (1.0 - ab_prev) / (1.0 - ab)
    coef_x0 = betas * np.sqrt(ab_prev) / (1.0 - ab)
    coef_xt = (1.0 - ab_prev) * np.sqrt(schedule.alphas) / (1.0 - ab)
    return variance, coef_x0, coef_xt


def sample(
    state: DiffusionState,
    class_code: str,
    n: int,
    seed: int,
    *,
    guidance: Optional[GuidanceFn] = None,
    batch_size: Optional[int] = None,
    id_prefix: str = "syn",
) -> list[ImageRecord]:
    """Ancestral sampling of n images conditioned on class_code.

    Uses the EMA weights. Deterministic given (state, class_code, n, seed);
    the guidance hook shifts reverse-step means but never touches the noise
    stream, so guidance that returns zeros reproduces unguided output
    exactly. Pixels are quantized to the 8-bit grid.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    class_idx = state.vocabulary.index(class_code)
    net = state.ema_network()
    schedule = state.schedule
    size = state.config.image_size
    variance, coef_x0, coef_xt = _posterior_coefficients(schedule)
    sqrt_ab = np.sqrt(schedule.alpha_bars)
    sqrt_1mab = np.sqrt(1.0 - schedule.alpha_bars)

    gen = torch.Generator().manual_seed(
        (int(seed) & 0x7FFFFFFF) * 65536 + (zlib.crc32(class_code.encode()) & 0xFFFF)
    )
    batch = batch_size or state.config.batch_size
    records: list[ImageRecord] = []
    with torch.no_grad():
        done = 0
        while done < n:
            b = min(batch, n - done)
            x = torch.randn((b, 3, size, size), generator=gen)
            y = torch.full((b,), class_idx, dtype=torch.long)
            for t in reversed(range(schedule.timesteps)):
                t_vec = torch.full((b,), t, dtype=torch.long)
                eps = net(x, t_vec, y)
                x0_hat = ((x - sqrt_1mab[t] * eps) / sqrt_ab[t]).clamp(-1.0, 1.0)
                mean = coef_x0[t] * x0_hat + coef_xt[t] * x
                if guidance is not None:
                    mean = mean + guidance(x, t, y, float(variance[t]))
                if t > 0:
                    x = mean + np.sqrt(variance[t]) * torch.randn(x.shape, generator=gen)
                else:
                    x = mean
            pixels = ((x + 1.0) / 2.0).clamp(0.0, 1.0).permute(0, 2, 3, 1).numpy()
            pixels = (np.round(pixels * 255.0) / 255.0).astype(np.float32)
            for i in range(b):
                records.append(
                    ImageRecord(
                        id=f"{id_prefix}-{class_code.lower()}-{seed}-{done + i:04d}",
                        pixels=pixels[i],
                        class_code=class_code,
                        source="synthetic",
                        provenance={
                            "sample_seed": seed,
                            "index": done + i,
                            "model_step": state.step_counter,
                            "guided": guidance is not None,
                        },
                    )
                )
            done += b
    return records


def per_sample_loss(
    state: DiffusionState,
    image: np.ndarray,
    class_code: str,
    seed: int,
    *,
    n_draws: int = 4,
) -> float:
    """Monte-Carlo denoising loss for one image under one declared class.

    Averages n_draws independent (timestep, noise) draws; deterministic
    given seed. Nonnegative by construction.
    """
    class_idx = state.vocabulary.index(class_code)
    x0 = torch.from_numpy(np.asarray(image, dtype=np.float32)).permute(2, 0, 1)[None] * 2.0 - 1.0
    y = torch.tensor([class_idx], dtype=torch.long)
    gen = torch.Generator().manual_seed(int(seed) & 0x7FFFFFFFFFFF)
    total = 0.0
    with torch.no_grad():
        for _ in range(n_draws):
            t = torch.randint(0, state.schedule.timesteps, (1,), generator=gen)
            noise = torch.randn(x0.shape, generator=gen)
            total += float(
                per_example_losses(state.network, state.schedule, x0, y, t, noise)[0]
            )
    return total / n_draws


def extend_vocabulary(state: DiffusionState, parent: str) -> DiffusionState:
    """New state whose vocabulary and class table include parent's subtypes.

    New embedding rows start as copies of the parent row (both live and EMA
    weights) so subtype conditioning begins from the parent's behavior.
    """
    extended = state.vocabulary.extended_with_subtypes(parent)
    if extended is state.vocabulary:
        return state
    new_state = clone_state(state)
    parent_rows = {
        extended.index(child): extended.index(parent)
        for child in extended.subtype_map[parent]
    }
    new_state.network.grow_class_table(len(extended), parent_rows)
    old_rows = state.ema["class_embed.weight"]
    grown = torch.empty(len(extended), old_rows.shape[1])
    grown[: len(state.vocabulary)] = old_rows
    for row, parent_row in parent_rows.items():
        grown[row] = old_rows[parent_row]
    new_state.ema["class_embed.weight"] = grown
    new_state.vocabulary = extended
    new_state.validate()
    return new_state
