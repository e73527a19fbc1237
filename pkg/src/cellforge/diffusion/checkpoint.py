"""Checkpoint persistence for DiffusionState.

One archive holds network weights, EMA shadow, schedule, config, vocabulary,
and counters, so a load is a faithful resume point.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from cellforge.records import ClassVocabulary
from cellforge.diffusion.model import DiffusionConfig, DiffusionState
from cellforge.diffusion.schedule import NoiseSchedule
from cellforge.diffusion.unet import CondUNet

FORMAT_VERSION = 1


def save_checkpoint(state: DiffusionState, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "config": asdict(state.config),
        "schedule": {
            "kind": state.schedule.kind,
            "timesteps": state.schedule.timesteps,
            "betas": state.schedule.betas,
        },
        "vocabulary": {
            "codes": list(state.vocabulary.codes),
            "subtype_map": {k: list(v) for k, v in state.vocabulary.subtype_map.items()},
        },
        "network": state.network.state_dict(),
        "num_classes": state.network.num_classes,
        "ema": state.ema,
        "step_counter": state.step_counter,
        "loss_history": list(state.loss_history),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: str | Path) -> DiffusionState:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {version!r}")
    cfg_dict = dict(payload["config"])
    cfg_dict["channel_mults"] = tuple(cfg_dict["channel_mults"])
    config = DiffusionConfig(**cfg_dict)
    vocab = ClassVocabulary(
        codes=tuple(payload["vocabulary"]["codes"]),
        subtype_map={k: tuple(v) for k, v in payload["vocabulary"]["subtype_map"].items()},
    )
    schedule = NoiseSchedule(
        kind=payload["schedule"]["kind"],
        timesteps=int(payload["schedule"]["timesteps"]),
        betas=np.asarray(payload["schedule"]["betas"]),
    )
    network = CondUNet(
        num_classes=int(payload["num_classes"]),
        base_channels=config.base_channels,
        channel_mults=config.channel_mults,
        emb_dim=config.emb_dim,
    )
    network.load_state_dict(payload["network"])
    network.eval()
    state = DiffusionState(
        network=network,
        ema=payload["ema"],
        schedule=schedule,
        vocabulary=vocab,
        config=config,
        step_counter=int(payload["step_counter"]),
        loss_history=list(payload["loss_history"]),
    )
    state.validate()
    return state
