"""Flat key-value configuration and run-directory plumbing for the CLI.

Precedence, lowest to highest: built-in defaults, --size preset, config
file, --set overrides. Every command snapshots the resolved configuration
into its run directory so an artifact can always be traced to the exact
settings that produced it.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence, Union

from cellforge.diffusion import DiffusionConfig
from cellforge.finetune import FinetuneConfig
from cellforge.reward import ClassifierConfig, RewardConfig

DEFAULTS = {
    "seed": 0,
    "data.image_size": 32,
    "data.per_class_train": 128,
    "data.per_class_test": 32,
    "diffusion.base_channels": 16,
    "diffusion.channel_mults": (1, 2, 4),
    "diffusion.emb_dim": 96,
    "diffusion.timesteps": 200,
    "diffusion.schedule": "cosine",
    "diffusion.epochs": 60,
    "diffusion.batch_size": 64,
    "diffusion.learning_rate": 2e-4,
    "diffusion.ema_decay": 0.999,
    "classifier.width": 32,
    "classifier.feature_dim": 64,
    "classifier.epochs": 30,
    "classifier.batch_size": 64,
    "classifier.learning_rate": 2e-3,
    "reward.hidden_dim": 128,
    "reward.epochs": 300,
    "reward.batch_size": 64,
    "reward.learning_rate": 3e-3,
    "reward.validation_fraction": 0.1,
    "reward.patience": 60,
    "reward.lambda_real": 1.0,
    "finetune.beta_real": 1.0,
    "finetune.epochs": 20,
    "finetune.synthetic_batch_size": 64,
    "finetune.real_batch_size": 64,
    "finetune.learning_rate": "auto",
    "finetune.guidance_scale": 1.0,
    "finetune.subtype_weight": 1.0,
    "feedback.images_per_class": 64,
    "eval.k": 5,
    "eval.samples_per_class": 64,
    "eval.sample_seed": 1000,
    "ablate.fractions": (0.0, 0.1, 0.5, 1.0),
    "ablate.samples_per_class": 32,
    "subtype.parent": "M5",
    "subtype.per_child": 24,
}

# desk: 32x32, 16 classes, 128 train / 32 test per class (the defaults).
# paper: 64x64 with the published per-class feedback pool of 256 images.
SIZE_PRESETS = {
    "desk": {},
    "paper": {"data.image_size": 64, "feedback.images_per_class": 256},
}


class CliError(Exception):
    """A user-fixable failure; rendered as a structured error on stderr."""

    def __init__(self, message: str, hint: Optional[str] = None):
        super().__init__(message)
        self.hint = hint


def parse_value(raw: str):
    raw = raw.strip()
    if "," in raw:
        return tuple(parse_value(part) for part in raw.split(","))
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def load_config_file(path: Union[str, Path]) -> dict:
    """Parse `key = value` lines; `#` starts a comment, blanks are skipped."""
    path = Path(path)
    if not path.is_file():
        raise CliError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = parse_value(raw)
    return values


def resolve_config(
    size: str = "desk",
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[dict] = None,
) -> dict:
    if size not in SIZE_PRESETS:
        raise CliError(f"unknown size preset {size!r}; choose from {sorted(SIZE_PRESETS)}")
    cfg = dict(DEFAULTS)
    cfg.update(SIZE_PRESETS[size])
    for layer in (load_config_file(config_path) if config_path else {}, overrides or {}):
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise CliError(
                    f"unknown config key {key!r}",
                    hint="configs/desk.cfg documents every key",
                )
            cfg[key] = value
    return cfg


def _as_tuple(value) -> tuple:
    return value if isinstance(value, tuple) else (value,)


def diffusion_config(cfg: dict) -> DiffusionConfig:
    return DiffusionConfig(
        image_size=int(cfg["data.image_size"]),
        base_channels=int(cfg["diffusion.base_channels"]),
        channel_mults=tuple(int(m) for m in _as_tuple(cfg["diffusion.channel_mults"])),
        emb_dim=int(cfg["diffusion.emb_dim"]),
        timesteps=int(cfg["diffusion.timesteps"]),
        schedule=str(cfg["diffusion.schedule"]),
        epochs=int(cfg["diffusion.epochs"]),
        batch_size=int(cfg["diffusion.batch_size"]),
        learning_rate=float(cfg["diffusion.learning_rate"]),
        ema_decay=float(cfg["diffusion.ema_decay"]),
        seed=int(cfg["seed"]),
    )


def classifier_config(
    cfg: dict, *, time_conditioned: bool = False, max_timestep: int = 0
) -> ClassifierConfig:
    return ClassifierConfig(
        width=int(cfg["classifier.width"]),
        feature_dim=int(cfg["classifier.feature_dim"]),
        epochs=int(cfg["classifier.epochs"]),
        batch_size=int(cfg["classifier.batch_size"]),
        learning_rate=float(cfg["classifier.learning_rate"]),
        seed=int(cfg["seed"]),
        time_conditioned=time_conditioned,
        max_timestep=max_timestep,
    )


def reward_config(cfg: dict) -> RewardConfig:
    return RewardConfig(
        hidden_dim=int(cfg["reward.hidden_dim"]),
        epochs=int(cfg["reward.epochs"]),
        batch_size=int(cfg["reward.batch_size"]),
        learning_rate=float(cfg["reward.learning_rate"]),
        validation_fraction=float(cfg["reward.validation_fraction"]),
        patience=int(cfg["reward.patience"]),
        seed=int(cfg["seed"]),
    )


def finetune_config(cfg: dict, mode: str) -> FinetuneConfig:
    rate = cfg["finetune.learning_rate"]
    return FinetuneConfig(
        mode=mode,
        beta_real=float(cfg["finetune.beta_real"]),
        epochs=int(cfg["finetune.epochs"]),
        synthetic_batch_size=int(cfg["finetune.synthetic_batch_size"]),
        real_batch_size=int(cfg["finetune.real_batch_size"]),
        learning_rate=None if rate == "auto" else float(rate),
        guidance_scale=float(cfg["finetune.guidance_scale"]),
        subtype_weight=float(cfg["finetune.subtype_weight"]),
        seed=int(cfg["seed"]),
    )


def new_run_dir(out: Union[str, Path], command: str) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = out / f"{command}-{stamp}"
    suffix = 1
    while path.exists():
        path = out / f"{command}-{stamp}-{suffix}"
        suffix += 1
    path.mkdir()
    return path


def write_snapshot(
    run_dir: Path,
    command: str,
    cfg: dict,
    inputs: Optional[dict] = None,
    argv: Optional[Sequence[str]] = None,
) -> None:
    payload = {
        "command": command,
        "argv": list(argv) if argv is not None else sys.argv[1:],
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(cfg.items())},
        "inputs": {k: str(v) for k, v in (inputs or {}).items()},
    }
    (run_dir / "config.json").write_text(json.dumps(payload, indent=2) + "\n")


def latest_run(out: Union[str, Path], command: str) -> Optional[Path]:
    """Most recent run directory for a command (names sort by timestamp)."""
    runs = sorted(p for p in Path(out).glob(f"{command}-*") if p.is_dir())
    return runs[-1] if runs else None


def require_artifact(
    out: Union[str, Path],
    command: str,
    relative: str,
    *,
    flag: str,
    explicit: Optional[Union[str, Path]] = None,
) -> Path:
    """Resolve an upstream artifact, preferring an explicit path.

    A missing artifact is a user error naming the command that produces it.
    """
    if explicit is not None:
        path = Path(explicit)
        if not path.exists():
            raise CliError(f"{path} does not exist (from {flag})")
        return path
    run = latest_run(out, command)
    if run is not None and (run / relative).exists():
        return run / relative
    raise CliError(
        f"no {relative} from a `{command}` run found under {out}",
        hint=f"run `cellforge {command}` first, or pass {flag}",
    )
