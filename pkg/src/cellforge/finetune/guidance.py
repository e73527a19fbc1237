"""Automatic feedback: classifier-guided sampling from the generator.

A noise-aware classifier (trained on forward-noised images at every
timestep) supplies the class-likelihood gradient; sampling shifts each
reverse-step mean by scale * posterior_variance * grad log p(class | x_t, t).
Generator weights are untouched: the guidance acts at sampling time, and the
run artifact records the classifier and scale that define the arm.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from cellforge.datagen.dataset import save_png
from cellforge.diffusion.checkpoint import save_checkpoint
from cellforge.diffusion.model import DiffusionState, GuidanceFn, forward_noise, sample
from cellforge.diffusion.schedule import NoiseSchedule
from cellforge.finetune.config import FinetuneConfig
from cellforge.records import ClassVocabulary, ImageRecord
from cellforge.reward.backbone import Classifier, ClassifierConfig, SmallConvNet, save_classifier


def train_noisy_classifier(
    records: Sequence[ImageRecord],
    vocabulary: ClassVocabulary,
    schedule: NoiseSchedule,
    config: ClassifierConfig = ClassifierConfig(),
) -> Classifier:
    """Train a time-conditioned classifier on forward-noised images.

    Every batch draws fresh timesteps and noise, so the classifier learns
    p(class | x_t, t) across the whole schedule, including t = 0.
    """
    if not records:
        raise ValueError("empty training set")
    config = replace(config, time_conditioned=True, max_timestep=schedule.timesteps)
    code_index = {c: i for i, c in enumerate(vocabulary.codes)}
    unknown = sorted({r.class_code for r in records} - set(code_index))
    if unknown:
        raise ValueError(f"records with classes outside the label set: {unknown}")

    torch.manual_seed(config.seed)
    net = SmallConvNet(
        len(vocabulary.codes),
        width=config.width,
        feature_dim=config.feature_dim,
        time_conditioned=True,
    )
    x_all = torch.from_numpy(np.stack([r.pixels for r in records])).permute(0, 3, 1, 2) * 2.0 - 1.0
    y_all = torch.tensor([code_index[r.class_code] for r in records], dtype=torch.long)
    gen = torch.Generator().manual_seed(config.seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    n = len(records)
    batch = min(config.batch_size, n)
    history = []
    for _ in range(config.epochs):
        perm = torch.randperm(n, generator=gen)
        losses = []
        for start in range(0, n - batch + 1, batch):
            idx = perm[start : start + batch]
            t = torch.randint(0, schedule.timesteps, (len(idx),), generator=gen)
            noise = torch.randn((len(idx), 3, x_all.shape[2], x_all.shape[3]), generator=gen)
            x_t = forward_noise(schedule, x_all[idx], t, noise)
            loss = F.cross_entropy(net(x_t, t), y_all[idx])
            if not torch.isfinite(loss):
                raise RuntimeError("non-finite classifier loss")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        history.append(float(np.mean(losses)))
    net.eval()
    return Classifier(network=net, vocabulary=vocabulary, config=config, loss_history=history)


def classifier_guidance(classifier: Classifier, scale: float) -> GuidanceFn:
    """Reverse-step mean shift: scale * variance * grad log p(y | x_t, t).

    The hook builds its gradient with autograd only; it never touches the
    sampler's random stream, so scale 0 reproduces unguided samples bit for
    bit.
    """
    net = classifier.network
    if not net.time_conditioned:
        raise ValueError("guidance needs a time-conditioned classifier")

    def hook(x_t: torch.Tensor, t: int, y: torch.Tensor, variance: float) -> torch.Tensor:
        with torch.enable_grad():
            x = x_t.detach().clone().requires_grad_(True)
            t_vec = torch.full((x.shape[0],), int(t), dtype=torch.long)
            log_probs = F.log_softmax(net(x, t_vec), dim=1)
            chosen = log_probs.gather(1, y[:, None]).sum()
            (grad,) = torch.autograd.grad(chosen, x)
        return float(scale) * float(variance) * grad

    return hook


@dataclass
class GuidedModel:
    """A pretrained generator paired with its guidance classifier and scale."""

    state: DiffusionState
    classifier: Classifier
    scale: float


def guided_finetune(
    state: DiffusionState,
    classifier: Classifier,
    config: FinetuneConfig,
    run_dir: Optional[Union[str, Path]] = None,
) -> GuidedModel:
    """Build the automatic-feedback arm from a noise-aware classifier."""
    if classifier.vocabulary.codes != state.vocabulary.codes:
        raise ValueError(
            "classifier vocabulary does not match the generator's: "
            f"{classifier.vocabulary.codes} vs {state.vocabulary.codes}"
        )
    if not classifier.network.time_conditioned:
        raise ValueError("guidance needs a time-conditioned classifier")
    model = GuidedModel(state=state, classifier=classifier, scale=config.guidance_scale)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(asdict(config), indent=2) + "\n")
        save_checkpoint(state, run_dir / "checkpoint.pt")
        save_classifier(classifier, run_dir / "guidance_classifier.pt")
        tiles = []
        for code in state.vocabulary.codes:
            recs = sample_guided(model, code, 2, seed=0, id_prefix="grid")
            tiles.append(np.concatenate([r.pixels for r in recs], axis=1))
        save_png(run_dir / "samples.png", np.concatenate(tiles, axis=0))
    return model


def sample_guided(
    model: GuidedModel,
    class_code: str,
    n: int,
    seed: int,
    *,
    batch_size: Optional[int] = None,
    id_prefix: str = "gsyn",
) -> list[ImageRecord]:
    """Draw guided samples; seed semantics match unguided sampling."""
    hook = classifier_guidance(model.classifier, model.scale)
    return sample(
        model.state, class_code, n, seed,
        guidance=hook, batch_size=batch_size, id_prefix=id_prefix,
    )
