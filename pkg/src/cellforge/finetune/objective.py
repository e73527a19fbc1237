"""Reward-weighted and combined-loss finetuning of a pretrained generator.

The objective is a reward-weighted denoising loss over the fixed synthetic
pool that received feedback, plus beta_real times the plain denoising loss
over real images. Rewards are constants: no gradient reaches the reward
model, and its parameters are untouched. Concept finetuning adds a third
stream of subtype-labeled images whose weights come from a subtype
classifier.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch

from cellforge.datagen.dataset import save_png
from cellforge.diffusion.checkpoint import save_checkpoint
from cellforge.diffusion.model import (
    DiffusionState,
    clone_state,
    ema_update,
    per_example_losses,
    records_to_tensors,
    sample,
)
from cellforge.finetune.config import FinetuneConfig
from cellforge.finetune.subtype import SubtypeClassifier, subtype_probabilities
from cellforge.records import ImageRecord
from cellforge.reward.model import RewardModel, predict_reward_batch

LOSS_HEADER = ["epoch", "syn_term", "real_term", "total"]


def resolve_learning_rate(state: DiffusionState, config: FinetuneConfig) -> float:
    if config.learning_rate is not None:
        return config.learning_rate
    return state.config.learning_rate / 10.0


def _finetune_loop(
    state: DiffusionState,
    synthetic: Sequence[ImageRecord],
    rewards: Optional[np.ndarray],
    real_set: Sequence[ImageRecord],
    config: FinetuneConfig,
    subtype_set: Sequence[ImageRecord] = (),
    subtype_weights: Optional[np.ndarray] = None,
) -> tuple[DiffusionState, list[tuple]]:
    """Shared optimization loop; streams weighted by constants.

    Per batch the generator draws, in a fixed order, timesteps and noise for
    the synthetic batch, then for the real batch, then (only when present)
    for the subtype batch; a stream that is absent consumes no randomness,
    so dropping a stream leaves the others' draws bit-identical.
    """
    out = clone_state(state)
    net = out.network
    net.train()
    schedule = out.schedule
    lr = resolve_learning_rate(state, config)
    optimizer = torch.optim.Adam(net.parameters(), lr=lr)
    gen = torch.Generator().manual_seed(config.seed)

    if synthetic:
        x_syn, y_syn = records_to_tensors(synthetic, out.vocabulary)
        r_syn = torch.from_numpy(np.asarray(rewards, dtype=np.float32))
    if real_set:
        x_real, y_real = records_to_tensors(real_set, out.vocabulary)
    if subtype_set:
        x_sub, y_sub = records_to_tensors(subtype_set, out.vocabulary)
        w_sub = torch.from_numpy(np.asarray(subtype_weights, dtype=np.float32))

    n_real = len(real_set)
    batch_real = min(config.real_batch_size, n_real) if n_real else 0
    rows: list[tuple] = []
    t_max = schedule.timesteps

    def stream_losses(x_all, y_all, idx):
        t = torch.randint(0, t_max, (len(idx),), generator=gen)
        noise = torch.randn((len(idx), *x_all.shape[1:]), generator=gen)
        return per_example_losses(net, schedule, x_all[idx], y_all[idx], t, noise)

    for epoch in range(config.epochs):
        if synthetic:
            n = len(synthetic)
            batch = min(config.synthetic_batch_size, n)
            perm = torch.randperm(n, generator=gen)
            starts = range(0, n, batch)
        else:
            starts = range(0, n_real, batch_real)
        sums = np.zeros(3)
        n_batches = 0
        for start in starts:
            syn_term = torch.zeros(())
            sub_term = torch.zeros(())
            if synthetic:
                idx = perm[start : start + batch]
                syn_term = (r_syn[idx] * stream_losses(x_syn, y_syn, idx)).mean()
            if n_real:
                # Drawn and reported even at beta_real 0 so every beta value
                # sees identical randomness; the 0 multiplier still zeroes
                # the real gradients exactly.
                ridx = torch.randint(0, n_real, (batch_real,), generator=gen)
                real_term = stream_losses(x_real, y_real, ridx).mean()
            else:
                real_term = torch.zeros(())
            if subtype_set:
                sidx = torch.randint(0, len(subtype_set), (min(config.synthetic_batch_size, len(subtype_set)),), generator=gen)
                sub_term = (w_sub[sidx] * stream_losses(x_sub, y_sub, sidx)).mean()
            total = syn_term + config.beta_real * real_term + config.subtype_weight * sub_term
            if not torch.isfinite(total):
                raise RuntimeError(f"non-finite finetune loss at epoch {epoch}")
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            ema_update(net, out.ema, out.config.ema_decay)
            out.step_counter += 1
            sums += (float(syn_term.detach()), float(real_term.detach()), float(total.detach()))
            n_batches += 1
        syn_m, real_m, total_m = (sums / max(n_batches, 1)).tolist()
        rows.append((epoch, syn_m, real_m, total_m))
        out.loss_history.append(total_m)
    net.eval()
    return out, rows


def reward_weighted_finetune(
    state: DiffusionState,
    reward_model: RewardModel,
    synthetic_set: Sequence[ImageRecord],
    real_set: Sequence[ImageRecord],
    config: FinetuneConfig,
    run_dir: Optional[Union[str, Path]] = None,
) -> DiffusionState:
    """Finetune on the feedback-scored synthetic pool plus real images.

    Each synthetic example's denoising loss is multiplied by its reward
    (continuous, in [0,1], computed once up front and treated as a
    constant); real examples enter unweighted, scaled by beta_real. The
    optimizer starts fresh at a rate one tenth of pretraining unless
    overridden.
    """
    if not synthetic_set:
        raise ValueError("synthetic set is empty; finetuning needs the feedback pool")
    if not real_set and config.beta_real > 0:
        raise ValueError("real set is empty but beta_real > 0")
    rewards = predict_reward_batch(reward_model, synthetic_set)
    out, rows = _finetune_loop(state, synthetic_set, rewards, real_set, config)
    if run_dir is not None:
        write_finetune_run(run_dir, config, out, rows, extra={"learning_rate_used": resolve_learning_rate(state, config)})
    return out


def real_only_finetune(
    state: DiffusionState,
    real_set: Sequence[ImageRecord],
    config: FinetuneConfig,
    run_dir: Optional[Union[str, Path]] = None,
) -> DiffusionState:
    """Finetune on the beta_real-weighted real denoising loss alone.

    The zero-feedback arm of the ablation: no synthetic pool exists, so the
    reward-weighted term is absent entirely.
    """
    if not real_set:
        raise ValueError("real set is empty")
    if config.beta_real == 0:
        raise ValueError("beta_real is 0: the objective would be identically zero")
    out, rows = _finetune_loop(state, (), None, real_set, config)
    if run_dir is not None:
        write_finetune_run(run_dir, config, out, rows, extra={"learning_rate_used": resolve_learning_rate(state, config)})
    return out


def concept_finetune(
    state: DiffusionState,
    reward_model: RewardModel,
    subtype_classifier: SubtypeClassifier,
    synthetic_set: Sequence[ImageRecord],
    subtype_set: Sequence[ImageRecord],
    real_set: Sequence[ImageRecord],
    config: FinetuneConfig,
    run_dir: Optional[Union[str, Path]] = None,
) -> DiffusionState:
    """Reward-weighted finetuning plus a subtype-conditioned stream.

    subtype_set records carry subtype codes as their class_code; each one's
    denoising loss (conditioned on its subtype embedding) is weighted by the
    subtype classifier's probability of that code, teaching the extended
    class table what the subtypes look like. With subtype_weight 0 or an
    empty subtype_set the objective and the random draws reduce exactly to
    reward_weighted_finetune.
    """
    if not synthetic_set:
        raise ValueError("synthetic set is empty; finetuning needs the feedback pool")
    missing = sorted({r.class_code for r in subtype_set} - set(state.vocabulary.codes))
    if missing:
        raise ValueError(
            f"subtype codes {missing} not in the model vocabulary; extend it first"
        )
    rewards = predict_reward_batch(reward_model, synthetic_set)
    if config.subtype_weight == 0:
        subtype_set = ()
    weights = None
    if subtype_set:
        probs = subtype_probabilities(subtype_classifier, subtype_set)
        col = {c: i for i, c in enumerate(subtype_classifier.codes)}
        unknown = sorted({r.class_code for r in subtype_set} - set(col))
        if unknown:
            raise ValueError(f"subtype classifier does not cover codes {unknown}")
        weights = probs[np.arange(len(subtype_set)), [col[r.class_code] for r in subtype_set]]
    out, rows = _finetune_loop(
        state, synthetic_set, rewards, real_set, config,
        subtype_set=subtype_set, subtype_weights=weights,
    )
    if run_dir is not None:
        write_finetune_run(run_dir, config, out, rows, extra={"learning_rate_used": resolve_learning_rate(state, config)})
    return out


def write_finetune_run(
    run_dir: Union[str, Path],
    config: FinetuneConfig,
    state: DiffusionState,
    rows: Sequence[tuple],
    *,
    extra: Optional[dict] = None,
    grid_per_class: int = 2,
    grid_seed: int = 0,
) -> Path:
    """Run directory: config snapshot, loss CSV, checkpoint, sample grid."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = asdict(config)
    snapshot.update(extra or {})
    (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2) + "\n")
    with open(run_dir / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_HEADER)
        writer.writerows(rows)
    save_checkpoint(state, run_dir / "checkpoint.pt")
    if grid_per_class > 0:
        tiles = []
        for code in state.vocabulary.codes:
            recs = sample(state, code, grid_per_class, seed=grid_seed, id_prefix="grid")
            tiles.append(np.concatenate([r.pixels for r in recs], axis=1))
        save_png(run_dir / "samples.png", np.concatenate(tiles, axis=0))
    return run_dir
