"""Feedback-fraction ablation: how much annotation does the loop need?

Each arm keeps a class-stratified fraction of the collected feedback,
retrains the reward model on it, refinetunes the pretrained generator,
samples a fresh synthetic training set, and scores it with the downstream
classifier on held-out real images. Fraction 0 is the no-feedback
baseline: no reward model exists and finetuning reduces to the
beta-weighted real denoising loss.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from cellforge.diffusion.model import DiffusionState, sample
from cellforge.evalx.downstream import downstream_eval
from cellforge.evalx.report import plot_ablation, write_ablation_csv
from cellforge.finetune.config import FinetuneConfig
from cellforge.finetune.objective import real_only_finetune, reward_weighted_finetune
from cellforge.records import FeedbackRecord, ImageRecord
from cellforge.reward.backbone import Classifier, ClassifierConfig
from cellforge.reward.dataset import build_feedback_dataset
from cellforge.reward.model import RewardConfig, train_reward

DEFAULT_FRACTIONS = (0.0, 0.1, 0.5, 1.0)


def subsample_feedback(
    feedback: Sequence[FeedbackRecord], fraction: float, seed: int
) -> list[FeedbackRecord]:
    """Class-stratified subsample keeping round(fraction * n) per class.

    Every class with any feedback keeps at least one record for fractions
    above 0, so no class silently drops out of reward training.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction outside [0, 1]: {fraction}")
    if fraction == 0.0:
        return []
    if fraction == 1.0:
        return list(feedback)
    by_class: dict[str, list[int]] = {}
    for i, rec in enumerate(feedback):
        by_class.setdefault(rec.declared_class, []).append(i)
    rng = np.random.default_rng(seed)
    kept: list[int] = []
    for code in sorted(by_class):
        indices = by_class[code]
        take = max(1, round(fraction * len(indices)))
        kept.extend(rng.permutation(indices)[:take].tolist())
    return [feedback[i] for i in sorted(kept)]


def ablation_feedback_fraction(
    state: DiffusionState,
    feedback: Sequence[FeedbackRecord],
    synthetic_pool: Sequence[ImageRecord],
    real_train: Sequence[ImageRecord],
    real_test: Sequence[ImageRecord],
    backbone: Classifier,
    *,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    lambda_real: float = 1.0,
    reward_config: RewardConfig = RewardConfig(),
    finetune_config: FinetuneConfig = FinetuneConfig(),
    downstream_config: ClassifierConfig = ClassifierConfig(),
    samples_per_class: int = 128,
    sample_seed: int = 0,
    subsample_seed: int = 0,
    run_dir: Optional[Union[str, Path]] = None,
) -> list[dict[str, float]]:
    """Downstream metrics per feedback fraction; optionally CSV + plot.

    All arms start from the same pretrained state and share the sampling
    and subsampling seeds, so the fraction is the only thing that varies.
    """
    for fraction in fractions:
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"fraction outside [0, 1]: {fraction}")
    if not feedback:
        raise ValueError("feedback pool is empty")
    pool_by_id = {r.id: r for r in synthetic_pool}
    rows: list[dict[str, float]] = []
    for fraction in fractions:
        kept = subsample_feedback(feedback, fraction, subsample_seed)
        if not kept:
            tuned = real_only_finetune(state, real_train, finetune_config)
        else:
            examples = build_feedback_dataset(
                kept, pool_by_id, real_train, state.vocabulary,
                seed=subsample_seed, lambda_real=lambda_real,
            )
            reward = train_reward(
                examples, lambda_real, reward_config, backbone=backbone
            )
            arm_pool = [pool_by_id[rec.image_id] for rec in kept]
            tuned = reward_weighted_finetune(
                state, reward, arm_pool, real_train, finetune_config
            )
        synthetic_train = [
            rec
            for code in state.vocabulary.codes
            for rec in sample(tuned, code, samples_per_class, seed=sample_seed,
                              id_prefix=f"abl{fraction}")
        ]
        scores = downstream_eval(
            synthetic_train, real_test, downstream_config, vocabulary=state.vocabulary
        )
        rows.append({"fraction": float(fraction), **scores})
    if run_dir is not None:
        run_dir = Path(run_dir)
        write_ablation_csv(rows, run_dir / "ablation.csv")
        plot_ablation(rows, run_dir / "ablation.png")
    return rows
