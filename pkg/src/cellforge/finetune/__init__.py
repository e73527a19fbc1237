"""Feedback-incorporation objectives for the pretrained generator."""

from cellforge.finetune.config import MODES, FinetuneConfig
from cellforge.finetune.guidance import (
    GuidedModel,
    classifier_guidance,
    guided_finetune,
    sample_guided,
    train_noisy_classifier,
)
from cellforge.finetune.objective import (
    LOSS_HEADER,
    concept_finetune,
    real_only_finetune,
    resolve_learning_rate,
    reward_weighted_finetune,
    write_finetune_run,
)
from cellforge.finetune.subtype import (
    SubtypeClassifier,
    subtype_accuracy,
    subtype_probabilities,
    subtype_recall,
    train_subtype_classifier,
)

__all__ = [
    "MODES",
    "FinetuneConfig",
    "GuidedModel",
    "classifier_guidance",
    "guided_finetune",
    "sample_guided",
    "train_noisy_classifier",
    "LOSS_HEADER",
    "concept_finetune",
    "real_only_finetune",
    "resolve_learning_rate",
    "reward_weighted_finetune",
    "write_finetune_run",
    "SubtypeClassifier",
    "subtype_accuracy",
    "subtype_probabilities",
    "subtype_recall",
    "train_subtype_classifier",
]
