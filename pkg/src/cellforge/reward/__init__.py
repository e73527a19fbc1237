"""Plausibility reward model trained from binary feedback."""

from cellforge.reward.backbone import (
    Classifier,
    ClassifierConfig,
    SmallConvNet,
    classify_records,
    embed_records,
    load_classifier,
    save_classifier,
    train_classifier,
)
from cellforge.reward.dataset import RewardExample, build_feedback_dataset
from cellforge.reward.model import (
    RewardConfig,
    RewardHead,
    RewardModel,
    load_reward,
    predict_reward,
    predict_reward_batch,
    reward_accuracy,
    reward_auc,
    reward_loss_terms,
    save_reward,
    train_reward,
)

__all__ = [
    "Classifier",
    "ClassifierConfig",
    "SmallConvNet",
    "classify_records",
    "embed_records",
    "load_classifier",
    "save_classifier",
    "train_classifier",
    "RewardExample",
    "build_feedback_dataset",
    "RewardConfig",
    "RewardHead",
    "RewardModel",
    "load_reward",
    "predict_reward",
    "predict_reward_batch",
    "reward_accuracy",
    "reward_auc",
    "reward_loss_terms",
    "save_reward",
    "train_reward",
]
