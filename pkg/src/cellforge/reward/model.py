"""Reward model: frozen classifier features plus a small head.

The head sees the backbone embedding of an image concatenated with a one-hot
encoding of the declared class and outputs a plausibility score in (0, 1).
Training minimizes a sum of squared errors over synthetic feedback examples
plus lambda_real times the sum over pseudo-labeled real anchors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from cellforge.records import ClassVocabulary, ImageRecord
from cellforge.reward.backbone import Classifier, ClassifierConfig, SmallConvNet, embed_records
from cellforge.reward.dataset import RewardExample


@dataclass(frozen=True)
class RewardConfig:
    hidden_dim: int = 128
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 3e-3
    validation_fraction: float = 0.1
    patience: int = 60
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")


class RewardHead(nn.Module):
    """Two hidden layers on [embedding | one-hot class], sigmoid output."""

    def __init__(self, embedding_dim: int, num_classes: int, hidden_dim: int = 128):
        super().__init__()
        self.fc1 = nn.Linear(embedding_dim + num_classes, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, hidden_dim)
        self.out = nn.Linear(hidden_dim, 1)

    def forward(self, features: torch.Tensor, class_onehot: torch.Tensor) -> torch.Tensor:
        h = torch.cat([features, class_onehot], dim=1)
        h = F.silu(self.fc1(h))
        h = F.silu(self.fc2(h))
        return torch.sigmoid(self.out(h)).squeeze(1)


@dataclass
class RewardModel:
    backbone: Classifier
    head: RewardHead
    vocabulary: ClassVocabulary
    config: RewardConfig
    lambda_real: float
    train_history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)


def reward_loss_terms(
    predictions: torch.Tensor,
    targets: torch.Tensor,
    is_real: torch.Tensor,
    lambda_real: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(total, synthetic_term, real_term), all sums, not means.

    total is computed as synthetic_term + lambda_real * real_term so the
    decomposition holds exactly, bit for bit.
    """
    if predictions.shape != targets.shape or predictions.shape != is_real.shape:
        raise ValueError("predictions, targets, and is_real must have matching shapes")
    sq = (targets - predictions) ** 2
    real_mask = is_real.to(sq.dtype)
    synthetic_term = (sq * (1.0 - real_mask)).sum()
    real_term = (sq * real_mask).sum()
    total = synthetic_term + lambda_real * real_term
    return total, synthetic_term, real_term


def _stratified_split(
    targets: np.ndarray, fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Indices of (train, validation), validation stratified by target."""
    val_parts = []
    for value in np.unique(targets):
        idx = np.flatnonzero(targets == value)
        if len(idx) < 2:
            continue
        take = max(1, int(round(fraction * len(idx)))) if fraction > 0 else 0
        take = min(take, len(idx) - 1)
        val_parts.append(rng.permutation(idx)[:take])
    val = np.sort(np.concatenate(val_parts)) if val_parts else np.empty(0, dtype=np.int64)
    train = np.setdiff1d(np.arange(len(targets)), val)
    return train, val


def _onehot(indices: torch.Tensor, num_classes: int) -> torch.Tensor:
    return F.one_hot(indices, num_classes).to(torch.float32)


def train_reward(
    examples: Sequence[RewardExample],
    lambda_real: float,
    config: RewardConfig = RewardConfig(),
    *,
    backbone: Classifier,
    vocabulary: Optional[ClassVocabulary] = None,
) -> RewardModel:
    """Fit the reward head on frozen backbone embeddings.

    lambda_real weighs the real-anchor term; at 0 the real examples are
    dropped before any random state is consumed, so they contribute exactly
    nothing. Refuses datasets whose targets are all one value. A stratified
    validation split picks the epoch whose head is kept.
    """
    if not np.isfinite(lambda_real) or lambda_real < 0:
        raise ValueError(f"lambda_real must be finite and >= 0, got {lambda_real}")
    vocab = vocabulary if vocabulary is not None else backbone.vocabulary
    active = [e for e in examples if not (e.is_real and lambda_real == 0.0)]
    if not active:
        raise ValueError("no examples to train on")
    targets_np = np.array([e.target for e in active], dtype=np.float64)
    if len(np.unique(targets_np)) < 2:
        raise ValueError("reward training needs both target values, got only "
                         f"{targets_np[0]:g}")
    unknown = sorted({e.class_code for e in active} - set(vocab.codes))
    if unknown:
        raise ValueError(f"examples with classes outside the vocabulary: {unknown}")

    features = torch.from_numpy(
        embed_records(backbone, [e.image for e in active]).astype(np.float32)
    )
    class_idx = torch.tensor([vocab.index(e.class_code) for e in active], dtype=torch.long)
    onehot = _onehot(class_idx, len(vocab.codes))
    targets = torch.from_numpy(targets_np.astype(np.float32))
    is_real = torch.tensor([e.is_real for e in active], dtype=torch.float32)

    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = _stratified_split(targets_np, config.validation_fraction, rng)
    torch.manual_seed(config.seed)
    head = RewardHead(backbone.network.embedding_dim, len(vocab.codes), config.hidden_dim)
    optimizer = torch.optim.Adam(head.parameters(), lr=config.learning_rate)
    gen = torch.Generator().manual_seed(config.seed)

    def split_loss(idx: np.ndarray) -> float:
        head.eval()
        with torch.no_grad():
            pred = head(features[idx], onehot[idx])
            total, _, _ = reward_loss_terms(pred, targets[idx], is_real[idx], lambda_real)
        return float(total)

    train_history, val_history = [], []
    best_val = np.inf
    best_state = {k: v.clone() for k, v in head.state_dict().items()}
    stale = 0
    n = len(train_idx)
    batch = min(config.batch_size, n)
    order_base = torch.from_numpy(train_idx)
    for _ in range(config.epochs):
        head.train()
        perm = order_base[torch.randperm(n, generator=gen)]
        epoch_total = 0.0
        for start in range(0, n, batch):
            idx = perm[start : start + batch]
            pred = head(features[idx], onehot[idx])
            total, _, _ = reward_loss_terms(pred, targets[idx], is_real[idx], lambda_real)
            if not torch.isfinite(total):
                raise RuntimeError("non-finite reward loss")
            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            epoch_total += float(total.detach())
        train_history.append(epoch_total)
        if len(val_idx):
            val = split_loss(val_idx)
            val_history.append(val)
            if val < best_val:
                best_val = val
                best_state = {k: v.clone() for k, v in head.state_dict().items()}
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    if len(val_idx):
        head.load_state_dict(best_state)
    head.eval()
    return RewardModel(
        backbone=backbone,
        head=head,
        vocabulary=vocab,
        config=config,
        lambda_real=lambda_real,
        train_history=train_history,
        val_history=val_history,
    )


def _score(model: RewardModel, pixels: np.ndarray, class_idx: torch.Tensor) -> torch.Tensor:
    x = torch.from_numpy(pixels).permute(0, 3, 1, 2) * 2.0 - 1.0
    model.backbone.network.eval()
    model.head.eval()
    with torch.no_grad():
        features = model.backbone.network.features(x)
        return model.head(features, _onehot(class_idx, len(model.vocabulary.codes)))


def predict_reward(model: RewardModel, image: ImageRecord, class_code: str) -> float:
    """Plausibility of `image` as a member of `class_code`, in (0, 1)."""
    idx = torch.tensor([model.vocabulary.index(class_code)], dtype=torch.long)
    return float(_score(model, image.pixels[None], idx)[0])


def predict_reward_batch(
    model: RewardModel,
    records: Sequence[ImageRecord],
    class_codes: Optional[Sequence[str]] = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Scores for many records; class defaults to each record's own."""
    codes = list(class_codes) if class_codes is not None else [r.class_code for r in records]
    if len(codes) != len(records):
        raise ValueError("class_codes length must match records")
    out = np.empty(len(records), dtype=np.float64)
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        pixels = np.stack([r.pixels for r in chunk])
        idx = torch.tensor(
            [model.vocabulary.index(c) for c in codes[start : start + len(chunk)]],
            dtype=torch.long,
        )
        out[start : start + len(chunk)] = _score(model, pixels, idx).numpy()
    return out


def reward_accuracy(model: RewardModel, examples: Sequence[RewardExample], threshold: float = 0.5) -> float:
    """Fraction of examples whose thresholded score matches the target."""
    scores = predict_reward_batch(
        model, [e.image for e in examples], [e.class_code for e in examples]
    )
    agree = (scores >= threshold) == np.array([e.target for e in examples]).astype(bool)
    return float(agree.mean())


def reward_auc(model: RewardModel, examples: Sequence[RewardExample]) -> float:
    """Area under the ROC curve of scores against binary targets."""
    scores = predict_reward_batch(
        model, [e.image for e in examples], [e.class_code for e in examples]
    )
    targets = np.array([e.target for e in examples])
    pos, neg = scores[targets == 1.0], scores[targets == 0.0]
    if not len(pos) or not len(neg):
        raise ValueError("AUC needs both target values")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (len(pos) * len(neg)))


REWARD_FORMAT_VERSION = 1


def save_reward(model: RewardModel, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": REWARD_FORMAT_VERSION,
        "config": asdict(model.config),
        "lambda_real": model.lambda_real,
        "vocabulary": {
            "codes": list(model.vocabulary.codes),
            "subtype_map": {k: list(v) for k, v in model.vocabulary.subtype_map.items()},
        },
        "backbone_config": asdict(model.backbone.config),
        "backbone_state": model.backbone.network.state_dict(),
        "backbone_classes": model.backbone.network.num_classes,
        "backbone_vocabulary": {
            "codes": list(model.backbone.vocabulary.codes),
            "subtype_map": {k: list(v) for k, v in model.backbone.vocabulary.subtype_map.items()},
        },
        "head_state": model.head.state_dict(),
        "train_history": model.train_history,
        "val_history": model.val_history,
    }
    torch.save(payload, path)


def load_reward(path: Union[str, Path]) -> RewardModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no reward checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != REWARD_FORMAT_VERSION:
        raise ValueError(f"unsupported reward checkpoint version: {version}")
    backbone_config = ClassifierConfig(**payload["backbone_config"])
    net = SmallConvNet(
        payload["backbone_classes"],
        width=backbone_config.width,
        feature_dim=backbone_config.feature_dim,
        time_conditioned=backbone_config.time_conditioned,
    )
    net.load_state_dict(payload["backbone_state"])
    net.eval()
    backbone_vocab = ClassVocabulary(
        codes=tuple(payload["backbone_vocabulary"]["codes"]),
        subtype_map={k: tuple(v) for k, v in payload["backbone_vocabulary"]["subtype_map"].items()},
    )
    backbone = Classifier(network=net, vocabulary=backbone_vocab, config=backbone_config)
    config = RewardConfig(**payload["config"])
    vocab = ClassVocabulary(
        codes=tuple(payload["vocabulary"]["codes"]),
        subtype_map={k: tuple(v) for k, v in payload["vocabulary"]["subtype_map"].items()},
    )
    head = RewardHead(net.embedding_dim, len(vocab.codes), config.hidden_dim)
    head.load_state_dict(payload["head_state"])
    head.eval()
    return RewardModel(
        backbone=backbone,
        head=head,
        vocabulary=vocab,
        config=config,
        lambda_real=payload["lambda_real"],
        train_history=payload["train_history"],
        val_history=payload["val_history"],
    )
