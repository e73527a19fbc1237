"""Small convolutional cell-type classifier.

One architecture serves three roles: the frozen embedding backbone of the
reward model, the downstream-utility classifier, and (time-conditioned) the
noise-aware classifier that drives guided sampling. Its pooled feature
statistics are the embedding space for manifold metrics.
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
from cellforge.diffusion.unet import timestep_features


@dataclass(frozen=True)
class ClassifierConfig:
    width: int = 32
    feature_dim: int = 64
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 2e-3
    seed: int = 0
    time_conditioned: bool = False
    max_timestep: int = 0  # required > 0 when time_conditioned


class SmallConvNet(nn.Module):
    """Three conv stages, mean+std pooling, one hidden projection, linear head.

    features() exposes the pooled statistics (channel means and standard
    deviations of the last stage). Unlike the class-trained projection, these
    keep within-class variation, which downstream consumers (reward head,
    manifold metrics) need.
    """

    def __init__(
        self,
        num_classes: int,
        width: int = 32,
        feature_dim: int = 64,
        time_conditioned: bool = False,
    ):
        super().__init__()
        self.num_classes = num_classes
        self.width = width
        self.feature_dim = feature_dim
        self.time_conditioned = time_conditioned
        w = width
        self.embedding_dim = 8 * w
        self.conv1 = nn.Conv2d(3, w, 3, padding=1)
        self.norm1 = nn.GroupNorm(4, w)
        self.conv2 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.norm2 = nn.GroupNorm(4, 2 * w)
        self.conv3 = nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1)
        self.norm3 = nn.GroupNorm(4, 4 * w)
        in_features = self.embedding_dim + (feature_dim if time_conditioned else 0)
        self.project = nn.Linear(in_features, feature_dim)
        self.head = nn.Linear(feature_dim, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.norm1(self.conv1(x)))
        h = F.silu(self.norm2(self.conv2(h)))
        h = F.silu(self.norm3(self.conv3(h)))
        return torch.cat([h.mean(dim=(2, 3)), h.std(dim=(2, 3))], dim=1)

    def forward(self, x: torch.Tensor, t: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = self.features(x)
        if self.time_conditioned:
            if t is None:
                raise ValueError("time-conditioned classifier needs timesteps")
            h = torch.cat([h, timestep_features(t, self.feature_dim, h.dtype)], dim=1)
        elif t is not None:
            raise ValueError("plain classifier got timesteps")
        return self.head(F.silu(self.project(h)))


@dataclass
class Classifier:
    """Trained classifier plus its vocabulary and training history."""

    network: SmallConvNet
    vocabulary: ClassVocabulary
    config: ClassifierConfig
    loss_history: list[float] = field(default_factory=list)

    def predict_logits(self, pixels: np.ndarray, t: Optional[torch.Tensor] = None) -> torch.Tensor:
        x = torch.from_numpy(np.asarray(pixels, dtype=np.float32))
        if x.ndim == 3:
            x = x[None]
        x = x.permute(0, 3, 1, 2) * 2.0 - 1.0
        self.network.eval()
        with torch.no_grad():
            return self.network(x, t)


def train_classifier(
    records: Sequence[ImageRecord],
    vocabulary: ClassVocabulary,
    config: ClassifierConfig = ClassifierConfig(),
    *,
    class_codes: Optional[Sequence[str]] = None,
) -> Classifier:
    """Cross-entropy training over vocabulary codes (or a given code subset).

    class_codes restricts the label set (used for subtype classifiers);
    labels default to each record's class_code. Deterministic given seed.
    """
    if not records:
        raise ValueError("empty training set")
    if config.time_conditioned:
        raise ValueError("use train_noisy_classifier for time-conditioned models")
    codes = tuple(class_codes) if class_codes is not None else vocabulary.codes
    code_index = {c: i for i, c in enumerate(codes)}
    unknown = sorted({r.class_code for r in records} - set(code_index))
    if unknown:
        raise ValueError(f"records with classes outside the label set: {unknown}")

    torch.manual_seed(config.seed)
    net = SmallConvNet(len(codes), width=config.width, feature_dim=config.feature_dim)
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
            logits = net(x_all[idx])
            loss = F.cross_entropy(logits, y_all[idx])
            if not torch.isfinite(loss):
                raise RuntimeError("non-finite classifier loss")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()))
        history.append(float(np.mean(losses)))
    net.eval()
    vocab = vocabulary if class_codes is None else ClassVocabulary(codes=codes)
    return Classifier(network=net, vocabulary=vocab, config=config, loss_history=history)


def classify_records(model: Classifier, records: Sequence[ImageRecord], batch_size: int = 256) -> list[str]:
    """Predicted class code for each record."""
    out: list[str] = []
    model.network.eval()
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            x = torch.from_numpy(np.stack([r.pixels for r in chunk])).permute(0, 3, 1, 2) * 2.0 - 1.0
            pred = model.network(x).argmax(dim=1)
            out.extend(model.vocabulary.codes[int(i)] for i in pred)
    return out


def embed_records(
    model: Classifier, records: Sequence[ImageRecord], batch_size: int = 256
) -> np.ndarray:
    """Pooled backbone features for each record, shape (N, embedding_dim)."""
    feats = []
    model.network.eval()
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            x = torch.from_numpy(np.stack([r.pixels for r in chunk])).permute(0, 3, 1, 2) * 2.0 - 1.0
            feats.append(model.network.features(x).numpy())
    return np.concatenate(feats, axis=0).astype(np.float64)


CLASSIFIER_FORMAT_VERSION = 1


def save_classifier(model: Classifier, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": CLASSIFIER_FORMAT_VERSION,
            "config": asdict(model.config),
            "num_classes": model.network.num_classes,
            "vocabulary": {
                "codes": list(model.vocabulary.codes),
                "subtype_map": {k: list(v) for k, v in model.vocabulary.subtype_map.items()},
            },
            "state": model.network.state_dict(),
            "loss_history": model.loss_history,
        },
        path,
    )


def load_classifier(path: Union[str, Path]) -> Classifier:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no classifier checkpoint at {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CLASSIFIER_FORMAT_VERSION:
        raise ValueError(f"unsupported classifier checkpoint version: {version}")
    config = ClassifierConfig(**payload["config"])
    net = SmallConvNet(
        payload["num_classes"],
        width=config.width,
        feature_dim=config.feature_dim,
        time_conditioned=config.time_conditioned,
    )
    net.load_state_dict(payload["state"])
    net.eval()
    vocab = ClassVocabulary(
        codes=tuple(payload["vocabulary"]["codes"]),
        subtype_map={k: tuple(v) for k, v in payload["vocabulary"]["subtype_map"].items()},
    )
    return Classifier(
        network=net, vocabulary=vocab, config=config, loss_history=payload["loss_history"]
    )
