"""Subtype classifier trained from subtype-tagged feedback annotations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from cellforge.records import ClassVocabulary, FeedbackRecord, ImageRecord
from cellforge.reward.backbone import Classifier, ClassifierConfig, train_classifier


@dataclass
class SubtypeClassifier:
    """Probability model over the subtype codes of one parent class."""

    classifier: Classifier
    parent: Optional[str] = None

    @property
    def codes(self) -> tuple[str, ...]:
        return self.classifier.vocabulary.codes


def train_subtype_classifier(
    annotations: Sequence[FeedbackRecord],
    images: Union[Sequence[ImageRecord], Mapping[str, ImageRecord]],
    config: ClassifierConfig = ClassifierConfig(),
    *,
    parent: Optional[str] = None,
) -> SubtypeClassifier:
    """Fit a classifier on images whose annotations carry a subtype code.

    Annotations without a subtype are ignored. The same image annotated with
    two different subtypes is a label conflict and refused; duplicates that
    agree collapse to one example. Needs at least two distinct subtypes.
    """
    if isinstance(images, Mapping):
        by_id = dict(images)
    else:
        by_id = {r.id: r for r in images}
    tagged = [a for a in annotations if a.subtype is not None]
    missing = sorted({a.image_id for a in tagged} - set(by_id))
    if missing:
        raise ValueError(f"annotations reference unknown image ids: {missing}")
    label: dict[str, str] = {}
    conflicts = set()
    for a in tagged:
        if a.image_id in label and label[a.image_id] != a.subtype:
            conflicts.add(a.image_id)
        label[a.image_id] = a.subtype
    if conflicts:
        raise ValueError(f"conflicting subtype labels for images: {sorted(conflicts)}")
    codes = tuple(sorted(set(label.values())))
    if len(codes) < 2:
        raise ValueError(f"need at least two subtypes, got {codes}")

    records = [
        ImageRecord(
            id=image_id,
            pixels=by_id[image_id].pixels,
            class_code=subtype,
            source=by_id[image_id].source,
        )
        for image_id, subtype in sorted(label.items())
    ]
    clf = train_classifier(records, ClassVocabulary(codes=codes), config)
    return SubtypeClassifier(classifier=clf, parent=parent)


def subtype_probabilities(
    model: SubtypeClassifier, records: Sequence[ImageRecord], batch_size: int = 256
) -> np.ndarray:
    """(N, n_subtypes) probability rows, each summing to 1."""
    net = model.classifier.network
    net.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            x = torch.from_numpy(np.stack([r.pixels for r in chunk])).permute(0, 3, 1, 2) * 2.0 - 1.0
            out.append(F.softmax(net(x), dim=1).numpy())
    return np.concatenate(out, axis=0).astype(np.float64)


def subtype_accuracy(model: SubtypeClassifier, records: Sequence[ImageRecord]) -> float:
    """Fraction of records whose argmax subtype matches their class_code."""
    probs = subtype_probabilities(model, records)
    predicted = [model.codes[i] for i in probs.argmax(axis=1)]
    return float(np.mean([p == r.class_code for p, r in zip(predicted, records)]))


def subtype_recall(model: SubtypeClassifier, records: Sequence[ImageRecord]) -> dict[str, float]:
    """Per-subtype recall over records labeled with subtype codes."""
    probs = subtype_probabilities(model, records)
    predicted = [model.codes[i] for i in probs.argmax(axis=1)]
    out = {}
    for code in model.codes:
        hits = [p == code for p, r in zip(predicted, records) if r.class_code == code]
        if hits:
            out[code] = float(np.mean(hits))
    return out
