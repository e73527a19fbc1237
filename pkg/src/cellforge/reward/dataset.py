"""Assembly of reward-model training examples from feedback and real images."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from cellforge.records import ClassVocabulary, FeedbackRecord, ImageRecord


@dataclass(frozen=True)
class RewardExample:
    """One supervised pair for the reward model.

    target is plausibility of `image` under declared class `class_code`:
    1 means a judge (or construction) calls it a plausible member, 0 not.
    weight scales this example's squared error in the loss; real examples
    carry the real-anchor weight, synthetic ones carry 1.
    """

    image: ImageRecord
    class_code: str
    target: float
    weight: float
    is_real: bool

    def __post_init__(self):
        if self.target not in (0.0, 1.0):
            raise ValueError(f"target must be 0 or 1, got {self.target}")
        if not np.isfinite(self.weight) or self.weight < 0:
            raise ValueError(f"weight must be finite and >= 0, got {self.weight}")


def build_feedback_dataset(
    feedback: Sequence[FeedbackRecord],
    synthetic_images: Union[Sequence[ImageRecord], Mapping[str, ImageRecord]],
    real_set: Sequence[ImageRecord],
    vocabulary: ClassVocabulary,
    seed: int,
    lambda_real: float = 1.0,
) -> list[RewardExample]:
    """Feedback rows become (image, declared class, 1 - implausible) pairs.

    Real images are anchored with a pseudo-label: each gets a class drawn
    uniformly from the vocabulary and target 1 iff the draw matches its true
    class, so roughly 1/|C| of real targets are positive. Feedback that
    points at an unknown image id is an error, reported with every missing id.
    """
    if isinstance(synthetic_images, Mapping):
        by_id = dict(synthetic_images)
    else:
        by_id = {r.id: r for r in synthetic_images}
    missing = sorted({f.image_id for f in feedback} - set(by_id))
    if missing:
        raise ValueError(f"feedback references unknown image ids: {missing}")

    examples = []
    for fb in feedback:
        image = by_id[fb.image_id]
        examples.append(
            RewardExample(
                image=image,
                class_code=fb.declared_class,
                target=1.0 - float(fb.implausible),
                weight=1.0,
                is_real=False,
            )
        )

    rng = np.random.default_rng(seed)
    codes = vocabulary.codes
    draws = rng.integers(0, len(codes), size=len(real_set))
    for record, draw in zip(real_set, draws):
        declared = codes[int(draw)]
        examples.append(
            RewardExample(
                image=record,
                class_code=declared,
                target=1.0 if declared == record.class_code else 0.0,
                weight=float(lambda_real),
                is_real=True,
            )
        )
    return examples
