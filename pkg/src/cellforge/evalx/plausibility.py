"""Per-class plausibility rate tables under interchangeable judges.

A judge maps one image record to a plausible/implausible verdict. Three
judges cover the evaluation protocols: the rule oracle (ground truth), the
trained reward model thresholded at 0.5, and a human feedback export
(latest verdict per image wins).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from cellforge.datagen.oracle import oracle_plausibility
from cellforge.datagen.specs import CellWorld
from cellforge.records import FeedbackRecord, ImageRecord
from cellforge.reward.model import RewardModel, predict_reward

Judge = Callable[[ImageRecord], bool]


@dataclass(frozen=True)
class PlausibilityTable:
    """Fraction of images judged plausible, per class."""

    rates: dict[str, float]
    counts: dict[str, int]

    def __post_init__(self) -> None:
        for code, rate in self.rates.items():
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"rate for {code} outside [0, 1]: {rate}")

    @property
    def macro(self) -> float:
        return sum(self.rates.values()) / len(self.rates)


def oracle_judge(world: CellWorld) -> Judge:
    def judge(record: ImageRecord) -> bool:
        return not oracle_plausibility(record.pixels, record.class_code, world).implausible

    return judge


def reward_judge(model: RewardModel, threshold: float = 0.5) -> Judge:
    def judge(record: ImageRecord) -> bool:
        return predict_reward(model, record, record.class_code) >= threshold

    return judge


def human_export_judge(feedback: Sequence[FeedbackRecord]) -> Judge:
    """Judge by exported annotations; the newest verdict per image wins."""
    latest: dict[str, FeedbackRecord] = {}
    for rec in feedback:
        prev = latest.get(rec.image_id)
        if prev is None or rec.timestamp >= prev.timestamp:
            latest[rec.image_id] = rec

    def judge(record: ImageRecord) -> bool:
        rec = latest.get(record.id)
        if rec is None:
            raise ValueError(f"no feedback for image {record.id}")
        if rec.declared_class != record.class_code:
            raise ValueError(
                f"feedback for {record.id} declares {rec.declared_class}, "
                f"image is {record.class_code}"
            )
        return not rec.implausible

    return judge


def group_by_class(records: Sequence[ImageRecord]) -> dict[str, list[ImageRecord]]:
    out: dict[str, list[ImageRecord]] = {}
    for rec in records:
        out.setdefault(rec.class_code, []).append(rec)
    return out


def plausibility_table(
    images_by_class: Mapping[str, Sequence[ImageRecord]], judge: Judge
) -> PlausibilityTable:
    """Per-class plausible fraction plus macro average over classes."""
    if not images_by_class:
        raise ValueError("no classes to evaluate")
    rates: dict[str, float] = {}
    counts: dict[str, int] = {}
    for code, records in images_by_class.items():
        if not records:
            raise ValueError(f"class {code} has no images")
        mislabeled = [r.id for r in records if r.class_code != code]
        if mislabeled:
            raise ValueError(f"records under {code} carry another class: {mislabeled}")
        verdicts = [judge(r) for r in records]
        rates[code] = sum(verdicts) / len(verdicts)
        counts[code] = len(records)
    return PlausibilityTable(rates=rates, counts=counts)
