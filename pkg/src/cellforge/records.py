"""Shared record types used across the pipeline.

Images are float32 arrays in [0, 1] with shape (H, W, 3). Feedback is stored
as flat JSON-serializable records so the on-disk NDJSON log and the in-memory
objects stay trivially convertible.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

# Plausibility criteria, in the fixed order used everywhere a per-criterion
# vector appears (verdict columns v1..v7, feedback records, the UI schema).
CRITERIA_NAMES: tuple[str, ...] = (
    "cell_size",
    "nucleus_shape",
    "nc_ratio",
    "cytoplasm_color",
    "chromatin_pattern",
    "inclusions",
    "granules",
)
N_CRITERIA = len(CRITERIA_NAMES)


@dataclass
class ImageRecord:
    """One image plus its identity and origin.

    pixels: float32 (H, W, 3) in [0, 1].
    source: "real" for procedurally generated dataset images, "synthetic"
        for model samples.
    provenance: free-form details (seed, checkpoint id, sampler settings).
    """

    id: str
    pixels: np.ndarray
    class_code: str
    source: str
    provenance: Optional[dict] = None

    def validate(self) -> None:
        if not self.id:
            raise ValueError("ImageRecord.id must be non-empty")
        if self.source not in ("real", "synthetic"):
            raise ValueError(f"unknown source {self.source!r}")
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be (H, W, 3), got {px.shape}")
        if px.dtype != np.float32:
            raise ValueError(f"pixels must be float32, got {px.dtype}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels contain non-finite values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixels must lie in [0, 1]")


@dataclass(frozen=True)
class OracleVerdict:
    """Rule-checker output for one image against one declared class.

    criteria_violations follows CRITERIA_NAMES order. implausible is 1 iff
    any criterion is violated.
    """

    implausible: int
    criteria_violations: tuple[bool, ...]

    def __post_init__(self) -> None:
        if len(self.criteria_violations) != N_CRITERIA:
            raise ValueError(
                f"expected {N_CRITERIA} criteria, got {len(self.criteria_violations)}"
            )
        if self.implausible not in (0, 1):
            raise ValueError("implausible must be 0 or 1")
        if bool(self.implausible) != any(self.criteria_violations):
            raise ValueError("implausible flag inconsistent with criteria vector")

    @property
    def violated_names(self) -> tuple[str, ...]:
        return tuple(
            name for name, v in zip(CRITERIA_NAMES, self.criteria_violations) if v
        )

    @staticmethod
    def from_violations(violations: Sequence[bool]) -> "OracleVerdict":
        vt = tuple(bool(v) for v in violations)
        return OracleVerdict(implausible=int(any(vt)), criteria_violations=vt)


@dataclass(frozen=True)
class FeedbackRecord:
    """One annotator judgment of one synthetic image.

    implausible: 1 = rejected, 0 = accepted.
    criteria: optional per-criterion violation flags (CRITERIA_NAMES order).
    subtype: optional refined class code (for classes with subtypes).
    timestamp: unix seconds; used for latest-wins collapsing at export.
    """

    image_id: str
    declared_class: str
    implausible: int
    annotator: str
    timestamp: float
    criteria: Optional[tuple[bool, ...]] = None
    subtype: Optional[str] = None

    def __post_init__(self) -> None:
        if self.implausible not in (0, 1):
            raise ValueError("implausible must be 0 or 1")
        if self.criteria is not None and len(self.criteria) != N_CRITERIA:
            raise ValueError(f"criteria must have {N_CRITERIA} entries")
        if not self.image_id or not self.annotator:
            raise ValueError("image_id and annotator must be non-empty")

    def to_json(self) -> str:
        d = asdict(self)
        if d["criteria"] is not None:
            d["criteria"] = [bool(v) for v in d["criteria"]]
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(line: str) -> "FeedbackRecord":
        d = json.loads(line)
        criteria = d.get("criteria")
        if criteria is not None:
            criteria = tuple(bool(v) for v in criteria)
        return FeedbackRecord(
            image_id=d["image_id"],
            declared_class=d["declared_class"],
            implausible=int(d["implausible"]),
            annotator=d["annotator"],
            timestamp=float(d["timestamp"]),
            criteria=criteria,
            subtype=d.get("subtype"),
        )


@dataclass(frozen=True)
class ClassVocabulary:
    """Ordered class codes plus the parent -> subtype-code map.

    Subtype codes in subtype_map are not themselves members of codes until
    extended_with_subtypes() is used (the generator's conditioning vocabulary
    grows only when subtype finetuning asks for it).
    """

    codes: tuple[str, ...]
    subtype_map: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.codes:
            raise ValueError("vocabulary must have at least one code")
        if len(set(self.codes)) != len(self.codes):
            raise ValueError("class codes must be unique")
        if any(not c for c in self.codes):
            raise ValueError("class codes must be non-empty strings")
        seen_children: set[str] = set()
        parents = set(self.subtype_map)
        for parent, children in self.subtype_map.items():
            if parent not in self.codes:
                raise ValueError(f"subtype parent {parent!r} not in vocabulary")
            if len(children) < 2:
                raise ValueError(f"parent {parent!r} needs at least two subtypes")
            for ch in children:
                # Children may live in codes (an extended vocabulary) but must
                # never shadow a parent or belong to two parents.
                if ch in parents:
                    raise ValueError(f"subtype code {ch!r} collides with a parent code")
                if ch in seen_children:
                    raise ValueError(f"subtype code {ch!r} has two parents")
                seen_children.add(ch)

    def index(self, code: str) -> int:
        try:
            return self.codes.index(code)
        except ValueError:
            raise KeyError(f"unknown class code {code!r}") from None

    def __contains__(self, code: str) -> bool:
        return code in self.codes

    def __len__(self) -> int:
        return len(self.codes)

    def parent_of(self, subtype_code: str) -> Optional[str]:
        for parent, children in self.subtype_map.items():
            if subtype_code in children:
                return parent
        return None

    def extended_with_subtypes(self, parent: str) -> "ClassVocabulary":
        """New vocabulary with parent's subtype codes appended to codes.

        Existing indices stay stable so pretrained class embeddings remain
        valid. Idempotent; a partial overlap between the children and codes
        means a naming collision and raises.
        """
        children = self.subtype_map.get(parent)
        if not children:
            raise KeyError(f"class {parent!r} has no subtypes")
        present = [c for c in children if c in self.codes]
        if len(present) == len(children):
            return self
        if present:
            raise ValueError(f"subtype codes {present!r} collide with existing classes")
        return ClassVocabulary(codes=self.codes + tuple(children), subtype_map=dict(self.subtype_map))
