"""Cell-world definition: per-class rendering rules and global landmarks.

The world is deliberately synthetic. Classes are told apart by cell size,
nucleus shape, nucleus-to-cell area ratio, cytoplasm color, chromatin texture
and granule count; the same quantities are what the rule oracle measures, so
every image is checkable without a learned model.

All colors are float RGB in [0, 1]. Geometry is expressed in pixels at a
reference image size of 32 and scaled linearly for other sizes.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from cellforge.records import ClassVocabulary

REFERENCE_SIZE = 32

# Global landmark colors. Everything the segmenter needs to tell apart sits
# at a comfortable distance from everything else (see measure.py thresholds).
BACKGROUND_COLOR = (0.92, 0.90, 0.88)
NUCLEUS_COLOR = (0.30, 0.15, 0.45)
INCLUSION_COLOR = (0.10, 0.75, 0.80)
GRANULE_ORANGE = (0.95, 0.55, 0.10)
GRANULE_GREEN = (0.20, 0.70, 0.25)

NUCLEUS_SHAPES = ("round", "horseshoe", "multi_lobed", "clumped")

# Chromatin texture is measured as the std of nucleus-pixel luminance.
# dense must sit at or below DENSE_SIGMA_MAX, diffuse at or above
# DIFFUSE_SIGMA_MIN; the renderer targets ~0.01 and ~0.07 respectively.
DENSE_SIGMA_MAX = 0.030
DIFFUSE_SIGMA_MIN = 0.040

# Relative guard band: a measurement only counts as a violation when it sits
# at least GUARD_FLAG beyond the spec interval edge; generated violations are
# placed at least GUARD_GEN beyond it.
GUARD_FLAG = 0.20
GUARD_GEN = 0.40

# Small-count fallback for granules, where 20% of a small integer is
# sub-integer: flag at +/-2 beyond the edge, generate at +/-3 (which also
# satisfies the 40% rule for every count range the world uses).
COUNT_FLAG_MARGIN = 2
COUNT_GEN_MARGIN = 3


@dataclass(frozen=True)
class CellSpec:
    """Rendering and plausibility rules for one class code.

    cell_radius_range: pixel interval at REFERENCE_SIZE.
    nucleus_to_cytoplasm_ratio_range: nucleus area / whole-cell area, in
        (0, 1). (Nucleus/cytoplasm proper is unbounded; the bounded form is
        what both the renderer and the oracle use.)
    cytoplasm_color / granule_color: RGB triples; cytoplasm_tol is the
        max-abs-channel tolerance around cytoplasm_color.
    granule_count_range: inclusive integer interval; (0, 0) means agranular.
    chromatin_texture: "dense" or "diffuse".
    """

    class_code: str
    cell_radius_range: tuple[float, float]
    nucleus_shape: str
    nucleus_to_cytoplasm_ratio_range: tuple[float, float]
    cytoplasm_color: tuple[float, float, float]
    cytoplasm_tol: float
    granule_count_range: tuple[int, int]
    granule_color: tuple[float, float, float]
    chromatin_texture: str

    def __post_init__(self) -> None:
        lo, hi = self.cell_radius_range
        if not (0 < lo <= hi):
            raise ValueError(f"{self.class_code}: bad radius range {lo, hi}")
        rlo, rhi = self.nucleus_to_cytoplasm_ratio_range
        if not (0.0 < rlo <= rhi < 1.0):
            raise ValueError(f"{self.class_code}: ratio range must sit in (0, 1)")
        if self.nucleus_shape not in NUCLEUS_SHAPES:
            raise ValueError(f"{self.class_code}: unknown shape {self.nucleus_shape!r}")
        glo, ghi = self.granule_count_range
        if not (0 <= glo <= ghi):
            raise ValueError(f"{self.class_code}: bad granule range {glo, ghi}")
        if self.chromatin_texture not in ("dense", "diffuse"):
            raise ValueError(f"{self.class_code}: unknown texture")
        if not (0.0 < self.cytoplasm_tol < 0.5):
            raise ValueError(f"{self.class_code}: cytoplasm_tol out of range")


def _spec(code, radius, shape, ratio, color, granules, gcolor, texture) -> CellSpec:
    return CellSpec(
        class_code=code,
        cell_radius_range=radius,
        nucleus_shape=shape,
        nucleus_to_cytoplasm_ratio_range=ratio,
        cytoplasm_color=color,
        cytoplasm_tol=0.08,
        granule_count_range=granules,
        granule_color=gcolor,
        chromatin_texture=texture,
    )


# The 16 desk classes. Every pair differs in at least the cytoplasm color;
# most differ in several fields. M5 is the subtype parent: real M5 cells are
# rendered with either a horseshoe (band, M5B) or multi-lobed (segmented,
# M5S) nucleus and the oracle accepts both for the parent code.
_BASE_SPECS: tuple[CellSpec, ...] = (
    _spec("B1", (8.0, 9.5), "round", (0.20, 0.28), (0.62, 0.72, 0.92), (2, 5), GRANULE_GREEN, "dense"),
    _spec("B2", (8.5, 9.8), "round", (0.18, 0.26), (0.52, 0.63, 0.88), (2, 4), GRANULE_GREEN, "diffuse"),
    _spec("E1", (8.0, 9.5), "clumped", (0.20, 0.28), (0.95, 0.74, 0.62), (2, 4), GRANULE_ORANGE, "dense"),
    _spec("E4", (8.5, 9.8), "multi_lobed", (0.20, 0.28), (0.93, 0.60, 0.55), (2, 4), GRANULE_ORANGE, "dense"),
    _spec("ER1", (7.5, 8.8), "round", (0.32, 0.42), (0.70, 0.62, 0.88), (0, 0), GRANULE_ORANGE, "dense"),
    _spec("ER2", (7.5, 8.8), "round", (0.26, 0.36), (0.78, 0.68, 0.92), (0, 0), GRANULE_ORANGE, "diffuse"),
    _spec("ER3", (7.8, 9.0), "clumped", (0.24, 0.32), (0.85, 0.70, 0.92), (0, 0), GRANULE_ORANGE, "dense"),
    _spec("ER4", (7.8, 9.0), "round", (0.22, 0.30), (0.93, 0.76, 0.90), (0, 0), GRANULE_ORANGE, "diffuse"),
    _spec("ER5", (8.2, 9.4), "clumped", (0.22, 0.30), (0.66, 0.80, 0.90), (0, 0), GRANULE_GREEN, "diffuse"),
    _spec("ER6", (8.2, 9.4), "round", (0.34, 0.44), (0.58, 0.78, 0.84), (0, 0), GRANULE_GREEN, "dense"),
    _spec("M1", (8.8, 9.8), "round", (0.32, 0.42), (0.88, 0.84, 0.64), (0, 0), GRANULE_ORANGE, "diffuse"),
    _spec("M2", (8.8, 9.8), "clumped", (0.18, 0.26), (0.93, 0.88, 0.58), (2, 4), GRANULE_ORANGE, "dense"),
    _spec("M3", (8.4, 9.6), "round", (0.20, 0.28), (0.80, 0.88, 0.70), (2, 5), GRANULE_ORANGE, "diffuse"),
    _spec("M4", (8.4, 9.6), "horseshoe", (0.15, 0.23), (0.90, 0.80, 0.70), (2, 4), GRANULE_ORANGE, "dense"),
    _spec("M5", (8.6, 9.8), "horseshoe", (0.20, 0.28), (0.72, 0.84, 0.88), (0, 0), GRANULE_GREEN, "diffuse"),
    _spec("MO2", (9.0, 9.8), "horseshoe", (0.16, 0.24), (0.78, 0.88, 0.74), (0, 0), GRANULE_GREEN, "dense"),
)

SUBTYPE_SHAPES = {"M5B": "horseshoe", "M5S": "multi_lobed"}


@dataclass(frozen=True)
class CellWorld:
    """A vocabulary plus the per-code specs and the working image size."""

    vocabulary: ClassVocabulary
    specs: dict[str, CellSpec]
    image_size: int = REFERENCE_SIZE

    @property
    def scale(self) -> float:
        return self.image_size / REFERENCE_SIZE

    def spec_for(self, code: str) -> CellSpec:
        try:
            return self.specs[code]
        except KeyError:
            raise KeyError(f"no spec for class code {code!r}") from None

    def scaled_radius_range(self, code: str) -> tuple[float, float]:
        lo, hi = self.spec_for(code).cell_radius_range
        return lo * self.scale, hi * self.scale

    def allowed_shapes(self, code: str) -> tuple[str, ...]:
        """Nucleus shapes the oracle accepts for a class code.

        For a subtype parent this is the union of its children's shapes.
        """
        children = self.vocabulary.subtype_map.get(code)
        if children:
            return tuple(sorted({self.specs[c].nucleus_shape for c in children}))
        return (self.spec_for(code).nucleus_shape,)

    def subtype_for_shape(self, parent: str, shape: str) -> Optional[str]:
        for child in self.vocabulary.subtype_map.get(parent, ()):
            if self.specs[child].nucleus_shape == shape:
                return child
        return None


def default_world(image_size: int = REFERENCE_SIZE) -> CellWorld:
    """The 16-class desk world at the requested image size."""
    if image_size < REFERENCE_SIZE:
        raise ValueError(f"image_size must be >= {REFERENCE_SIZE}")
    specs = {s.class_code: s for s in _BASE_SPECS}
    m5 = specs["M5"]
    for child, shape in SUBTYPE_SHAPES.items():
        specs[child] = replace(m5, class_code=child, nucleus_shape=shape)
    vocab = ClassVocabulary(
        codes=tuple(s.class_code for s in _BASE_SPECS),
        subtype_map={"M5": tuple(sorted(SUBTYPE_SHAPES))},
    )
    return CellWorld(vocabulary=vocab, specs=specs, image_size=image_size)
