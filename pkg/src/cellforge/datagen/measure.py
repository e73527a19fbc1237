"""Pixel-space measurements backing the rule oracle.

Everything here works from the image alone (plus the class spec for the
granule landmark color). The renderer uses the same measurements to
self-check its output, which is what makes generator/oracle agreement hold
by construction; the oracle never sees the renderer's parameters.

All masks are boolean (H, W). Measurements degrade gracefully on arbitrary
model-generated images: missing structures yield degenerate values that the
oracle reads as violations, never exceptions.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage
from skimage.morphology import convex_hull_image

from cellforge.datagen import specs as W

LUM_WEIGHTS = np.array([0.2126, 0.7152, 0.0722], dtype=np.float64)

# Segmentation thresholds (L-inf color distances and luminance cuts). The
# world's palette keeps every landmark pair much farther apart than these.
CELL_MASK_DELTA = 0.06
NUCLEUS_LUM_MAX = 0.42
GRANULE_DELTA = 0.15
INCLUSION_DELTA = 0.15

# Shape classification bands on convex-hull solidity of the nucleus mask.
SOLIDITY_HORSESHOE_MAX = 0.72
SOLIDITY_CLUMPED_MAX = 0.93

_CROSS = ndimage.generate_binary_structure(2, 1)
_BOX = ndimage.generate_binary_structure(2, 2)


@dataclass(frozen=True)
class Measurements:
    """Everything the oracle needs, in measurement units.

    cell_radius: equivalent radius sqrt(area / pi) in pixels.
    nc_ratio: nucleus area / cell area (0 when either mask is empty).
    cytoplasm_color: mean RGB over interior cytoplasm pixels.
    chromatin_sigma: std of nucleus-pixel luminance, None if unmeasurable.
    nucleus_shape: one of specs.NUCLEUS_SHAPES, or None if no nucleus found.
    """

    cell_radius: float
    nc_ratio: float
    cytoplasm_color: tuple[float, float, float]
    chromatin_sigma: Optional[float]
    granule_count: int
    inclusion_count: int
    nucleus_shape: Optional[str]
    nucleus_components: int
    nucleus_solidity: Optional[float]


def _linf(image: np.ndarray, color) -> np.ndarray:
    return np.abs(image - np.asarray(color, dtype=np.float64)).max(axis=2)


def _luminance(image: np.ndarray) -> np.ndarray:
    return image.astype(np.float64) @ LUM_WEIGHTS


def _min_component_px(scale: float, base: int) -> int:
    return max(base, int(round(base * scale * scale)))


def _keep_components(mask: np.ndarray, min_px: int, connectivity) -> tuple[np.ndarray, int]:
    """Drop components smaller than min_px; return cleaned mask and count."""
    if not mask.any():
        return mask, 0
    labels, n = ndimage.label(mask, structure=connectivity)
    if n == 0:
        return mask, 0
    sizes = np.bincount(labels.ravel())
    keep = np.flatnonzero(sizes >= min_px)
    keep = keep[keep != 0]
    cleaned = np.isin(labels, keep)
    return cleaned, len(keep)


def segment(image: np.ndarray, spec: W.CellSpec, scale: float = 1.0) -> dict[str, np.ndarray]:
    """Split an image into cell / nucleus / granule / inclusion / cytoplasm masks."""
    img = image.astype(np.float64)
    cell = _linf(img, W.BACKGROUND_COLOR) > CELL_MASK_DELTA
    cell, _ = _keep_components(cell, _min_component_px(scale, 20), _BOX)
    cell = ndimage.binary_fill_holes(cell)

    lum = _luminance(img)
    granule = cell & (_linf(img, spec.granule_color) <= GRANULE_DELTA)
    granule, n_gran = _keep_components(granule, _min_component_px(scale, 3), _CROSS)
    inclusion = cell & (_linf(img, W.INCLUSION_COLOR) <= INCLUSION_DELTA)
    inclusion, n_incl = _keep_components(inclusion, _min_component_px(scale, 3), _CROSS)

    nucleus = cell & (lum < NUCLEUS_LUM_MAX) & ~granule & ~inclusion
    nucleus, n_nuc = _keep_components(nucleus, _min_component_px(scale, 5), _CROSS)

    interior = ndimage.binary_erosion(cell, structure=_CROSS)
    occupied = ndimage.binary_dilation(nucleus | granule | inclusion, structure=_BOX)
    cytoplasm = interior & ~occupied
    if not cytoplasm.any():
        cytoplasm = cell & ~(nucleus | granule | inclusion)

    return {
        "cell": cell,
        "nucleus": nucleus,
        "granule": granule,
        "inclusion": inclusion,
        "cytoplasm": cytoplasm,
        "n_granules": n_gran,
        "n_inclusions": n_incl,
        "n_nucleus_components": n_nuc,
    }


def classify_shape(nucleus: np.ndarray, n_components: int) -> tuple[Optional[str], Optional[float]]:
    """Name the nucleus shape from its mask.

    Two or more components read as multi-lobed; a single component is split
    by hull solidity into horseshoe (deep concavity), clumped (lumpy) and
    round (near-convex). Solidity is computed on a 3x upsampled mask so the
    digital convex hull of a small disk does not leak area and drag a round
    nucleus below the clumped band.
    """
    if n_components == 0 or not nucleus.any():
        return None, None
    if n_components >= 2:
        return "multi_lobed", None
    ys, xs = np.nonzero(nucleus)
    crop = nucleus[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    up = np.kron(crop, np.ones((3, 3), dtype=bool))
    hull = convex_hull_image(up)
    solidity = float(up.sum()) / float(hull.sum())
    if solidity < SOLIDITY_HORSESHOE_MAX:
        return "horseshoe", solidity
    if solidity < SOLIDITY_CLUMPED_MAX:
        return "clumped", solidity
    return "round", solidity


def measure_image(image: np.ndarray, spec: W.CellSpec, scale: float = 1.0) -> Measurements:
    """All oracle-relevant measurements for one image."""
    img = image.astype(np.float64)
    masks = segment(img, spec, scale)
    cell, nucleus, cytoplasm = masks["cell"], masks["nucleus"], masks["cytoplasm"]

    cell_area = float(cell.sum())
    radius = float(np.sqrt(cell_area / np.pi)) if cell_area > 0 else 0.0
    ratio = float(nucleus.sum()) / cell_area if cell_area > 0 else 0.0

    if cytoplasm.any():
        color = tuple(float(c) for c in img[cytoplasm].mean(axis=0))
    else:
        color = tuple(float(c) for c in W.BACKGROUND_COLOR)

    sigma: Optional[float] = None
    if nucleus.sum() >= 4:
        core = ndimage.binary_erosion(nucleus, structure=_CROSS)
        if core.sum() < 4:
            core = nucleus
        sigma = float(_luminance(img)[core].std())

    shape, solidity = classify_shape(nucleus, masks["n_nucleus_components"])

    return Measurements(
        cell_radius=radius,
        nc_ratio=ratio,
        cytoplasm_color=color,  # type: ignore[arg-type]
        chromatin_sigma=sigma,
        granule_count=int(masks["n_granules"]),
        inclusion_count=int(masks["n_inclusions"]),
        nucleus_shape=shape,
        nucleus_components=int(masks["n_nucleus_components"]),
        nucleus_solidity=solidity,
    )
