"""Rule oracle: plausibility verdicts from pixel measurements.

A measurement only counts as a violation when it deviates at least 20%
beyond the class spec interval (relative to the interval edge); granule
counts use an absolute +/-2 fallback where 20% of a small integer would be
meaningless. The renderer places intended violations at least 40% beyond the
edge, so verdicts are unambiguous for world-generated images and carry a
tolerance band for imperfect model samples.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from cellforge.datagen import specs as W
from cellforge.datagen.measure import Measurements, measure_image
from cellforge.records import CRITERIA_NAMES, OracleVerdict


def _interval_flag(value: float, lo: float, hi: float) -> bool:
    return value > hi * (1.0 + W.GUARD_FLAG) or value < lo * (1.0 - W.GUARD_FLAG)


def _count_flag(count: int, lo: int, hi: int) -> bool:
    hi_edge = hi + max(W.COUNT_FLAG_MARGIN, W.GUARD_FLAG * hi)
    lo_edge = lo - max(W.COUNT_FLAG_MARGIN, W.GUARD_FLAG * lo)
    return count > hi_edge or count < lo_edge


def flags_from_measurements(
    m: Measurements,
    spec: W.CellSpec,
    scale: float,
    allowed_shapes: Sequence[str],
) -> tuple[bool, ...]:
    """Per-criterion violation flags in CRITERIA_NAMES order.

    allowed_shapes is the set of nucleus shapes acceptable for the declared
    class (more than one for a subtype parent).
    """
    rlo, rhi = spec.cell_radius_range
    v_size = _interval_flag(m.cell_radius, rlo * scale, rhi * scale)

    v_shape = m.nucleus_shape not in tuple(allowed_shapes)

    nlo, nhi = spec.nucleus_to_cytoplasm_ratio_range
    v_ratio = _interval_flag(m.nc_ratio, nlo, nhi)

    color_err = float(
        np.abs(np.asarray(m.cytoplasm_color) - np.asarray(spec.cytoplasm_color)).max()
    )
    v_color = color_err > spec.cytoplasm_tol * (1.0 + W.GUARD_FLAG)

    if m.chromatin_sigma is None:
        v_chromatin = True
    elif spec.chromatin_texture == "dense":
        v_chromatin = m.chromatin_sigma > W.DENSE_SIGMA_MAX * (1.0 + W.GUARD_FLAG)
    else:
        v_chromatin = m.chromatin_sigma < W.DIFFUSE_SIGMA_MIN * (1.0 - W.GUARD_FLAG)

    v_inclusions = m.inclusion_count >= 1

    glo, ghi = spec.granule_count_range
    v_granules = _count_flag(m.granule_count, glo, ghi)

    flags = (v_size, v_shape, v_ratio, v_color, v_chromatin, v_inclusions, v_granules)
    assert len(flags) == len(CRITERIA_NAMES)
    return flags


def violations_from_measurements(
    m: Measurements, class_code: str, world: W.CellWorld
) -> tuple[bool, ...]:
    return flags_from_measurements(
        m, world.spec_for(class_code), world.scale, world.allowed_shapes(class_code)
    )


def oracle_plausibility(
    image: np.ndarray, class_code: str, world: W.CellWorld
) -> OracleVerdict:
    """Judge one image against one declared class code.

    Works for any float image in [0, 1]; degenerate content (no cell, no
    nucleus) reads as violations, never raises.
    """
    spec = world.spec_for(class_code)
    m = measure_image(image, spec, world.scale)
    return OracleVerdict.from_violations(violations_from_measurements(m, class_code, world))


def oracle_subtype(
    image: np.ndarray, class_code: str, world: W.CellWorld
) -> Optional[str]:
    """Subtype code for a parent-class image, judged by nucleus shape.

    Returns None when the class has no subtypes or the measured shape does
    not match any child spec (ambiguous images stay untagged).
    """
    if class_code not in world.vocabulary.subtype_map:
        return None
    spec = world.spec_for(class_code)
    m = measure_image(image, spec, world.scale)
    if m.nucleus_shape is None:
        return None
    return world.subtype_for_shape(class_code, m.nucleus_shape)
