"""Procedural dataset generation and the plausibility rule oracle."""

from cellforge.datagen.specs import (
    CellSpec,
    CellWorld,
    default_world,
    REFERENCE_SIZE,
)
from cellforge.datagen.measure import Measurements, measure_image
from cellforge.datagen.oracle import (
    oracle_plausibility,
    oracle_subtype,
    violations_from_measurements,
)
from cellforge.datagen.render import generate_cell_image, render_for_class, RenderInfo
from cellforge.datagen.dataset import (
    build_dataset,
    load_manifest,
    load_png,
    save_png,
    write_dataset,
    write_verdicts,
)

__all__ = [
    "CellSpec",
    "CellWorld",
    "default_world",
    "REFERENCE_SIZE",
    "Measurements",
    "measure_image",
    "oracle_plausibility",
    "oracle_subtype",
    "violations_from_measurements",
    "generate_cell_image",
    "render_for_class",
    "RenderInfo",
    "build_dataset",
    "load_manifest",
    "load_png",
    "save_png",
    "write_dataset",
    "write_verdicts",
]
