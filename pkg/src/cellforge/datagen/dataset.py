"""Dataset building, PNG storage, and manifest I/O.

A dataset directory holds `images/<id>.png` (8-bit RGB) plus `manifest.csv`
with the header `id,path,class_code,source`; the path column is relative to
the manifest so directories can be moved. Oracle verdicts for a record list
can be exported as `verdicts.csv` (`id,class_code,implausible,v1..v7`).
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from cellforge.records import ClassVocabulary, ImageRecord
from cellforge.datagen.specs import CellWorld
from cellforge.datagen.oracle import oracle_plausibility
from cellforge.datagen.render import render_for_class

MANIFEST_HEADER = ["id", "path", "class_code", "source"]
VERDICTS_HEADER = ["id", "class_code", "implausible"] + [f"v{i}" for i in range(1, 8)]


def save_png(path: str | Path, pixels: np.ndarray) -> None:
    """Write an HxWx3 float array in [0, 1] as an 8-bit RGB PNG."""
    arr = np.round(np.clip(np.asarray(pixels), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    """Read an RGB PNG back to float32 HxWx3 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / np.float32(255.0)


def write_dataset(directory: str | Path, records: Iterable[ImageRecord]) -> Path:
    """Persist records to `directory` and return the manifest path."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for rec in records:
            rel = f"images/{rec.id}.png"
            save_png(directory / rel, rec.pixels)
            writer.writerow([rec.id, rel, rec.class_code, rec.source])
    return manifest


def load_manifest(path: str | Path, vocabulary: ClassVocabulary) -> list[ImageRecord]:
    """Load a dataset directory through its manifest.

    Pixel values are rescaled to float32 in [0, 1]. Malformed rows, unknown
    class codes, and missing image files raise ValueError naming the 1-based
    data row number.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    records: list[ImageRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ValueError(f"bad manifest header {header!r}, expected {MANIFEST_HEADER!r}")
        for n, row in enumerate(reader, start=1):
            if len(row) != len(MANIFEST_HEADER):
                raise ValueError(f"row {n}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
            image_id, rel, class_code, source = row
            if class_code not in vocabulary.codes:
                raise ValueError(f"row {n}: unknown class code {class_code!r}")
            if source not in ("real", "synthetic"):
                raise ValueError(f"row {n}: unknown source {source!r}")
            image_path = root / rel
            if not image_path.is_file():
                raise ValueError(f"row {n}: missing image file {image_path}")
            records.append(
                ImageRecord(
                    id=image_id,
                    pixels=load_png(image_path),
                    class_code=class_code,
                    source=source,
                    provenance={"path": str(image_path)},
                )
            )
    return records


def build_dataset(
    world: CellWorld,
    out_dir: str | Path,
    *,
    per_class_train: int,
    per_class_test: int,
    seed: int,
) -> tuple[list[ImageRecord], list[ImageRecord]]:
    """Render balanced plausible train/test splits and persist both.

    Writes `<out_dir>/train` and `<out_dir>/test` dataset directories. The
    splits are disjoint by id (split name is part of the id) and by pixels
    (distinct render seeds). Deterministic in (world, counts, seed).
    """
    if per_class_train < 1 or per_class_test < 1:
        raise ValueError("per-class counts must be >= 1")
    out_dir = Path(out_dir)
    splits: list[list[ImageRecord]] = []
    for split_flag, (split, count) in enumerate(
        [("train", per_class_train), ("test", per_class_test)]
    ):
        records: list[ImageRecord] = []
        for code in world.vocabulary.codes:
            for i in range(count):
                rseed = int(np.random.SeedSequence([seed & 0xFFFFFFFF, split_flag, i]).generate_state(1)[0])
                pixels, _ = render_for_class(world, code, plausible=True, seed=rseed)
                records.append(
                    ImageRecord(
                        id=f"{code.lower()}-{split}-{i:04d}",
                        pixels=pixels,
                        class_code=code,
                        source="real",
                        provenance={"split": split, "render_seed": rseed},
                    )
                )
        write_dataset(out_dir / split, records)
        splits.append(records)
    return splits[0], splits[1]


def write_verdicts(
    path: str | Path,
    records: Iterable[ImageRecord],
    world: CellWorld,
    *,
    declared: Optional[dict[str, str]] = None,
) -> Path:
    """Export oracle verdicts for records as CSV.

    `declared` optionally maps image id to the class code to judge against
    (defaults to each record's own class). v1..v7 follow CRITERIA_NAMES order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(VERDICTS_HEADER)
        for rec in records:
            code = (declared or {}).get(rec.id, rec.class_code)
            verdict = oracle_plausibility(rec.pixels, code, world)
            flags = [int(v) for v in verdict.criteria_violations]
            writer.writerow([rec.id, code, verdict.implausible] + flags)
    return path
