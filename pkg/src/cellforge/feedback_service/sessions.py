"""Annotation sessions and the on-disk image registry they draw from.

A session is a fixed pool of sampled images awaiting judgment. Images are
persisted as PNGs plus a manifest line each, so a restarted service can
keep serving sessions created before the crash.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from cellforge.datagen.dataset import load_png, save_png
from cellforge.records import ImageRecord


def _quantize(pixels: np.ndarray) -> np.ndarray:
    """The 8-bit grid save_png writes; identity on PNG content."""
    return np.round(np.clip(np.asarray(pixels), 0.0, 1.0) * 255.0).astype(np.uint8)


@dataclass(frozen=True)
class AnnotationSession:
    """A fixed pool of image ids sampled from one checkpoint."""

    session_id: str
    checkpoint_id: str
    image_ids: tuple[str, ...]
    created: float

    def __post_init__(self) -> None:
        if len(set(self.image_ids)) != len(self.image_ids):
            raise ValueError("session contains duplicate image ids")
        if not self.image_ids:
            raise ValueError("session has no images")

    def to_json(self) -> str:
        return json.dumps(
            {
                "session_id": self.session_id,
                "checkpoint_id": self.checkpoint_id,
                "image_ids": list(self.image_ids),
                "created": self.created,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @staticmethod
    def from_json(line: str) -> "AnnotationSession":
        d = json.loads(line)
        return AnnotationSession(
            session_id=d["session_id"],
            checkpoint_id=d["checkpoint_id"],
            image_ids=tuple(d["image_ids"]),
            created=float(d["created"]),
        )


class SessionStore:
    """Append-only session manifest, one session per NDJSON line."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, AnnotationSession] = {}
        if self.path.exists():
            for line in self.path.read_text().splitlines():
                if line:
                    session = AnnotationSession.from_json(line)
                    self._sessions[session.session_id] = session

    def add(self, session: AnnotationSession) -> None:
        if session.session_id in self._sessions:
            raise ValueError(f"session {session.session_id} already exists")
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(session.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._sessions[session.session_id] = session

    def get(self, session_id: str) -> AnnotationSession:
        session = self._sessions.get(session_id)
        if session is None:
            raise KeyError(f"unknown session {session_id}")
        return session

    def __len__(self) -> int:
        return len(self._sessions)

    def __contains__(self, session_id: str) -> bool:
        return session_id in self._sessions


class ImageStore:
    """PNG files plus a manifest; pixels load lazily after a restart."""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.image_dir = self.root / "images"
        self.image_dir.mkdir(parents=True, exist_ok=True)
        self.manifest = self.root / "images.jsonl"
        self._lock = threading.Lock()
        self._meta: dict[str, dict] = {}
        self._pixels: dict[str, np.ndarray] = {}
        if self.manifest.exists():
            for line in self.manifest.read_text().splitlines():
                if line:
                    d = json.loads(line)
                    self._meta[d["id"]] = d

    def add(self, record: ImageRecord) -> None:
        """Register and persist; re-adding identical content is a no-op.

        The same id arriving with different pixels means two distinct images
        claim one identity (a checkpoint was replaced under a reused name),
        which would silently corrupt later exports. Refuse it.
        """
        with self._lock:
            if record.id in self._meta:
                stored = self._pixels.get(record.id)
                if stored is None:
                    stored = load_png(self._png_path(record.id))
                    self._pixels[record.id] = stored
                if stored.shape != record.pixels.shape or not np.array_equal(
                    _quantize(stored), _quantize(record.pixels)
                ):
                    raise ValueError(
                        f"image id {record.id} already stored with different pixels"
                    )
                return
            save_png(self._png_path(record.id), record.pixels)
            meta = {"id": record.id, "class_code": record.class_code, "source": record.source}
            with open(self.manifest, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            self._meta[record.id] = meta
            self._pixels[record.id] = record.pixels

    def _png_path(self, image_id: str) -> Path:
        return self.image_dir / f"{image_id}.png"

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._meta

    def get(self, image_id: str) -> ImageRecord:
        meta = self._meta.get(image_id)
        if meta is None:
            raise KeyError(f"unknown image {image_id}")
        pixels = self._pixels.get(image_id)
        if pixels is None:
            pixels = load_png(self._png_path(image_id))
            self._pixels[image_id] = pixels
        return ImageRecord(
            id=image_id, pixels=pixels, class_code=meta["class_code"], source=meta["source"]
        )

    def png_bytes(self, image_id: str) -> bytes:
        if image_id not in self._meta:
            raise KeyError(f"unknown image {image_id}")
        return self._png_path(image_id).read_bytes()
