"""Durable append-only feedback log.

One FeedbackRecord per NDJSON line. Every append is flushed and fsynced
before it returns, so a record the caller saw acknowledged survives any
crash. Resubmissions append new rows (history is never rewritten); the
in-memory index keeps the latest verdict per (image_id, annotator) and
drives exports and progress counts.
"""

from __future__ import annotations

import os
import threading
from pathlib import Path
from typing import Optional, Union

from cellforge.records import FeedbackRecord


class FeedbackStore:
    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._rows: list[FeedbackRecord] = []
        self._latest: dict[tuple[str, str], tuple[int, FeedbackRecord]] = {}
        if self.path.exists():
            self._load_existing()
        self._fh = open(self.path, "a", encoding="utf-8")

    def _load_existing(self) -> None:
        blob = self.path.read_bytes()
        # A final line without its newline is a torn write: the append never
        # returned, so the record was never acknowledged. Truncate it away.
        # Damage anywhere else means real corruption and raises.
        if blob and not blob.endswith(b"\n"):
            keep = blob.rfind(b"\n") + 1
            with open(self.path, "r+b") as fh:
                fh.truncate(keep)
                fh.flush()
                os.fsync(fh.fileno())
            blob = blob[:keep]
        for i, line in enumerate(blob.decode("utf-8").split("\n")):
            if not line:
                continue
            try:
                record = FeedbackRecord.from_json(line)
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{self.path}: corrupt feedback log at line {i + 1}") from exc
            self._index(record)

    def _index(self, record: FeedbackRecord) -> None:
        self._rows.append(record)
        seq = len(self._rows)
        key = (record.image_id, record.annotator)
        current = self._latest.get(key)
        # Newest timestamp wins; equal timestamps fall back to append order.
        if current is None or record.timestamp >= current[1].timestamp:
            self._latest[key] = (seq, record)

    def append(self, record: FeedbackRecord) -> FeedbackRecord:
        """Persist one record; returns only after the bytes are on disk."""
        line = record.to_json() + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._index(record)
        return record

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def rows(self) -> tuple[FeedbackRecord, ...]:
        return tuple(self._rows)

    def latest_records(self) -> list[FeedbackRecord]:
        """Latest verdict per (image_id, annotator), in stable sorted order."""
        with self._lock:
            entries = list(self._latest.items())
        entries.sort(key=lambda item: item[0])
        return [record for _, (_, record) in entries]

    def latest_for(self, image_id: str, annotator: str) -> Optional[FeedbackRecord]:
        entry = self._latest.get((image_id, annotator))
        return entry[1] if entry else None

    def labeled_ids(self, annotator: Optional[str] = None) -> set[str]:
        """Image ids with at least one label (from `annotator` if given)."""
        if annotator is None:
            return {image_id for image_id, _ in self._latest}
        return {
            image_id for image_id, who in self._latest if who == annotator
        }

    def annotated_pairs(self) -> list[tuple[str, str]]:
        """(image_id, annotator) pairs that hold a latest record."""
        with self._lock:
            return list(self._latest)

    def export_ndjson(self, image_ids: Optional[set[str]] = None) -> str:
        """Latest-wins NDJSON export, byte-stable for an identical store."""
        records = self.latest_records()
        if image_ids is not None:
            records = [r for r in records if r.image_id in image_ids]
        return "".join(r.to_json() + "\n" for r in records)

    def close(self) -> None:
        self._fh.close()
