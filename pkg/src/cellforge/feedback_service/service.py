"""HTTP feedback collection around the durable store.

The runtime owns all state (store, sessions, images, checkpoint cache) and
implements every operation; the FastAPI app is a thin JSON adapter over
it, so the oracle annotator and the CLI can call the runtime directly
without a network round trip.
"""

from __future__ import annotations

import base64
import time
import uuid
from pathlib import Path
from typing import Mapping, Optional, Union

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import PlainTextResponse, Response
from pydantic import BaseModel

from cellforge.datagen.oracle import oracle_plausibility, oracle_subtype
from cellforge.datagen.specs import CellWorld, default_world
from cellforge.diffusion.checkpoint import load_checkpoint
from cellforge.diffusion.model import DiffusionState, sample
from cellforge.feedback_service.sessions import AnnotationSession, ImageStore, SessionStore
from cellforge.feedback_service.store import FeedbackStore
from cellforge.records import CRITERIA_NAMES, FeedbackRecord

ORACLE_ANNOTATOR = "oracle"


class ServiceRuntime:
    def __init__(
        self,
        data_dir: Union[str, Path],
        checkpoints: Optional[Mapping[str, Union[str, Path]]] = None,
    ):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.store = FeedbackStore(self.data_dir / "feedback.ndjson")
        self.sessions = SessionStore(self.data_dir / "sessions.jsonl")
        self.images = ImageStore(self.data_dir)
        self.checkpoints = {k: Path(v) for k, v in (checkpoints or {}).items()}
        self._states: dict[str, DiffusionState] = {}

    @classmethod
    def from_checkpoint_dir(
        cls, data_dir: Union[str, Path], checkpoint_dir: Union[str, Path]
    ) -> "ServiceRuntime":
        paths = {p.stem: p for p in sorted(Path(checkpoint_dir).glob("*.pt"))}
        return cls(data_dir, paths)

    def _state_for(self, checkpoint_id: str) -> DiffusionState:
        if checkpoint_id not in self._states:
            path = self.checkpoints.get(checkpoint_id)
            if path is None or not path.exists():
                raise KeyError(f"unknown checkpoint {checkpoint_id}")
            self._states[checkpoint_id] = load_checkpoint(path)
        return self._states[checkpoint_id]

    def create_session(
        self, checkpoint_id: str, images_per_class: int, seed: int = 0
    ) -> AnnotationSession:
        """Sample a feedback pool from the checkpoint and persist the session.

        Image ids depend only on (checkpoint_id, seed, position), so two
        sessions with the same arguments share the same pool.
        """
        if images_per_class < 1:
            raise ValueError("images_per_class must be >= 1")
        state = self._state_for(checkpoint_id)
        prefix = f"{checkpoint_id}-s{seed}"
        ids = []
        for code in state.vocabulary.codes:
            for record in sample(state, code, images_per_class, seed=seed, id_prefix=prefix):
                self.images.add(record)
                ids.append(record.id)
        session = AnnotationSession(
            session_id=f"sess-{uuid.uuid4().hex[:12]}",
            checkpoint_id=checkpoint_id,
            image_ids=tuple(ids),
            created=time.time(),
        )
        self.sessions.add(session)
        return session

    def register_session(
        self, records, checkpoint_id: str = "external"
    ) -> AnnotationSession:
        """Session over pre-sampled images instead of a checkpoint draw."""
        for record in records:
            self.images.add(record)
        session = AnnotationSession(
            session_id=f"sess-{uuid.uuid4().hex[:12]}",
            checkpoint_id=checkpoint_id,
            image_ids=tuple(r.id for r in records),
            created=time.time(),
        )
        self.sessions.add(session)
        return session

    def next_batch(
        self, session_id: str, size: int, annotator: Optional[str] = None
    ) -> list[dict]:
        """Up to `size` images still unlabeled (by `annotator` if given).

        Reading is idempotent: nothing is marked served, so a dropped batch
        simply comes back on the next request.
        """
        session = self.sessions.get(session_id)
        if size < 1:
            raise ValueError("size must be >= 1")
        labeled = self.store.labeled_ids(annotator)
        out = []
        for image_id in session.image_ids:
            if image_id in labeled:
                continue
            record = self.images.get(image_id)
            out.append(
                {
                    "image_id": image_id,
                    "declared_class": record.class_code,
                    "criteria_schema": list(CRITERIA_NAMES),
                    "png_base64": base64.b64encode(self.images.png_bytes(image_id)).decode("ascii"),
                    "png_url": f"/api/images/{image_id}.png",
                }
            )
            if len(out) == size:
                break
        return out

    def submit(self, session_id: str, record: FeedbackRecord) -> dict:
        """Validate, durably append, and return updated progress."""
        session = self.sessions.get(session_id)
        if record.image_id not in session.image_ids:
            raise KeyError(f"image {record.image_id} is not part of session {session_id}")
        stored = self.images.get(record.image_id)
        if record.declared_class != stored.class_code:
            raise ValueError(
                f"image {record.image_id} is declared {stored.class_code}, "
                f"record says {record.declared_class}"
            )
        if record.criteria is not None and any(record.criteria) and record.implausible != 1:
            violated = [n for n, v in zip(CRITERIA_NAMES, record.criteria) if v]
            raise ValueError(
                f"criteria {violated} are marked violated, so implausible must be 1"
            )
        self.store.append(record)
        return self.progress(session_id)

    def progress(self, session_id: str) -> dict:
        session = self.sessions.get(session_id)
        ids = set(session.image_ids)
        labeled = self.store.labeled_ids() & ids
        by_annotator: dict[str, int] = {}
        for image_id, annotator in self.store.annotated_pairs():
            if image_id in ids:
                by_annotator[annotator] = by_annotator.get(annotator, 0) + 1
        return {
            "session_id": session_id,
            "total": len(ids),
            "completed": len(labeled),
            "pending": len(ids) - len(labeled),
            "by_annotator": dict(sorted(by_annotator.items())),
        }

    def export(self, session_id: Optional[str] = None) -> str:
        ids = set(self.sessions.get(session_id).image_ids) if session_id else None
        return self.store.export_ndjson(ids)

    def oracle_annotate(
        self,
        session_id: str,
        world: Optional[CellWorld] = None,
        *,
        timestamp: float = 0.0,
    ) -> int:
        """Label every image the oracle has not judged yet; returns the count.

        The timestamp is fixed (not wall-clock) so a rerun with the same seed
        produces a byte-identical export. Human submissions carry real time
        and therefore always outrank oracle labels in the latest-wins index.
        """
        world = world or default_world()
        session = self.sessions.get(session_id)
        done = self.store.labeled_ids(ORACLE_ANNOTATOR)
        count = 0
        for image_id in session.image_ids:
            if image_id in done:
                continue
            record = self.images.get(image_id)
            verdict = oracle_plausibility(record.pixels, record.class_code, world)
            subtype = None
            if not verdict.implausible:
                subtype = oracle_subtype(record.pixels, record.class_code, world)
            self.submit(
                session_id,
                FeedbackRecord(
                    image_id=image_id,
                    declared_class=record.class_code,
                    implausible=verdict.implausible,
                    annotator=ORACLE_ANNOTATOR,
                    timestamp=timestamp,
                    criteria=tuple(bool(v) for v in verdict.criteria_violations),
                    subtype=subtype,
                ),
            )
            count += 1
        return count


class SessionRequest(BaseModel):
    checkpoint_id: str
    images_per_class: int
    seed: int = 0


class FeedbackPayload(BaseModel):
    image_id: str
    declared_class: str
    implausible: int
    annotator: str
    timestamp: Optional[float] = None
    criteria: Optional[list[bool]] = None
    subtype: Optional[str] = None

    def to_record(self) -> FeedbackRecord:
        return FeedbackRecord(
            image_id=self.image_id,
            declared_class=self.declared_class,
            implausible=self.implausible,
            annotator=self.annotator,
            timestamp=self.timestamp if self.timestamp is not None else time.time(),
            criteria=tuple(self.criteria) if self.criteria is not None else None,
            subtype=self.subtype,
        )


def create_app(runtime: ServiceRuntime) -> FastAPI:
    app = FastAPI(title="cellforge feedback service")

    @app.post("/api/sessions")
    def post_session(body: SessionRequest) -> dict:
        try:
            session = runtime.create_session(body.checkpoint_id, body.images_per_class, body.seed)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {
            "session_id": session.session_id,
            "checkpoint_id": session.checkpoint_id,
            "total": len(session.image_ids),
            "created": session.created,
        }

    @app.get("/api/sessions/{session_id}/batch")
    def get_batch(
        session_id: str,
        size: int = Query(default=16, ge=1),
        annotator: Optional[str] = None,
    ) -> list[dict]:
        try:
            return runtime.next_batch(session_id, size, annotator)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/api/sessions/{session_id}/feedback")
    def post_feedback(session_id: str, body: FeedbackPayload) -> dict:
        try:
            record = body.to_record()
            progress = runtime.submit(session_id, record)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"ok": True, "progress": progress}

    @app.get("/api/sessions/{session_id}/progress")
    def get_progress(session_id: str) -> dict:
        try:
            return runtime.progress(session_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/api/export")
    def get_export(session_id: Optional[str] = None) -> PlainTextResponse:
        try:
            text = runtime.export(session_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return PlainTextResponse(text, media_type="application/x-ndjson")

    @app.get("/api/images/{image_id}.png")
    def get_image(image_id: str) -> Response:
        try:
            payload = runtime.images.png_bytes(image_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return Response(content=payload, media_type="image/png")

    return app
