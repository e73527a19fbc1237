"""Durable feedback collection: append-only store, sessions, HTTP service."""

from cellforge.feedback_service.service import (
    ORACLE_ANNOTATOR,
    ServiceRuntime,
    create_app,
)
from cellforge.feedback_service.sessions import AnnotationSession, ImageStore, SessionStore
from cellforge.feedback_service.store import FeedbackStore

__all__ = [
    "ORACLE_ANNOTATOR",
    "AnnotationSession",
    "FeedbackStore",
    "ImageStore",
    "ServiceRuntime",
    "SessionStore",
    "create_app",
]
