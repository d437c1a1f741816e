"""Semantic communication for synchronized sound streams.

Knowledge-graph relevance drives what a sender transmits first, what a
listener infers when tokens go missing, and how loud each element is
rendered. ``run_session`` ties the pieces into a deterministic simulation.
"""

from .codec import decode, detect_events, encode, render
from .coordinator import Coordinator, DeviceRegistration, FeedbackEvent, UpdatePolicy, round_update
from .dsp import Waveform, extract_features, spectrogram, synthesize
from .events import EventKind, SemanticToken, SoundEvent, SoundScene, TokenStatus
from .kg import KnowledgeGraph, PreferenceProfile, merge
from .sync import SessionConfig, SenderConfig, compute_metrics, run_session
from .transmission import ChannelModel, schedule, score_and_order, transmit

__version__ = "0.1.0"

__all__ = [
    "ChannelModel",
    "Coordinator",
    "DeviceRegistration",
    "EventKind",
    "FeedbackEvent",
    "KnowledgeGraph",
    "PreferenceProfile",
    "SemanticToken",
    "SenderConfig",
    "SessionConfig",
    "SoundEvent",
    "SoundScene",
    "TokenStatus",
    "UpdatePolicy",
    "Waveform",
    "compute_metrics",
    "decode",
    "detect_events",
    "encode",
    "extract_features",
    "merge",
    "render",
    "round_update",
    "run_session",
    "schedule",
    "score_and_order",
    "spectrogram",
    "synthesize",
    "transmit",
]
