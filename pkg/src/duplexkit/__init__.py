"""Duplex spoken-dialogue data toolkit.

Builds two-channel (user/agent) conversation timelines from turn-based
manifests, aligns agent text and codec tokens on a shared frame grid, and
scores turn-taking behaviour (barge-in, false alarms, response latency).
"""

__version__ = "0.1.0"

from .timeline import (
    Conversation,
    DuplexError,
    DuplexTimeline,
    SegmentTrack,
    SpeakerRole,
    TimeGrid,
    Turn,
    time_to_frame,
    tracks_from_conversation,
)

__all__ = [
    "Conversation",
    "DuplexError",
    "DuplexTimeline",
    "SegmentTrack",
    "SpeakerRole",
    "TimeGrid",
    "Turn",
    "time_to_frame",
    "tracks_from_conversation",
]
