"""Time, turn and conversation types shared across the toolkit.

All times are :class:`fractions.Fraction` seconds so that grid boundaries
(0.64 s == 8 frames at 12.5 Hz) compare exactly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Tuple, Union

Seconds = Fraction
TimeLike = Union[Fraction, int, str, Decimal, float]

DEFAULT_FPS = Fraction(25, 2)


class DuplexError(ValueError):
    """Base class for every validation error raised by duplexkit."""


class TimelineError(DuplexError):
    pass


def as_seconds(value: TimeLike) -> Fraction:
    """Convert *value* to an exact Fraction of seconds.

    Floats go through their shortest ``repr`` so that ``3.84`` means 3.84 and
    not the nearest binary double.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("bool is not a time value")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise TimelineError(f"non-finite time {value!r}")
        return Fraction(Decimal(repr(value)))
    if isinstance(value, Decimal):
        if not value.is_finite():
            raise TimelineError(f"non-finite time {value!r}")
        return Fraction(value)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise TimelineError(f"cannot parse time {value!r}") from exc
    raise TypeError(f"unsupported time type {type(value).__name__}")


def seconds_to_json(t: Fraction) -> Union[int, float]:
    """JSON-friendly number for *t*.

    Terminating decimals with up to 15 significant digits survive the float
    ``repr`` round trip exactly; anything else is rounded to nanoseconds.
    """
    if t.denominator == 1:
        return int(t.numerator)
    f = float(t)
    if Fraction(Decimal(repr(f))) == t:
        return f
    return round(f, 9)


@dataclass(frozen=True)
class TimeGrid:
    frames_per_second: Fraction = DEFAULT_FPS

    def __post_init__(self):
        fps = as_seconds(self.frames_per_second)
        if fps <= 0:
            raise TimelineError("frames_per_second must be positive")
        object.__setattr__(self, "frames_per_second", fps)

    @property
    def frame_duration(self) -> Fraction:
        return 1 / self.frames_per_second

    def frame_start(self, k: int) -> Fraction:
        return Fraction(k) / self.frames_per_second

    def ceil_frame(self, t: TimeLike) -> int:
        """Index of the first frame whose start time is >= t."""
        return math.ceil(as_seconds(t) * self.frames_per_second)


DEFAULT_GRID = TimeGrid()


def time_to_frame(t: TimeLike, grid: TimeGrid = DEFAULT_GRID) -> int:
    """Frame index containing time *t*: ``floor(t * fps)``, computed exactly."""
    t = as_seconds(t)
    if t < 0:
        raise TimelineError(f"negative time {t}")
    return math.floor(t * grid.frames_per_second)


class SpeakerRole(str, enum.Enum):
    USER = "user"
    AGENT = "agent"


@dataclass(frozen=True)
class Turn:
    role: SpeakerRole
    start: Fraction
    end: Fraction
    text: str = ""
    audio_ref: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "role", SpeakerRole(self.role))
        start, end = as_seconds(self.start), as_seconds(self.end)
        if start < 0:
            raise TimelineError(f"turn starts before 0 ({start})")
        if not start < end:
            raise TimelineError(f"turn must have start < end, got [{start}, {end}]")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)

    @property
    def duration(self) -> Fraction:
        return self.end - self.start

    def shifted(self, delta: Fraction) -> "Turn":
        return Turn(self.role, self.start + delta, self.end + delta, self.text, self.audio_ref)

    def with_span(self, start: Fraction, end: Fraction) -> "Turn":
        return Turn(self.role, start, end, self.text, self.audio_ref)


@dataclass(frozen=True)
class Conversation:
    """Role-tagged turns on an absolute time axis.

    Turns are sorted by start time. Turns of one role never overlap; user and
    agent turns may.
    """

    id: str
    turns: Tuple[Turn, ...]
    provenance: Tuple[dict, ...] = field(default=(), compare=False)

    def __post_init__(self):
        turns = tuple(self.turns)
        object.__setattr__(self, "turns", turns)
        object.__setattr__(self, "provenance", tuple(self.provenance))
        for t in turns:
            if not isinstance(t, Turn):
                raise TypeError(f"conversation {self.id!r}: turns must be Turn instances")
        for a, b in zip(turns, turns[1:]):
            if b.start < a.start:
                raise TimelineError(f"conversation {self.id!r}: turns not sorted by start time")
        for role in SpeakerRole:
            same = [t for t in turns if t.role is role]
            for a, b in zip(same, same[1:]):
                if b.start < a.end:
                    raise TimelineError(
                        f"conversation {self.id!r}: overlapping {role.value} turns "
                        f"[{a.start}, {a.end}] and [{b.start}, {b.end}]"
                    )

    @property
    def end(self) -> Fraction:
        return max((t.end for t in self.turns), default=Fraction(0))

    def by_role(self, role: SpeakerRole) -> list:
        return [t for t in self.turns if t.role is role]

    def with_turns(self, turns: Iterable[Turn], step: Optional[dict] = None, id: Optional[str] = None) -> "Conversation":
        turns = sorted(turns, key=lambda t: (t.start, t.role is SpeakerRole.AGENT))
        prov = self.provenance + ((step,) if step else ())
        return Conversation(self.id if id is None else id, tuple(turns), prov)


@dataclass(frozen=True)
class SegmentTrack:
    """Voice-activity view of one role: sorted, disjoint ``(start, end)`` spans."""

    role: SpeakerRole
    segments: Tuple[Tuple[Fraction, Fraction], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "role", SpeakerRole(self.role))
        segs = tuple((as_seconds(s), as_seconds(e)) for s, e in self.segments)
        for s, e in segs:
            if not s < e:
                raise TimelineError(f"{self.role.value} segment [{s}, {e}] has start >= end")
        for (s0, e0), (s1, e1) in zip(segs, segs[1:]):
            if s1 < e0:
                raise TimelineError(f"{self.role.value} segments overlap or are unsorted")
        object.__setattr__(self, "segments", segs)

    @property
    def onsets(self) -> list:
        return [s for s, _ in self.segments]

    def shifted(self, delta: Fraction) -> "SegmentTrack":
        return SegmentTrack(self.role, tuple((s + delta, e + delta) for s, e in self.segments))


@dataclass(frozen=True)
class DuplexTimeline:
    user: SegmentTrack
    agent: SegmentTrack
    total_duration: Fraction
    id: str = ""

    def __post_init__(self):
        total = as_seconds(self.total_duration)
        object.__setattr__(self, "total_duration", total)
        for track in (self.user, self.agent):
            for s, e in track.segments:
                if s < 0 or e > total:
                    raise TimelineError(f"{track.role.value} segment [{s}, {e}] outside [0, {total}]")

    @classmethod
    def from_spans(cls, user: Sequence, agent: Sequence, total_duration: Optional[TimeLike] = None, id: str = "") -> "DuplexTimeline":
        u = SegmentTrack(SpeakerRole.USER, tuple(user))
        a = SegmentTrack(SpeakerRole.AGENT, tuple(agent))
        if total_duration is None:
            total_duration = max([e for _, e in u.segments + a.segments], default=Fraction(0))
        return cls(u, a, as_seconds(total_duration), id)

    def shifted(self, delta: TimeLike) -> "DuplexTimeline":
        delta = as_seconds(delta)
        return DuplexTimeline(self.user.shifted(delta), self.agent.shifted(delta), self.total_duration + delta, self.id)


def merge_spans(spans: Iterable[Tuple[Fraction, Fraction]], merge_gap: Fraction = Fraction(0)) -> list:
    """Sort and merge spans whose gap is <= merge_gap (0 merges only touching spans)."""
    out: list = []
    for s, e in sorted(spans):
        if out and s - out[-1][1] <= merge_gap:
            if s < out[-1][1] and merge_gap == 0:
                raise TimelineError(f"overlapping spans at {s}")
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return out


def tracks_from_conversation(conv: Conversation, merge_gap: TimeLike = 0) -> DuplexTimeline:
    """Project a conversation onto per-role voice-activity tracks."""
    if not conv.turns:
        raise TimelineError(f"conversation {conv.id!r} has no turns")
    gap = as_seconds(merge_gap)
    if gap < 0:
        raise TimelineError("merge_gap must be >= 0")
    tracks = {}
    for role in SpeakerRole:
        spans = [(t.start, t.end) for t in conv.turns if t.role is role]
        tracks[role] = SegmentTrack(role, tuple(merge_spans(spans, gap)))
    return DuplexTimeline(tracks[SpeakerRole.USER], tracks[SpeakerRole.AGENT], conv.end, conv.id)
