"""Turn-taking metrics over duplex timelines.

Barge-in success / latency, false alarms, first-response latency and the
interruption rate. Everything is computed in exact time; rates and latencies
are converted to floats only when reported.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .timeline import DuplexError, DuplexTimeline, as_seconds, seconds_to_json

EARLY = "n/a (early)"
NO_RESPONSE = "no response"
NA = "n/a"

FirstResponse = Union[Fraction, str]


class MetricsError(DuplexError):
    pass


@dataclass(frozen=True)
class MetricsConfig:
    success_window: Fraction = Fraction(3, 2)
    false_alarm_exemption: Fraction = Fraction(1, 10)
    # None: guard lasts until the interrupting user segment ends
    resume_guard: Optional[Fraction] = None

    def __post_init__(self):
        for name in ("success_window", "false_alarm_exemption", "resume_guard"):
            v = getattr(self, name)
            if v is None:
                continue
            v = as_seconds(v)
            if v < 0:
                raise MetricsError(f"{name} must be >= 0")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class BargeInEvent:
    t_user_onset: Fraction
    agent_segment: Tuple[Fraction, Fraction]
    t_agent_stop: Optional[Fraction]
    latency: Optional[Fraction]
    success: bool
    resumed_at: Optional[Fraction] = None
    timeline_id: str = ""

    def to_dict(self) -> dict:
        return {
            "timeline_id": self.timeline_id,
            "t_user_onset": seconds_to_json(self.t_user_onset),
            "agent_segment": [seconds_to_json(x) for x in self.agent_segment],
            "t_agent_stop": None if self.t_agent_stop is None else seconds_to_json(self.t_agent_stop),
            "latency": None if self.latency is None else seconds_to_json(self.latency),
            "success": self.success,
            "resumed_at": None if self.resumed_at is None else seconds_to_json(self.resumed_at),
        }


@dataclass(frozen=True)
class FalseAlarmEvent:
    t_agent_onset: Fraction
    user_segment: Tuple[Fraction, Fraction]
    user_remaining: Fraction
    counted: bool
    timeline_id: str = ""

    def to_dict(self) -> dict:
        return {
            "timeline_id": self.timeline_id,
            "t_agent_onset": seconds_to_json(self.t_agent_onset),
            "user_segment": [seconds_to_json(x) for x in self.user_segment],
            "user_remaining": seconds_to_json(self.user_remaining),
            "counted": self.counted,
        }


def _containing(segments: Sequence[Tuple[Fraction, Fraction]], starts: List[Fraction], t: Fraction):
    """Segment [s, e) with s <= t < e, or None."""
    i = bisect.bisect_right(starts, t) - 1
    if i >= 0 and segments[i][0] <= t < segments[i][1]:
        return segments[i]
    return None


def detect_barge_ins(tl: DuplexTimeline, cfg: MetricsConfig = MetricsConfig()) -> List[BargeInEvent]:
    """One event per user onset lying strictly inside an agent segment."""
    agent = tl.agent.segments
    a_starts = [s for s, _ in agent]
    events = []
    for u_s, u_e in tl.user.segments:
        seg = _containing(agent, a_starts, u_s)
        if seg is None or not seg[0] < u_s:
            continue
        a_e = seg[1]
        latency = a_e - u_s
        guard_end = u_e if cfg.resume_guard is None else min(u_e, a_e + cfg.resume_guard)
        j = bisect.bisect_right(a_starts, a_e)
        resumed = a_starts[j] if j < len(a_starts) and a_starts[j] < guard_end else None
        events.append(
            BargeInEvent(
                t_user_onset=u_s,
                agent_segment=seg,
                t_agent_stop=a_e,
                latency=latency,
                success=latency <= cfg.success_window and resumed is None,
                resumed_at=resumed,
                timeline_id=tl.id,
            )
        )
    return events


def detect_false_alarms(tl: DuplexTimeline, cfg: MetricsConfig = MetricsConfig()) -> List[FalseAlarmEvent]:
    """Agent onsets inside a user segment.

    Every candidate is returned; ``counted`` is False when the user stops
    within the exemption window.
    """
    user = tl.user.segments
    u_starts = [s for s, _ in user]
    events = []
    for t_a in tl.agent.onsets:
        seg = _containing(user, u_starts, t_a)
        if seg is None:
            continue
        remaining = seg[1] - t_a
        events.append(FalseAlarmEvent(t_a, seg, remaining, remaining > cfg.false_alarm_exemption, tl.id))
    return events


def first_response_latency(tl: DuplexTimeline) -> FirstResponse:
    """First agent onset minus first user segment end.

    Returns :data:`EARLY` if the agent starts before the user's first turn is
    over and :data:`NO_RESPONSE` if the agent never speaks.
    """
    if not tl.user.segments:
        raise MetricsError(f"timeline {tl.id!r} has no user speech")
    if not tl.agent.segments:
        return NO_RESPONSE
    latency = tl.agent.segments[0][0] - tl.user.segments[0][1]
    return EARLY if latency < 0 else latency


def has_barge_in_opportunity(tl: DuplexTimeline) -> bool:
    a_starts = tl.agent.onsets
    for u_s, _ in tl.user.segments:
        seg = _containing(tl.agent.segments, a_starts, u_s)
        if seg is not None and seg[0] < u_s:
            return True
    return False


def interruption_rate(timelines: Sequence[DuplexTimeline]) -> Fraction:
    timelines = list(timelines)
    if not timelines:
        raise MetricsError("interruption_rate needs at least one timeline")
    return Fraction(sum(has_barge_in_opportunity(t) for t in timelines), len(timelines))


@dataclass(frozen=True)
class MetricsReport:
    """Aggregated counts and sums; rates are derived from them.

    Reports combine with ``+`` (counts and exact sums), so any reduction
    order gives the same result.
    """

    n_timelines: int = 0
    n_user_turns: int = 0
    n_barge_in_opportunities: int = 0
    n_successes: int = 0
    n_false_alarms: int = 0
    n_false_alarm_exempt: int = 0
    n_interrupted_timelines: int = 0
    latency_sum: Fraction = Fraction(0)
    first_response_sum: Fraction = Fraction(0)
    n_first_response: int = 0
    n_first_response_early: int = 0
    n_no_response: int = 0
    barge_ins: Tuple[BargeInEvent, ...] = field(default=(), compare=False)
    false_alarms: Tuple[FalseAlarmEvent, ...] = field(default=(), compare=False)

    def __add__(self, other: "MetricsReport") -> "MetricsReport":
        if not isinstance(other, MetricsReport):
            return NotImplemented
        return MetricsReport(
            n_timelines=self.n_timelines + other.n_timelines,
            n_user_turns=self.n_user_turns + other.n_user_turns,
            n_barge_in_opportunities=self.n_barge_in_opportunities + other.n_barge_in_opportunities,
            n_successes=self.n_successes + other.n_successes,
            n_false_alarms=self.n_false_alarms + other.n_false_alarms,
            n_false_alarm_exempt=self.n_false_alarm_exempt + other.n_false_alarm_exempt,
            n_interrupted_timelines=self.n_interrupted_timelines + other.n_interrupted_timelines,
            latency_sum=self.latency_sum + other.latency_sum,
            first_response_sum=self.first_response_sum + other.first_response_sum,
            n_first_response=self.n_first_response + other.n_first_response,
            n_first_response_early=self.n_first_response_early + other.n_first_response_early,
            n_no_response=self.n_no_response + other.n_no_response,
            barge_ins=self.barge_ins + other.barge_ins,
            false_alarms=self.false_alarms + other.false_alarms,
        )

    @property
    def success_rate(self) -> Union[Fraction, str]:
        if self.n_barge_in_opportunities == 0:
            return NA
        return Fraction(self.n_successes, self.n_barge_in_opportunities)

    @property
    def false_alarm_rate(self) -> Union[Fraction, str]:
        if self.n_user_turns == 0:
            return NA
        return Fraction(self.n_false_alarms, self.n_user_turns)

    @property
    def mean_barge_in_latency(self) -> Union[Fraction, str]:
        if self.n_successes == 0:
            return NA
        return self.latency_sum / self.n_successes

    @property
    def first_response_latency(self) -> Union[Fraction, str]:
        if self.n_first_response:
            return self.first_response_sum / self.n_first_response
        if self.n_first_response_early:
            return EARLY
        return NO_RESPONSE if self.n_no_response else NA

    @property
    def interruption_rate(self) -> Union[Fraction, str]:
        if self.n_timelines == 0:
            return NA
        return Fraction(self.n_interrupted_timelines, self.n_timelines)

    def to_dict(self, events: bool = True) -> dict:
        def num(v):
            return v if isinstance(v, str) else float(v)

        d = {
            "n_timelines": self.n_timelines,
            "n_user_turns": self.n_user_turns,
            "n_barge_in_opportunities": self.n_barge_in_opportunities,
            "n_successes": self.n_successes,
            "n_false_alarms": self.n_false_alarms,
            "n_false_alarm_exempt": self.n_false_alarm_exempt,
            "success_rate": num(self.success_rate),
            "false_alarm_rate": num(self.false_alarm_rate),
            "mean_barge_in_latency": num(self.mean_barge_in_latency),
            "first_response_latency": num(self.first_response_latency),
            "n_first_response": self.n_first_response,
            "n_first_response_early": self.n_first_response_early,
            "n_no_response": self.n_no_response,
            "interruption_rate": num(self.interruption_rate),
        }
        if events:
            d["barge_in_events"] = [e.to_dict() for e in self.barge_ins]
            d["false_alarm_events"] = [e.to_dict() for e in self.false_alarms]
        return d


def aggregate(
    barge_ins: Iterable[BargeInEvent],
    false_alarms: Iterable[FalseAlarmEvent],
    n_user_turns: int,
    first_responses: Iterable[FirstResponse] = (),
    n_timelines: int = 0,
    n_interrupted_timelines: int = 0,
) -> MetricsReport:
    """Fold event lists from one evaluation set into a report."""
    barge_ins = tuple(barge_ins)
    false_alarms = tuple(false_alarms)
    successes = [e for e in barge_ins if e.success]
    fr = list(first_responses)
    numeric = [x for x in fr if isinstance(x, Fraction)]
    return MetricsReport(
        n_timelines=n_timelines,
        n_user_turns=n_user_turns,
        n_barge_in_opportunities=len(barge_ins),
        n_successes=len(successes),
        n_false_alarms=sum(e.counted for e in false_alarms),
        n_false_alarm_exempt=sum(not e.counted for e in false_alarms),
        n_interrupted_timelines=n_interrupted_timelines,
        latency_sum=sum((e.latency for e in successes), Fraction(0)),
        first_response_sum=sum(numeric, Fraction(0)),
        n_first_response=len(numeric),
        n_first_response_early=sum(x == EARLY for x in fr),
        n_no_response=sum(x == NO_RESPONSE for x in fr),
        barge_ins=barge_ins,
        false_alarms=false_alarms,
    )


def evaluate_timeline(tl: DuplexTimeline, cfg: MetricsConfig = MetricsConfig()) -> MetricsReport:
    bis = detect_barge_ins(tl, cfg)
    fas = detect_false_alarms(tl, cfg)
    fr = [first_response_latency(tl)] if tl.user.segments else []
    return aggregate(bis, fas, len(tl.user.segments), fr, n_timelines=1, n_interrupted_timelines=int(bool(bis)))


def combine(reports: Iterable[MetricsReport]) -> MetricsReport:
    """Sum reports in one pass (``+`` without re-copying the event tuples)."""
    counts = dict.fromkeys(_COUNT_FIELDS, 0)
    counts["latency_sum"] = Fraction(0)
    counts["first_response_sum"] = Fraction(0)
    barge_ins: list = []
    false_alarms: list = []
    for r in reports:
        for name in counts:
            counts[name] += getattr(r, name)
        barge_ins.extend(r.barge_ins)
        false_alarms.extend(r.false_alarms)
    return MetricsReport(**counts, barge_ins=tuple(barge_ins), false_alarms=tuple(false_alarms))


def evaluate(timelines: Iterable[DuplexTimeline], cfg: MetricsConfig = MetricsConfig()) -> MetricsReport:
    return combine(evaluate_timeline(tl, cfg) for tl in timelines)


_COUNT_FIELDS = (
    "n_timelines",
    "n_user_turns",
    "n_barge_in_opportunities",
    "n_successes",
    "n_false_alarms",
    "n_false_alarm_exempt",
    "n_interrupted_timelines",
    "n_first_response",
    "n_first_response_early",
    "n_no_response",
)
