"""Discrete-event simulation of duplex conversations with a labelled event log.

The log records what the simulated agent *did* (onsets, scheduled stops,
false starts), so metrics recomputed from the log alone act as an oracle for
the segment-based metrics engine.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .metrics import MetricsConfig, MetricsReport
from .timeline import (
    DEFAULT_GRID,
    Conversation,
    DuplexError,
    SpeakerRole,
    TimeLike,
    Turn,
    as_seconds,
    seconds_to_json,
)

MS = Fraction(1, 1000)
FRAME = DEFAULT_GRID.frame_duration


class SimulationError(DuplexError):
    pass


@dataclass(frozen=True)
class Dist:
    """``fixed`` (low == high) or ``uniform`` over whole milliseconds in [low, high]."""

    low: Fraction
    high: Fraction

    def __post_init__(self):
        lo, hi = as_seconds(self.low), as_seconds(self.high)
        if lo < 0 or hi < lo:
            raise SimulationError(f"invalid distribution support [{lo}, {hi}]")
        if lo != hi and math.ceil(lo / MS) > math.floor(hi / MS):
            raise SimulationError(f"support [{lo}, {hi}] contains no whole millisecond")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    @classmethod
    def fixed(cls, value: TimeLike) -> "Dist":
        v = as_seconds(value)
        return cls(v, v)

    @classmethod
    def uniform(cls, low: TimeLike, high: TimeLike) -> "Dist":
        return cls(as_seconds(low), as_seconds(high))

    @classmethod
    def parse(cls, value: Any) -> "Dist":
        if isinstance(value, dict):
            if "fixed" in value:
                return cls.fixed(value["fixed"])
            if "uniform" in value:
                lo, hi = value["uniform"]
                return cls.uniform(lo, hi)
            raise SimulationError(f"unknown distribution {sorted(value)}")
        if isinstance(value, bool) or value is None:
            raise SimulationError(f"invalid distribution {value!r}")
        return cls.fixed(value)

    def to_json(self):
        if self.low == self.high:
            return {"fixed": seconds_to_json(self.low)}
        return {"uniform": [seconds_to_json(self.low), seconds_to_json(self.high)]}

    def sample(self, rng: np.random.Generator) -> Fraction:
        if self.low == self.high:
            return self.low
        lo, hi = math.ceil(self.low / MS), math.floor(self.high / MS)
        return int(rng.integers(lo, hi + 1)) * MS


@dataclass(frozen=True)
class AgentPolicy:
    response_delay: Dist = Dist.fixed(Fraction(16, 25))
    stop_latency: Dist = Dist.fixed(Fraction(1, 2))
    false_alarm_rate_hz: Fraction = Fraction(0)
    utterance_duration: Dist = Dist.uniform(2, 8)
    false_start_duration: Dist = Dist.fixed(Fraction(2, 5))

    def __post_init__(self):
        rate = as_seconds(self.false_alarm_rate_hz)
        if rate < 0 or rate * FRAME > 1:
            raise SimulationError(f"false_alarm_rate_hz must be in [0, {1 / FRAME}]")
        object.__setattr__(self, "false_alarm_rate_hz", rate)
        for name in ("utterance_duration", "false_start_duration"):
            if getattr(self, name).low <= 0:
                raise SimulationError(f"{name} must be strictly positive")

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "AgentPolicy":
        if not isinstance(d, dict):
            raise SimulationError("policy must be a JSON object")
        known = {"response_delay", "stop_latency", "false_alarm_rate_hz", "utterance_duration", "false_start_duration"}
        unknown = set(d) - known
        if unknown:
            raise SimulationError(f"unknown policy fields {sorted(unknown)}")
        kw: Dict[str, Any] = {}
        for k, v in d.items():
            kw[k] = as_seconds(v) if k == "false_alarm_rate_hz" else Dist.parse(v)
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "response_delay": self.response_delay.to_json(),
            "stop_latency": self.stop_latency.to_json(),
            "false_alarm_rate_hz": seconds_to_json(self.false_alarm_rate_hz),
            "utterance_duration": self.utterance_duration.to_json(),
            "false_start_duration": self.false_start_duration.to_json(),
        }


@dataclass(frozen=True)
class Intent:
    speak_duration: Fraction
    patience: Optional[Fraction] = None
    post_turn_silence: Fraction = Fraction(1, 2)

    def __post_init__(self):
        speak = as_seconds(self.speak_duration)
        pts = as_seconds(self.post_turn_silence)
        pat = None if self.patience is None else as_seconds(self.patience)
        if speak <= 0:
            raise SimulationError("speak_duration must be > 0")
        if pat is not None and pat <= 0:
            raise SimulationError("patience must be > 0")
        if pts < 0:
            raise SimulationError("post_turn_silence must be >= 0")
        object.__setattr__(self, "speak_duration", speak)
        object.__setattr__(self, "patience", pat)
        object.__setattr__(self, "post_turn_silence", pts)


@dataclass(frozen=True)
class UserScript:
    """Ordered user intents.

    After the agent's reply to intent i, the user either barges in once the
    reply has run for ``patience`` seconds, or waits for the reply to finish
    and then ``post_turn_silence`` more before speaking intent i+1.
    """

    intents: Tuple[Intent, ...]

    def __post_init__(self):
        intents = tuple(self.intents)
        if not intents:
            raise SimulationError("script needs at least one intent")
        object.__setattr__(self, "intents", intents)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "UserScript":
        items = d.get("intents") if isinstance(d, dict) else d
        if not isinstance(items, list):
            raise SimulationError("script must be a list of intents or {'intents': [...]}")
        out = []
        for it in items:
            if not isinstance(it, dict) or "speak_duration" not in it:
                raise SimulationError("each intent needs speak_duration")
            out.append(Intent(it["speak_duration"], it.get("patience"), it.get("post_turn_silence", Fraction(1, 2))))
        return cls(tuple(out))


@dataclass(frozen=True)
class LogEvent:
    event: str
    t: Fraction
    data: Tuple[Tuple[str, Fraction], ...] = ()

    def get(self, key: str) -> Fraction:
        return dict(self.data)[key]

    def to_dict(self) -> dict:
        d = {"event": self.event, "t": seconds_to_json(self.t)}
        d.update((k, seconds_to_json(v)) for k, v in self.data)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LogEvent":
        if not isinstance(d, dict) or "event" not in d or "t" not in d:
            raise SimulationError("log event needs 'event' and 't'")
        data = tuple((k, as_seconds(v)) for k, v in d.items() if k not in ("event", "t"))
        return cls(str(d["event"]), as_seconds(d["t"]), data)


USER_ONSET = "UserOnset"
USER_OFFSET = "UserOffset"
AGENT_ONSET = "AgentOnset"
AGENT_OFFSET = "AgentOffset"
INTERRUPTION = "Interruption"
FALSE_ALARM_START = "FalseAlarmStart"
EVENT_KINDS = (USER_ONSET, USER_OFFSET, AGENT_ONSET, AGENT_OFFSET, INTERRUPTION, FALSE_ALARM_START)


@dataclass(frozen=True)
class GroundTruthLog:
    events: Tuple[LogEvent, ...]
    id: str = ""

    def __post_init__(self):
        events = tuple(self.events)
        for a, b in zip(events, events[1:]):
            if b.t < a.t:
                raise SimulationError("log times must be non-decreasing")
        for e in events:
            if e.event not in EVENT_KINDS:
                raise SimulationError(f"unknown log event {e.event!r}")
        object.__setattr__(self, "events", events)

    def of(self, kind: str) -> List[LogEvent]:
        return [e for e in self.events if e.event == kind]

    def to_dict(self) -> dict:
        return {"id": self.id, "events": [e.to_dict() for e in self.events]}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthLog":
        if not isinstance(d, dict) or not isinstance(d.get("events"), list):
            raise SimulationError("log line needs an 'events' list")
        return cls(tuple(LogEvent.from_dict(e) for e in d["events"]), str(d.get("id", "")))


def make_rng(seed: Union[int, Tuple[int, ...]]) -> np.random.Generator:
    if isinstance(seed, tuple):
        return np.random.default_rng(list(seed))
    return np.random.default_rng(seed)


def simulate(policy: AgentPolicy, script: UserScript, seed, id: str = "sim") -> Tuple[Conversation, GroundTruthLog]:
    rng = make_rng(seed)
    turns: List[Turn] = []
    log: List[LogEvent] = []
    fa_prob = float(policy.false_alarm_rate_hz * FRAME)
    t = Fraction(0)
    last_agent_end: Optional[Fraction] = None
    n = len(script.intents)

    def agent_turn(start, end, text):
        turns.append(Turn(SpeakerRole.AGENT, start, end, text))
        log.append(LogEvent(AGENT_ONSET, start))
        log.append(LogEvent(AGENT_OFFSET, end))

    for i, intent in enumerate(script.intents):
        u_s, u_e = t, t + intent.speak_duration
        turns.append(Turn(SpeakerRole.USER, u_s, u_e, f"sim-user-{i}"))
        log.append(LogEvent(USER_ONSET, u_s))
        log.append(LogEvent(USER_OFFSET, u_e))

        a_s = u_e + policy.response_delay.sample(rng)
        if last_agent_end is not None and a_s <= last_agent_end:
            # agent still talking over the user: reply one frame after it stops
            a_s = last_agent_end + FRAME

        # false starts: one Bernoulli draw per frame of user speech
        k = 0
        while u_s + k * FRAME < u_e:
            ft = u_s + k * FRAME
            k += 1
            fire = rng.random() < fa_prob
            if not fire or (last_agent_end is not None and ft <= last_agent_end):
                continue
            fa_end = min(ft + policy.false_start_duration.sample(rng), a_s - FRAME)
            if fa_end <= ft:
                continue
            log.append(LogEvent(FALSE_ALARM_START, ft, (("user_end", u_e),)))
            agent_turn(ft, fa_end, f"sim-agent-false-start-{i}")
            last_agent_end = fa_end

        a_e = a_s + policy.utterance_duration.sample(rng)
        if i + 1 < n and intent.patience is not None and intent.patience < a_e - a_s:
            t_int = a_s + intent.patience
            stop = min(a_e, t_int + policy.stop_latency.sample(rng))
            agent_turn(a_s, stop, f"sim-agent-{i}")
            log.append(LogEvent(INTERRUPTION, t_int, (("stop", stop),)))
            last_agent_end = stop
            t = t_int
        else:
            agent_turn(a_s, a_e, f"sim-agent-{i}")
            last_agent_end = a_e
            t = a_e + intent.post_turn_silence

    turns.sort(key=lambda x: (x.start, x.role is SpeakerRole.AGENT))
    order = {USER_ONSET: 0, INTERRUPTION: 0, FALSE_ALARM_START: 1, AGENT_ONSET: 2, USER_OFFSET: 3, AGENT_OFFSET: 3}
    log.sort(key=lambda e: (e.t, order[e.event]))
    step = {"transform": "simulate", "policy": policy.to_dict()}
    return Conversation(id, tuple(turns), (step,)), GroundTruthLog(tuple(log), id)


def oracle_report(log: GroundTruthLog, cfg: MetricsConfig = MetricsConfig()) -> MetricsReport:
    """Metrics straight from the labelled events, without segment inference."""
    onsets = log.of(USER_ONSET)
    offsets = log.of(USER_OFFSET)
    if len(onsets) != len(offsets) or any(b.t <= a.t for a, b in zip(onsets, offsets)):
        raise SimulationError(f"log {log.id!r}: user onsets and offsets do not pair up")
    user_end = {a.t: b.t for a, b in zip(onsets, offsets)}
    agent_onsets = [e.t for e in log.of(AGENT_ONSET)]

    n_opp = n_succ = 0
    latency_sum = Fraction(0)
    for ev in log.of(INTERRUPTION):
        if ev.t not in user_end:
            raise SimulationError(f"log {log.id!r}: interruption at {ev.t} without a user onset")
        stop = ev.get("stop")
        if stop <= ev.t:
            continue  # the agent stopped exactly at the onset: no overlap, no opportunity
        n_opp += 1
        latency = stop - ev.t
        guard_end = user_end[ev.t] if cfg.resume_guard is None else min(user_end[ev.t], stop + cfg.resume_guard)
        resumed = any(stop < a < guard_end for a in agent_onsets)
        if latency <= cfg.success_window and not resumed:
            n_succ += 1
            latency_sum += latency

    n_fa = n_exempt = 0
    for ev in log.of(FALSE_ALARM_START):
        if ev.get("user_end") - ev.t > cfg.false_alarm_exemption:
            n_fa += 1
        else:
            n_exempt += 1

    first, early, none_ = Fraction(0), 0, 0
    n_first = 0
    if not agent_onsets:
        none_ = 1
    elif agent_onsets[0] < offsets[0].t:
        early = 1
    else:
        first, n_first = agent_onsets[0] - offsets[0].t, 1

    return MetricsReport(
        n_timelines=1,
        n_user_turns=len(onsets),
        n_barge_in_opportunities=n_opp,
        n_successes=n_succ,
        n_false_alarms=n_fa,
        n_false_alarm_exempt=n_exempt,
        n_interrupted_timelines=int(n_opp > 0),
        latency_sum=latency_sum,
        first_response_sum=first,
        n_first_response=n_first,
        n_first_response_early=early,
        n_no_response=none_,
    )


def random_policy(rng: np.random.Generator) -> AgentPolicy:
    """A random but valid policy, for corpus generation and oracle tests."""
    def ms(lo, hi):
        return int(rng.integers(lo, hi + 1)) * MS

    d0 = ms(0, 800)
    s0 = ms(50, 1500)
    u0 = ms(800, 3000)
    return AgentPolicy(
        response_delay=Dist.uniform(d0, d0 + ms(0, 600)),
        stop_latency=Dist.uniform(s0, s0 + ms(0, 1200)),
        false_alarm_rate_hz=Fraction(int(rng.integers(0, 60)), 100),
        utterance_duration=Dist.uniform(u0, u0 + ms(500, 6000)),
        false_start_duration=Dist.uniform(ms(40, 200), ms(200, 900)),
    )


def random_script(rng: np.random.Generator, n_intents: Optional[int] = None) -> UserScript:
    n = int(rng.integers(2, 7)) if n_intents is None else n_intents
    intents = []
    for _ in range(n):
        patience = int(rng.integers(200, 4000)) * MS if rng.random() < 0.6 else None
        intents.append(
            Intent(int(rng.integers(300, 6000)) * MS, patience, int(rng.integers(0, 1500)) * MS)
        )
    return UserScript(tuple(intents))
