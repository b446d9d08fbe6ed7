"""Turn-based QA data to duplex conversations.

Every transform here is deterministic given its arguments; random choices
(pairing, interrupt points) are made by callers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

from .timeline import (
    Conversation,
    DuplexError,
    SpeakerRole,
    TimeLike,
    Turn,
    as_seconds,
    seconds_to_json,
)


class BuilderError(DuplexError):
    pass


@dataclass(frozen=True)
class BuilderConfig:
    pre_agent_gap: Fraction = Fraction(16, 25)  # 0.64 s
    barge_in_residual: Fraction = Fraction(16, 25)
    max_turn_duration: Fraction = Fraction(25)
    inter_pair_gap: Fraction = Fraction(16, 25)

    def __post_init__(self):
        for name in ("pre_agent_gap", "barge_in_residual", "max_turn_duration", "inter_pair_gap"):
            v = as_seconds(getattr(self, name))
            if v < 0:
                raise BuilderError(f"{name} must be >= 0")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class QaPair:
    """A user question and agent answer, each timed relative to its own start."""

    user_turn: Turn
    agent_turn: Turn
    id: str = ""

    def __post_init__(self):
        if self.user_turn.role is not SpeakerRole.USER:
            raise BuilderError("QaPair.user_turn must have role user")
        if self.agent_turn.role is not SpeakerRole.AGENT:
            raise BuilderError("QaPair.agent_turn must have role agent")

    @classmethod
    def from_durations(cls, user_s: TimeLike, agent_s: TimeLike, user_text="", agent_text="", id=""):
        return cls(
            Turn(SpeakerRole.USER, Fraction(0), as_seconds(user_s), user_text),
            Turn(SpeakerRole.AGENT, Fraction(0), as_seconds(agent_s), agent_text),
            id,
        )


def _step(name: str, **params) -> dict:
    return {"transform": name, **{k: seconds_to_json(v) if isinstance(v, Fraction) else v for k, v in params.items()}}


def build_duplex_single_turn(pair: QaPair, cfg: BuilderConfig = BuilderConfig(), id: Optional[str] = None) -> Conversation:
    """User turn at [0, d_u]; agent turn after ``cfg.pre_agent_gap`` of silence."""
    d_u, d_a = pair.user_turn.duration, pair.agent_turn.duration
    if d_u <= 0 or d_a <= 0:
        raise BuilderError("QA turns must have positive duration")
    a0 = d_u + cfg.pre_agent_gap
    user = pair.user_turn.with_span(Fraction(0), d_u)
    agent = pair.agent_turn.with_span(a0, a0 + d_a)
    step = _step("single_turn", pre_agent_gap=cfg.pre_agent_gap)
    return Conversation(id if id is not None else pair.id, (user, agent), (step,))


def concat_multiturn(convs: Sequence[Conversation], cfg: BuilderConfig = BuilderConfig(), id: Optional[str] = None) -> Conversation:
    """Append conversations on one time axis.

    Each following conversation is shifted so its first user turn starts
    ``cfg.inter_pair_gap`` after the last turn end so far (or later, if it
    opens with agent speech that would otherwise overlap).
    """
    convs = list(convs)
    if not convs:
        raise BuilderError("concat_multiturn needs at least one conversation")
    for c in convs:
        if not isinstance(c, Conversation):
            raise BuilderError(f"not a Conversation: {type(c).__name__}")
        if not c.turns:
            raise BuilderError(f"conversation {c.id!r} is empty")
    if len(convs) == 1:
        return convs[0]
    turns: List[Turn] = list(convs[0].turns)
    end = convs[0].end
    prov = list(convs[0].provenance)
    for c in convs[1:]:
        users = c.by_role(SpeakerRole.USER)
        anchor = users[0].start if users else c.turns[0].start
        # turns that precede the first user turn must still start after `end`
        shift = max(end + cfg.inter_pair_gap - anchor, end - c.turns[0].start)
        turns.extend(t.shifted(shift) for t in c.turns)
        end = max(end, c.end + shift)
    prov.append(_step("concat", parts=[c.id for c in convs], inter_pair_gap=cfg.inter_pair_gap))
    new_id = id if id is not None else "+".join(c.id for c in convs)
    try:
        return Conversation(new_id, tuple(sorted(turns, key=lambda t: t.start)), tuple(prov))
    except DuplexError as exc:
        raise BuilderError(f"concatenation produced an invalid conversation: {exc}") from exc


def apply_barge_in(
    conv: Conversation,
    agent_turn_idx: int,
    t_interrupt: TimeLike,
    next_user: Turn,
    cfg: BuilderConfig = BuilderConfig(),
    keep_rest: bool = False,
) -> Conversation:
    """Have ``next_user`` cut into agent turn ``agent_turn_idx`` at ``t_interrupt``.

    The agent keeps at most ``cfg.barge_in_residual`` of speech after the
    interrupt. Turns after the agent turn are dropped, unless ``keep_rest``:
    then the first later user turn is replaced by ``next_user`` and every turn
    after it is moved so its offset from that user turn's end is preserved.
    """
    t = as_seconds(t_interrupt)
    turns = list(conv.turns)
    if not 0 <= agent_turn_idx < len(turns):
        raise BuilderError(f"turn index {agent_turn_idx} out of range")
    agent = turns[agent_turn_idx]
    if agent.role is not SpeakerRole.AGENT:
        raise BuilderError(f"turn {agent_turn_idx} is not an agent turn")
    if not agent.start < t < agent.end:
        raise BuilderError(f"interrupt {t} not strictly inside agent turn [{agent.start}, {agent.end}]")
    if next_user.role is not SpeakerRole.USER or next_user.duration <= 0:
        raise BuilderError("next_user must be a user turn with positive duration")

    new_end = min(agent.end, t + cfg.barge_in_residual)
    if new_end <= agent.start:
        raise BuilderError("truncation leaves no agent speech")
    user = next_user.with_span(t, t + next_user.duration)
    out = turns[:agent_turn_idx] + [agent.with_span(agent.start, new_end), user]

    rest = turns[agent_turn_idx + 1:]
    if keep_rest:
        first_user = next((i for i, x in enumerate(rest) if x.role is SpeakerRole.USER), None)
        if first_user is not None:
            shift = user.end - rest[first_user].end
            out.extend(x.shifted(shift) for x in rest[first_user + 1:])

    step = _step(
        "barge_in",
        agent_turn=agent_turn_idx,
        t_interrupt=t,
        residual=cfg.barge_in_residual,
        rest="kept" if keep_rest else "dropped",
    )
    try:
        return conv.with_turns(out, step)
    except DuplexError as exc:
        raise BuilderError(f"barge-in produced an invalid conversation: {exc}") from exc


def make_impatient(conv: Conversation, factor: TimeLike = Fraction(1, 2), cfg: BuilderConfig = BuilderConfig()) -> Conversation:
    """Scale every silence between consecutive user turns by ``factor``.

    Agent turns move with the user turn before them. An agent turn that now
    runs into the advanced next user turn is cut like a barge-in (residual of
    ``cfg.barge_in_residual``); one that would start after that user onset is
    dropped.
    """
    factor = as_seconds(factor)
    if not 0 < factor <= 1:
        raise BuilderError(f"factor must be in (0, 1], got {factor}")
    users = conv.by_role(SpeakerRole.USER)
    if len(users) < 2:
        raise BuilderError("make_impatient needs at least two user turns")
    if factor == 1:
        return conv

    # cumulative shift (earlier = positive) applied to each user turn
    shifts = [Fraction(0)]
    for prev, nxt in zip(users, users[1:]):
        gap = nxt.start - prev.end
        shifts.append(shifts[-1] + gap - gap * factor)
    new_users = [u.shifted(-s) for u, s in zip(users, shifts)]

    out: List[Turn] = list(new_users)
    agents = conv.by_role(SpeakerRole.AGENT)
    dropped = 0
    for a in agents:
        # index of the last user turn starting at or before this agent turn
        j = max((i for i, u in enumerate(users) if u.start <= a.start), default=None)
        if j is None:
            out.append(a)
            continue
        moved = a.shifted(-shifts[j])
        if j + 1 < len(new_users):
            onset = new_users[j + 1].start
            if moved.start >= onset:
                dropped += 1
                continue
            if moved.end > onset:
                moved = moved.with_span(moved.start, min(moved.end, onset + cfg.barge_in_residual))
        out.append(moved)

    out.sort(key=lambda x: (x.start, x.role is SpeakerRole.AGENT))
    # a residual must not run into the next agent turn
    fixed: List[Turn] = []
    next_agent_start = None
    for x in reversed(out):
        if x.role is SpeakerRole.AGENT:
            if next_agent_start is not None and x.end > next_agent_start:
                x = x.with_span(x.start, next_agent_start)
            next_agent_start = x.start
        fixed.append(x)
    fixed.reverse()
    step = _step("impatient", factor=str(factor), dropped_agent_turns=dropped)
    return conv.with_turns(fixed, step)


@dataclass(frozen=True)
class TurnLimitRejection:
    conversation_id: str
    limit: Fraction
    offenders: Tuple[Tuple[int, str, Fraction], ...] = field(default=())

    @property
    def reason(self) -> str:
        parts = ", ".join(f"turn {i} ({role}) {float(d):.3f}s" for i, role, d in self.offenders)
        return f"turns not under {float(self.limit):g}s: {parts}"

    def to_dict(self) -> dict:
        return {
            "id": self.conversation_id,
            "reason": "turn_limit",
            "limit_s": seconds_to_json(self.limit),
            "offenders": [
                {"turn": i, "role": role, "duration_s": seconds_to_json(d)} for i, role, d in self.offenders
            ],
        }


def enforce_turn_limit(conv: Conversation, cfg: BuilderConfig = BuilderConfig()):
    """Return ``conv`` if every turn is strictly shorter than the limit, else a rejection."""
    offenders = tuple(
        (i, t.role.value, t.duration) for i, t in enumerate(conv.turns) if t.duration >= cfg.max_turn_duration
    )
    if offenders:
        return TurnLimitRejection(conv.id, cfg.max_turn_duration, offenders)
    return conv
