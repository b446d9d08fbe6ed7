"""Command line entry point: ``duplexkit <subcommand> ...``.

Exit status: 0 on success, 1 when any item failed (details on stderr and in
``--errors-json``), 2 on usage, config or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .aligner import AgentTurnTokens, align_conversation, serialize_matrix
from .builder import (
    QaPair,
    TurnLimitRejection,
    apply_barge_in,
    build_duplex_single_turn,
    concat_multiturn,
    enforce_turn_limit,
    make_impatient,
)
from .config import ConfigError, ToolConfig, load_config
from .manifest import (
    ManifestError,
    atomic_open,
    conversation_from_dict,
    conversation_to_dict,
    dumps,
    iter_jsonl,
    loads,
    timeline_from_dict,
    turn_from_dict,
)
from .metrics import combine, evaluate_timeline
from .simulator import AgentPolicy, UserScript, simulate
from .timeline import (
    Conversation,
    DuplexError,
    SpeakerRole,
    TimeGrid,
    Turn,
    as_seconds,
    tracks_from_conversation,
)

log = logging.getLogger("duplexkit")

CHUNK = 256
PAIRING_WINDOW = 1024


class ItemError(Exception):
    def __init__(self, message: str, line: Optional[int] = None, item_id: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.item_id = item_id

    def to_dict(self) -> dict:
        return {"line": self.line, "id": self.item_id, "message": self.message}

    def __str__(self):
        parts = []
        if self.line is not None:
            parts.append(f"line {self.line}")
        if self.item_id:
            parts.append(f"id {self.item_id}")
        return (", ".join(parts) + ": " if parts else "") + self.message


class Run:
    """Collects item errors and rejections for one subcommand invocation."""

    def __init__(self, command: str):
        self.command = command
        self.errors: List[ItemError] = []
        self.rejected: List[dict] = []

    def error(self, err: ItemError):
        self.errors.append(err)
        print(f"error: {err}", file=sys.stderr)

    def summary(self) -> dict:
        return {
            "command": self.command,
            "n_errors": len(self.errors),
            "errors": [e.to_dict() for e in self.errors],
            "n_rejected": len(self.rejected),
            "rejected": self.rejected,
        }


def ordered_map(func: Callable, items: Iterable, jobs: int) -> Iterator:
    """``map`` in input order, chunked so memory stays bounded."""
    if jobs <= 1:
        yield from map(func, items)
        return
    it = iter(items)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        while True:
            chunk = list(itertools.islice(it, CHUNK * jobs))
            if not chunk:
                break
            yield from pool.map(func, chunk, chunksize=max(1, len(chunk) // (4 * jobs)))


def _read_items(path: str) -> Iterator[Tuple[int, Any]]:
    """``(line, obj)`` pairs; a malformed line yields ``(line, ItemError)``."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, loads(line)
            except ValueError as exc:
                yield lineno, ItemError(f"invalid JSON: {exc}", lineno)


def _item_id(obj) -> Optional[str]:
    return obj.get("id") if isinstance(obj, dict) and isinstance(obj.get("id"), str) else None


# ---------------------------------------------------------------- duplexify


def qa_pair_from_dict(d: dict) -> QaPair:
    def side(key, role):
        s = d.get(key)
        if not isinstance(s, dict):
            raise ManifestError(f"QA pair needs a {key!r} object")
        if "duration_s" in s:
            dur = as_seconds(s["duration_s"])
            start, end = Fraction(0), dur
        else:
            t = turn_from_dict({"role": role, **s})
            start, end = Fraction(0), t.duration
        return Turn(SpeakerRole(role), start, end, s.get("text", ""), s.get("audio_ref"))

    cid = d.get("id")
    if not isinstance(cid, str) or not cid:
        raise ManifestError("QA pair needs a non-empty string 'id'")
    return QaPair(side("user", "user"), side("agent", "agent"), cid)


def _duplexify_item(args) -> Tuple[int, Optional[dict], Optional[ItemError], Optional[dict]]:
    lineno, obj, cfg = args
    if isinstance(obj, ItemError):
        return lineno, None, obj, None
    try:
        if isinstance(obj, dict) and "turns" in obj:
            conv = conversation_from_dict(obj)
        elif isinstance(obj, dict) and "user" in obj and "agent" in obj:
            conv = build_duplex_single_turn(qa_pair_from_dict(obj), cfg.builder)
        else:
            raise ManifestError("line is neither a QA pair nor a conversation")
    except (DuplexError, TypeError, ValueError) as exc:
        return lineno, None, ItemError(getattr(exc, "message", str(exc)), lineno, _item_id(obj)), None
    checked = enforce_turn_limit(conv, cfg.builder)
    if isinstance(checked, TurnLimitRejection):
        return lineno, None, None, {"line": lineno, **checked.to_dict()}
    return lineno, conversation_to_dict(conv), None, None


def _pick_barge_in(conv: Conversation, rng: np.random.Generator):
    """Random agent turn followed by a user turn, and an interrupt strictly inside it."""
    cands = []
    for i, t in enumerate(conv.turns):
        if t.role is not SpeakerRole.AGENT:
            continue
        nxt = next((u for u in conv.turns[i + 1:] if u.role is SpeakerRole.USER), None)
        lo = math.floor(t.start * 1000) + 1
        hi = math.ceil(t.end * 1000) - 1
        if nxt is not None and lo <= hi:
            cands.append((i, nxt, lo, hi))
    if not cands:
        return None
    i, nxt, lo, hi = cands[int(rng.integers(len(cands)))]
    return i, Fraction(int(rng.integers(lo, hi + 1)), 1000), nxt


def _multiturn_group(args):
    gidx, group, cfg, seed, p_barge = args
    convs = [conversation_from_dict(d) for _, d in group]
    lines = [ln for ln, _ in group]
    try:
        conv = concat_multiturn(convs, cfg.builder)
        rng = np.random.default_rng([seed, gidx, 1])
        if p_barge > 0 and rng.random() < p_barge:
            pick = _pick_barge_in(conv, rng)
            if pick is not None:
                i, t, nxt = pick
                conv = apply_barge_in(conv, i, t, nxt, cfg.builder, keep_rest=True)
    except DuplexError as exc:
        return None, ItemError(str(exc), lines[0], "+".join(c.id for c in convs)), None
    checked = enforce_turn_limit(conv, cfg.builder)
    if isinstance(checked, TurnLimitRejection):
        return None, None, {"line": lines[0], **checked.to_dict()}
    return conversation_to_dict(conv), None, None


def _groups(records: Iterable[Tuple[int, dict]], k: int, seed: int) -> Iterator[Tuple[int, list]]:
    """Seeded random groups of k, shuffled within windows of PAIRING_WINDOW items."""
    gidx = 0
    it = iter(records)
    for widx in itertools.count():
        window = list(itertools.islice(it, PAIRING_WINDOW))
        if not window:
            return
        perm = np.random.default_rng([seed, widx, 0]).permutation(len(window))
        shuffled = [window[j] for j in perm]
        for g in range(0, len(shuffled), k):
            yield gidx, shuffled[g:g + k]
            gidx += 1


def cmd_duplexify(args, cfg: ToolConfig, run: Run) -> None:
    k = args.multiturn
    if k < 1:
        raise ConfigError("--multiturn must be >= 1")
    if not 0 <= args.barge_in <= 1:
        raise ConfigError("--barge-in must be in [0, 1]")

    def singles():
        items = ((ln, obj, cfg) for ln, obj in _read_items(args.input))
        for lineno, rec, err, rej in ordered_map(_duplexify_item, items, args.jobs):
            if err:
                run.error(err)
            elif rej:
                run.rejected.append(rej)
            else:
                yield lineno, rec

    with atomic_open(args.output) as out:
        if k == 1:
            for _, rec in singles():
                out.write(dumps(rec) + "\n")
            return
        tasks = ((g, grp, cfg, args.seed, args.barge_in) for g, grp in _groups(singles(), k, args.seed))
        for rec, err, rej in ordered_map(_multiturn_group, tasks, args.jobs):
            if err:
                run.error(err)
            elif rej:
                run.rejected.append(rej)
            else:
                out.write(dumps(rec) + "\n")


# ---------------------------------------------------------------- impatient


def _impatient_item(args):
    lineno, obj, cfg, factor = args
    if isinstance(obj, ItemError):
        return None, obj
    try:
        conv = conversation_from_dict(obj)
        return conversation_to_dict(make_impatient(conv, factor, cfg.builder)), None
    except DuplexError as exc:
        return None, ItemError(getattr(exc, "message", str(exc)), lineno, _item_id(obj))


def cmd_impatient(args, cfg: ToolConfig, run: Run) -> None:
    factor = as_seconds(args.factor)
    if not 0 < factor <= 1:
        raise ConfigError(f"--factor must be in (0, 1], got {args.factor}")
    items = ((ln, obj, cfg, factor) for ln, obj in _read_items(args.input))
    with atomic_open(args.output) as out:
        for rec, err in ordered_map(_impatient_item, items, args.jobs):
            if err:
                run.error(err)
            else:
                out.write(dumps(rec) + "\n")


# ---------------------------------------------------------------- align

_UNSAFE = re.compile(r"[^A-Za-z0-9._+-]")


def safe_name(cid: str) -> str:
    name = _UNSAFE.sub("_", cid)
    return name if name.strip(".") else "_" + name


def load_turn_tokens(path: Path) -> List[AgentTurnTokens]:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    turns = d.get("turns") if isinstance(d, dict) else None
    if not isinstance(turns, list):
        raise ManifestError(f"{path.name}: needs a 'turns' list")
    out = []
    for t in turns:
        codes = np.asarray(t["speech_codes"], dtype=np.int64)
        if codes.ndim == 1 and codes.size == 0:
            codes = codes.reshape(0, 0)
        out.append(AgentTurnTokens(int(t["turn_index"]), tuple(t["text_tokens"]), codes))
    return out


def _align_item(args):
    lineno, obj, cfg, tokens_dir, out_dir = args
    if isinstance(obj, ItemError):
        return obj
    try:
        conv = conversation_from_dict(obj)
        tok_path = Path(tokens_dir) / f"{safe_name(conv.id)}.json"
        if not tok_path.exists():
            raise ManifestError(f"no token file {tok_path.name}")
        tokens = load_turn_tokens(tok_path)
        result = align_conversation(
            conv, tokens, cfg.vocab, cfg.grid, cfg.aligner.delay_frames, cfg.aligner.loss_weights
        )
        stem = Path(out_dir) / safe_name(conv.id)
        with atomic_open(stem.with_suffix(".dupx"), "wb") as fh:
            fh.write(serialize_matrix(result.matrix))
        with atomic_open(stem.with_suffix(".json")) as fh:
            fh.write(json.dumps(result.sidecar(conv), indent=1, default=str) + "\n")
    except (DuplexError, KeyError, TypeError, ValueError, OSError) as exc:
        return ItemError(getattr(exc, "message", str(exc)), lineno, _item_id(obj))
    return None


def cmd_align(args, cfg: ToolConfig, run: Run) -> None:
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    items = ((ln, obj, cfg, args.tokens_dir, args.out_dir) for ln, obj in _read_items(args.input))
    for err in ordered_map(_align_item, items, args.jobs):
        if err:
            run.error(err)


# ---------------------------------------------------------------- eval


def _eval_item(args):
    lineno, obj, mcfg = args
    if isinstance(obj, ItemError):
        return None, obj
    try:
        return evaluate_timeline(timeline_from_dict(obj), mcfg), None
    except DuplexError as exc:
        return None, ItemError(getattr(exc, "message", str(exc)), lineno, _item_id(obj))


def cmd_eval(args, cfg: ToolConfig, run: Run) -> None:
    items = ((ln, obj, cfg.metrics) for ln, obj in _read_items(args.input))
    reports = []
    for rep, err in ordered_map(_eval_item, items, args.jobs):
        if err:
            run.error(err)
        else:
            reports.append(rep)
    report = combine(reports)
    doc = report.to_dict(events=not args.no_events)
    doc["config"] = {
        "success_window": float(cfg.metrics.success_window),
        "false_alarm_exemption": float(cfg.metrics.false_alarm_exemption),
        "resume_guard": None if cfg.metrics.resume_guard is None else float(cfg.metrics.resume_guard),
    }
    with atomic_open(args.output) as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if args.events_csv:
        with atomic_open(args.events_csv) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timeline_id", "kind", "t", "latency", "success_or_counted"])
            for e in report.barge_ins:
                w.writerow([e.timeline_id, "barge_in", float(e.t_user_onset), float(e.latency), e.success])
            for e in report.false_alarms:
                w.writerow([e.timeline_id, "false_alarm", float(e.t_agent_onset), "", e.counted])


# ---------------------------------------------------------------- simulate


def _simulate_item(args):
    i, policy, script, seed = args
    conv, glog = simulate(policy, script, (seed, i), id=f"sim-{i:06d}")
    return conversation_to_dict(conv), glog.to_dict()


def _load_json(path: str, what: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from exc


def cmd_simulate(args, cfg: ToolConfig, run: Run) -> None:
    try:
        policy = AgentPolicy.from_dict(_load_json(args.policy, "policy"))
        script = UserScript.from_dict(_load_json(args.script, "script"))
    except DuplexError as exc:
        raise ConfigError(str(exc)) from exc
    if args.n < 0:
        raise ConfigError("-n must be >= 0")
    items = ((i, policy, script, args.seed) for i in range(args.n))
    with atomic_open(args.output) as out, atomic_open(args.log_output) as lout:
        for rec, glog in ordered_map(_simulate_item, items, args.jobs):
            out.write(dumps(rec) + "\n")
            lout.write(dumps(glog) + "\n")


# ---------------------------------------------------------------- inspect


def render_timeline(conv: Conversation, grid: TimeGrid = TimeGrid()) -> str:
    """ASCII view: one character per frame, '#' where the role is speaking."""
    tl = tracks_from_conversation(conv)
    n = grid.ceil_frame(tl.total_duration)

    def row(track):
        cells = ["."] * n
        for s, e in track.segments:
            for k in range(grid.ceil_frame(s), min(grid.ceil_frame(e), n)):
                cells[k] = "#"
        return "".join(cells)

    ticks = [" "] * n
    for sec in range(int(tl.total_duration) + 1):
        k = grid.ceil_frame(sec)
        if k < n:
            ticks[k] = str(sec % 10)
    ms = float(grid.frame_duration * 1000)
    return "\n".join(
        [
            f"{conv.id}  ({n} frames, {ms:g} ms each, duration {float(tl.total_duration):g} s)",
            "time  |" + "".join(ticks) + "|",
            "user  |" + row(tl.user) + "|",
            "agent |" + row(tl.agent) + "|",
        ]
    )


def cmd_inspect(args, cfg: ToolConfig, run: Run) -> None:
    if not args.id:
        raise ConfigError("--id must be a non-empty conversation id")
    for lineno, obj in iter_jsonl(args.input):
        if _item_id(obj) == args.id:
            print(render_timeline(conversation_from_dict(obj), cfg.grid))
            return
    raise ConfigError(f"conversation {args.id!r} not found in {args.input}")


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (grid, vocab, builder, metrics, aligner)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value, e.g. builder.pre_agent_gap=0.64")
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes (output order is unaffected)")
    common.add_argument("--errors-json", help="write a machine-readable error summary here")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="duplexkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"duplexkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("duplexify", parents=[common], help="QA pairs -> duplex conversations")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--multiturn", type=int, default=1, metavar="K", help="concatenate K random items")
    s.add_argument("--barge-in", type=float, default=0.0, metavar="P",
                   help="fraction of multi-turn items that get a user barge-in")
    s.set_defaults(func=cmd_duplexify)

    s = sub.add_parser("impatient", parents=[common], help="scale inter-user silences")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--factor", default="0.5")
    s.set_defaults(func=cmd_impatient)

    s = sub.add_parser("align", parents=[common], help="write DUPX channel matrices")
    s.add_argument("input")
    s.add_argument("tokens_dir")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("eval", parents=[common], help="turn-taking metrics report")
    s.add_argument("input", help="conversation manifest or segment-log JSONL")
    s.add_argument("output", help="JSON report path")
    s.add_argument("--events-csv", help="optional per-event CSV")
    s.add_argument("--no-events", action="store_true", help="omit per-event evidence from the JSON report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("simulate", parents=[common], help="simulated conversations + ground-truth logs")
    s.add_argument("--policy", required=True)
    s.add_argument("--script", required=True)
    s.add_argument("-n", type=int, default=1)
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--log-out", dest="log_output", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("inspect", parents=[common], help="ASCII dual-track view of one conversation")
    s.add_argument("input")
    s.add_argument("--id", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(args.command)
    status = 0
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config, args.overrides)
        args.func(args, cfg, run)
        status = 1 if run.errors else 0
    except (ConfigError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.errors.append(ItemError(str(exc), getattr(exc, "line", None)))
        status = 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.errors.append(ItemError(str(exc)))
        status = 2
    if run.rejected:
        print(f"{len(run.rejected)} item(s) rejected by the turn limit", file=sys.stderr)
    if args.errors_json:
        with atomic_open(args.errors_json) as fh:
            fh.write(json.dumps(run.summary(), indent=2) + "\n")
    return status


if __name__ == "__main__":
    sys.exit(main())
