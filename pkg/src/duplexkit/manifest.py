"""JSONL manifests: conversations, QA pairs and raw segment logs."""

from __future__ import annotations

import contextlib
import json
import os
import tempfile
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterator, Tuple

from .timeline import (
    Conversation,
    DuplexError,
    DuplexTimeline,
    SpeakerRole,
    Turn,
    as_seconds,
    seconds_to_json,
)


class ManifestError(DuplexError):
    def __init__(self, message: str, line: int | None = None, item_id: str | None = None):
        self.line = line
        self.item_id = item_id
        self.message = message
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)


def loads(text: str) -> Any:
    # Decimal keeps "3.84" exact on the way to Fraction.
    return json.loads(text, parse_float=Decimal)


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), default=_json_default)


def _json_default(obj):
    if isinstance(obj, Fraction):
        return seconds_to_json(obj)
    if isinstance(obj, Decimal):
        return seconds_to_json(Fraction(obj))
    if isinstance(obj, SpeakerRole):
        return obj.value
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _time(d: dict, key: str) -> Fraction:
    if key not in d:
        raise ManifestError(f"missing field {key!r}")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, Decimal, float, str)):
        raise ManifestError(f"field {key!r} must be a number")
    return as_seconds(v)


def turn_from_dict(d: dict) -> Turn:
    if not isinstance(d, dict):
        raise ManifestError("turn must be an object")
    role = d.get("role")
    if role not in ("user", "agent"):
        raise ManifestError(f"turn role must be 'user' or 'agent', got {role!r}")
    text = d.get("text", "")
    if not isinstance(text, str):
        raise ManifestError("turn text must be a string")
    ref = d.get("audio_ref")
    if ref is not None and not isinstance(ref, str):
        raise ManifestError("audio_ref must be a string or null")
    return Turn(SpeakerRole(role), _time(d, "start_s"), _time(d, "end_s"), text, ref)


def turn_to_dict(t: Turn) -> dict:
    return {
        "role": t.role.value,
        "start_s": seconds_to_json(t.start),
        "end_s": seconds_to_json(t.end),
        "text": t.text,
        "audio_ref": t.audio_ref,
    }


def conversation_from_dict(d: dict) -> Conversation:
    if not isinstance(d, dict):
        raise ManifestError("manifest line must be a JSON object")
    cid = d.get("id")
    if not isinstance(cid, str) or not cid:
        raise ManifestError("conversation needs a non-empty string 'id'")
    turns = d.get("turns")
    if not isinstance(turns, list):
        raise ManifestError("conversation needs a 'turns' list", item_id=cid)
    try:
        parsed = [turn_from_dict(t) for t in turns]
        prov = d.get("provenance") or ()
        return Conversation(cid, tuple(parsed), tuple(_plain(p) for p in prov))
    except ManifestError as exc:
        raise ManifestError(exc.message, item_id=cid) from exc
    except DuplexError as exc:
        raise ManifestError(str(exc), item_id=cid) from exc


def conversation_to_dict(c: Conversation) -> dict:
    d = {"id": c.id, "turns": [turn_to_dict(t) for t in c.turns]}
    if c.provenance:
        d["provenance"] = [_plain(p) for p in c.provenance]
    return d


def _plain(obj):
    """Normalise parsed JSON (Decimal) and Fractions to plain JSON numbers."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (Fraction, Decimal)):
        return seconds_to_json(Fraction(obj))
    return obj


def timeline_from_dict(d: dict) -> DuplexTimeline:
    """Parse either a conversation line or a raw segment-log line."""
    if not isinstance(d, dict):
        raise ManifestError("line must be a JSON object")
    if "turns" in d:
        from .timeline import tracks_from_conversation

        return tracks_from_conversation(conversation_from_dict(d))
    cid = d.get("id", "")
    try:
        user = [(as_seconds(s), as_seconds(e)) for s, e in d.get("user", [])]
        agent = [(as_seconds(s), as_seconds(e)) for s, e in d.get("agent", [])]
        total = d.get("total_s")
        return DuplexTimeline.from_spans(user, agent, None if total is None else as_seconds(total), id=str(cid))
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"bad segment log: {exc}", item_id=str(cid)) from exc


def timeline_to_dict(tl: DuplexTimeline) -> dict:
    return {
        "id": tl.id,
        "user": [[seconds_to_json(s), seconds_to_json(e)] for s, e in tl.user.segments],
        "agent": [[seconds_to_json(s), seconds_to_json(e)] for s, e in tl.agent.segments],
    }


def iter_jsonl(path: os.PathLike | str) -> Iterator[Tuple[int, Any]]:
    """Yield ``(line_number, parsed_object)``; blank lines are skipped."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"invalid JSON ({exc.msg})", line=lineno) from exc


@contextlib.contextmanager
def atomic_open(path: os.PathLike | str, mode: str = "w"):
    """Write to a temp file beside *path* and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    binary = "b" in mode
    try:
        with os.fdopen(fd, mode, **({} if binary else {"encoding": "utf-8", "newline": "\n"})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_jsonl(path: os.PathLike | str, records) -> int:
    n = 0
    with atomic_open(path) as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
            n += 1
    return n


def read_conversations(path: os.PathLike | str) -> Iterator[Conversation]:
    for lineno, obj in iter_jsonl(path):
        try:
            yield conversation_from_dict(obj)
        except ManifestError as exc:
            raise ManifestError(exc.message, line=lineno, item_id=exc.item_id) from exc
