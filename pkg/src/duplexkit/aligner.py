"""Multi-channel training matrices on the shared frame grid.

Column 0 carries agent text tokens, columns 1..N the agent's codec channels.
Each agent turn is anchored at its start frame ``f0``:

* text: BOS at ``f0``, tokens after it, then EOS; PAD everywhere else.
* speech: the block BOS, codes, EOS is shifted right by ``delay_frames``.
  Codes may run up to frame ``f0 + F`` (F = frames spanned by the turn), so a
  delay of d drops the last d codes; EOS lands on ``f0 + F + 1``.
  Frames outside agent blocks hold SILENCE.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .codec import CodecError, VocabMap
from .timeline import (
    DEFAULT_GRID,
    Conversation,
    DuplexError,
    SpeakerRole,
    TimeGrid,
    seconds_to_json,
    time_to_frame,
    tracks_from_conversation,
)

TEXT_LOSS_WEIGHT = 3.0
SPEECH_LOSS_WEIGHT = 1.0


class AlignmentError(DuplexError):
    pass


class DupxFormatError(DuplexError):
    pass


@dataclass(frozen=True)
class TextSpecials:
    bos: int
    eos: int
    pad: int

    @classmethod
    def after(cls, text_vocab_size: int) -> "TextSpecials":
        return cls(text_vocab_size, text_vocab_size + 1, text_vocab_size + 2)

    @property
    def count(self) -> int:
        return 3


@dataclass(frozen=True)
class AgentTurnTokens:
    turn_ref: int
    text_tokens: Tuple[int, ...]
    speech_codes: np.ndarray = field(compare=False)

    def __post_init__(self):
        toks = tuple(int(t) for t in self.text_tokens)
        if not toks:
            raise AlignmentError(f"turn {self.turn_ref}: text_tokens must not be empty")
        codes = np.asarray(self.speech_codes, dtype=np.int64)
        if codes.ndim != 2:
            raise AlignmentError(f"turn {self.turn_ref}: speech_codes must be a T x N matrix")
        object.__setattr__(self, "text_tokens", toks)
        object.__setattr__(self, "speech_codes", codes)


def default_loss_weights(n_speech: int) -> Tuple[float, ...]:
    return (TEXT_LOSS_WEIGHT,) + (SPEECH_LOSS_WEIGHT,) * n_speech


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    tokens: np.ndarray  # (n_frames, 1 + N) int32, channel-local ids
    loss_weights: Tuple[float, ...]
    user_mask: np.ndarray  # (n_frames,) bool
    grid: TimeGrid = DEFAULT_GRID
    text_vocab_size: int = 32000
    codebook_size: int = 4037

    def __post_init__(self):
        tokens = np.ascontiguousarray(self.tokens, dtype=np.int32)
        if tokens.ndim != 2 or tokens.shape[1] < 2:
            raise AlignmentError("tokens must be an (n_frames, 1 + N) matrix with N >= 1")
        mask = np.ascontiguousarray(self.user_mask, dtype=bool)
        if mask.shape != (tokens.shape[0],):
            raise AlignmentError("user_mask length must equal n_frames")
        # stored as float32 so the DUPX round trip is exact
        weights = tuple(float(w) for w in np.asarray(self.loss_weights, dtype=np.float32))
        if len(weights) != tokens.shape[1]:
            raise AlignmentError("need one loss weight per channel")
        text_limit = self.text_vocab_size + TextSpecials.after(0).count
        if tokens.size:
            if tokens[:, 0].min() < 0 or tokens[:, 0].max() >= text_limit:
                raise AlignmentError("text channel entry out of range")
            if tokens[:, 1:].min() < 0 or tokens[:, 1:].max() >= self.codebook_size:
                raise AlignmentError("speech channel entry out of range")
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "user_mask", mask)
        object.__setattr__(self, "loss_weights", weights)

    @property
    def n_frames(self) -> int:
        return self.tokens.shape[0]

    @property
    def n_speech_channels(self) -> int:
        return self.tokens.shape[1] - 1

    @property
    def text(self) -> np.ndarray:
        return self.tokens[:, 0]

    @property
    def speech(self) -> np.ndarray:
        return self.tokens[:, 1:]

    def __eq__(self, other):
        if not isinstance(other, ChannelMatrix):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.text_vocab_size == other.text_vocab_size
            and self.codebook_size == other.codebook_size
            and self.loss_weights == other.loss_weights
            and np.array_equal(self.tokens, other.tokens)
            and np.array_equal(self.user_mask, other.user_mask)
        )


@dataclass(frozen=True)
class TurnPlacement:
    """Where one agent turn landed, and which codes did not fit."""

    turn_index: int
    start_frame: int
    n_frames: int
    text_bos_frame: int
    speech_bos_frame: Optional[int]
    speech_eos_frame: Optional[int]
    codes_placed: int
    delay_dropped: int
    clipped_at_end: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class Alignment:
    matrix: ChannelMatrix
    placements: Tuple[TurnPlacement, ...]

    def sidecar(self, conv: Conversation) -> dict:
        return {
            "id": conv.id,
            "n_frames": self.matrix.n_frames,
            "frames_per_second": str(self.matrix.grid.frames_per_second),
            "turns": [
                {"role": t.role.value, "start_s": seconds_to_json(t.start), "end_s": seconds_to_json(t.end)}
                for t in conv.turns
            ],
            "placements": [p.to_dict() for p in self.placements],
        }


def turn_frame_span(start, end, grid: TimeGrid = DEFAULT_GRID) -> Tuple[int, int]:
    """``(f0, F)``: first frame of the turn and the number of frames it spans."""
    f0 = time_to_frame(start, grid)
    return f0, grid.ceil_frame(end) - f0


def user_activity_mask(conv: Conversation, n_frames: int, grid: TimeGrid = DEFAULT_GRID) -> np.ndarray:
    """True on frames whose start time lies inside a user segment."""
    tl = tracks_from_conversation(conv)
    starts = [grid.ceil_frame(s) for s, _ in tl.user.segments]
    stops = [grid.ceil_frame(e) for _, e in tl.user.segments]
    return kernels.fill_ranges(n_frames, np.asarray(starts, dtype=np.int64), np.asarray(stops, dtype=np.int64))


def align_conversation(
    conv: Conversation,
    turn_tokens: Sequence[AgentTurnTokens],
    vmap: VocabMap = VocabMap(),
    grid: TimeGrid = DEFAULT_GRID,
    delay_frames: int = 1,
    loss_weights: Optional[Sequence[float]] = None,
) -> Alignment:
    sp = vmap.speech
    n_ch = sp.n_channels
    specials = TextSpecials.after(vmap.text_vocab_size)
    if delay_frames < 0:
        raise AlignmentError("delay_frames must be >= 0")
    if not conv.turns:
        raise AlignmentError(f"conversation {conv.id!r} has no turns")

    by_turn: Dict[int, AgentTurnTokens] = {}
    for tt in turn_tokens:
        if tt.turn_ref in by_turn:
            raise AlignmentError(f"duplicate tokens for turn {tt.turn_ref}")
        by_turn[tt.turn_ref] = tt

    n_frames = math.ceil(conv.end * grid.frames_per_second)
    tokens = np.empty((n_frames, 1 + n_ch), dtype=np.int32)
    tokens[:, 0] = specials.pad
    for c in range(n_ch):
        tokens[:, 1 + c] = sp.silence_for(c)

    agent_idx = [i for i, t in enumerate(conv.turns) if t.role is SpeakerRole.AGENT]
    extra = set(by_turn) - set(agent_idx)
    if extra:
        raise AlignmentError(f"tokens given for non-agent turns {sorted(extra)}")

    placements: List[TurnPlacement] = []
    prev_block_end = -1
    for i in agent_idx:
        turn = conv.turns[i]
        if i not in by_turn:
            raise AlignmentError(f"missing tokens for agent turn {i}")
        tt = by_turn[i]
        f0, F = turn_frame_span(turn.start, turn.end, grid)
        if f0 <= prev_block_end:
            raise AlignmentError(f"agent turn {i} overlaps the previous agent block on the frame grid")
        text = tt.text_tokens
        if len(text) + 2 > F:
            raise AlignmentError(f"agent turn {i}: {len(text)} text tokens + BOS/EOS exceed {F} frames")
        if min(text) < 0 or max(text) >= vmap.text_vocab_size:
            raise AlignmentError(f"agent turn {i}: text token outside [0, {vmap.text_vocab_size})")
        codes = tt.speech_codes
        if codes.shape != (F, n_ch):
            raise AlignmentError(f"agent turn {i}: speech_codes shape {codes.shape}, expected ({F}, {n_ch})")
        if codes.size and (codes.min() < 0 or codes.max() >= sp.payload_size):
            raise AlignmentError(f"agent turn {i}: speech code outside payload range [0, {sp.payload_size})")
        if delay_frames > F:
            raise AlignmentError(f"agent turn {i}: delay {delay_frames} exceeds turn length {F}")

        # text channel
        row = np.asarray((specials.bos,) + text + (specials.eos,), dtype=np.int32)
        tokens[f0:f0 + len(row), 0] = row

        # speech channels: BOS, codes, EOS, delayed
        bos_at = f0 + delay_frames
        kept = F - delay_frames  # codes fitting before f0 + F + 1
        eos_at = f0 + F + 1
        block = np.empty((kept + 2, n_ch), dtype=np.int64)
        block[0] = sp.bos
        block[1:kept + 1] = codes[:kept]
        block[kept + 1] = sp.eos
        visible = max(0, min(len(block), n_frames - bos_at))
        tokens[bos_at:bos_at + visible, 1:] = block[:visible]

        codes_visible = max(0, min(kept, visible - 1))
        placements.append(
            TurnPlacement(
                turn_index=i,
                start_frame=f0,
                n_frames=F,
                text_bos_frame=f0,
                speech_bos_frame=bos_at if bos_at < n_frames else None,
                speech_eos_frame=eos_at if eos_at < n_frames else None,
                codes_placed=codes_visible,
                delay_dropped=F - kept,
                clipped_at_end=kept - codes_visible,
            )
        )
        prev_block_end = eos_at

    weights = tuple(loss_weights) if loss_weights is not None else default_loss_weights(n_ch)
    mask = user_activity_mask(conv, n_frames, grid)
    matrix = ChannelMatrix(tokens, weights, mask, grid, vmap.text_vocab_size, sp.codebook_size)
    return Alignment(matrix, tuple(placements))


def matrix_to_global(m: ChannelMatrix, vmap: VocabMap = VocabMap()) -> np.ndarray:
    """Extended-vocabulary ids: text column unchanged, speech column c offset by its block."""
    if m.n_speech_channels != vmap.speech.n_channels or m.codebook_size != vmap.speech.codebook_size:
        raise CodecError("matrix channel layout does not match the vocabulary map")
    text_limit = vmap.text_vocab_size + TextSpecials.after(0).count
    out, bad = kernels.to_global(m.tokens, text_limit, vmap.text_vocab_size, vmap.speech.codebook_size)
    if bad >= 0:
        r, c = divmod(bad, m.tokens.shape[1])
        raise CodecError(f"entry ({r}, {c}) = {int(m.tokens[r, c])} out of range for channel {c}")
    return out


# ---------------------------------------------------------------- DUPX format

MAGIC = b"DUPX"
VERSION = 1
_HEADER = struct.Struct("<4sHHIIIII")


def serialize_matrix(m: ChannelMatrix) -> bytes:
    fps = m.grid.frames_per_second
    n_total = m.tokens.shape[1]
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, n_total, m.n_frames, fps.numerator, fps.denominator,
                           m.text_vocab_size, m.codebook_size))
    buf.write(np.asarray(m.loss_weights, dtype="<f4").tobytes())
    buf.write(m.tokens.astype("<i4", copy=False).tobytes(order="C"))
    buf.write(np.packbits(m.user_mask, bitorder="little").tobytes())
    return buf.getvalue()


def deserialize_matrix(data: bytes) -> ChannelMatrix:
    data = bytes(data)
    if len(data) < 4 or data[:4] != MAGIC:
        raise DupxFormatError("bad magic")
    if len(data) < _HEADER.size:
        raise DupxFormatError("truncated header")
    _, version, n_total, n_frames, fps_num, fps_den, text_vocab, cb = _HEADER.unpack_from(data)
    if version != VERSION:
        raise DupxFormatError(f"version mismatch: file has {version}, reader supports {VERSION}")
    if n_total < 2 or fps_den == 0 or fps_num == 0:
        raise DupxFormatError("invalid header fields")
    off = _HEADER.size
    weights_len = 4 * n_total
    tokens_len = 4 * n_frames * n_total
    mask_len = (n_frames + 7) // 8
    need = off + weights_len + tokens_len + mask_len
    if len(data) < need:
        raise DupxFormatError(f"truncated payload: need {need} bytes, have {len(data)}")
    if len(data) > need:
        raise DupxFormatError(f"trailing data: {len(data) - need} extra bytes")
    weights = np.frombuffer(data, dtype="<f4", count=n_total, offset=off)
    off += weights_len
    tokens = np.frombuffer(data, dtype="<i4", count=n_frames * n_total, offset=off).reshape(n_frames, n_total)
    off += tokens_len
    mask = np.unpackbits(np.frombuffer(data, dtype=np.uint8, count=mask_len, offset=off),
                         bitorder="little")[:n_frames].astype(bool)
    try:
        return ChannelMatrix(
            tokens.astype(np.int32),
            tuple(float(w) for w in weights),
            mask,
            TimeGrid(Fraction(fps_num, fps_den)),
            int(text_vocab),
            int(cb),
        )
    except AlignmentError as exc:
        raise DupxFormatError(f"invalid payload: {exc}") from exc
