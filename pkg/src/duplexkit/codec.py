"""FSQ code arithmetic, codebook indexing and the extended vocabulary map.

Only the index arithmetic of a finite-scalar-quantised codec lives here; no
waveform encoding or decoding.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .timeline import DuplexError


class CodecError(DuplexError):
    pass


@dataclass(frozen=True)
class FsqLevels:
    levels: Tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(x) for x in self.levels)
        if not levels:
            raise CodecError("FSQ needs at least one dimension")
        if any(L < 2 for L in levels):
            raise CodecError(f"every FSQ level must be >= 2, got {levels}")
        if math.prod(levels) > 2**31:
            raise CodecError(f"FSQ vocabulary {math.prod(levels)} does not fit in 32 bits")
        object.__setattr__(self, "levels", levels)

    @property
    def vocab_size(self) -> int:
        return math.prod(self.levels)

    def __len__(self):
        return len(self.levels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=np.int64)


def _check_code(codes: Sequence[int], levels: FsqLevels) -> Tuple[int, ...]:
    codes = tuple(int(c) for c in codes)
    if len(codes) != len(levels):
        raise CodecError(f"code has {len(codes)} components, levels have {len(levels)}")
    for i, (c, L) in enumerate(zip(codes, levels.levels)):
        if not 0 <= c < L:
            raise CodecError(f"code component {i} = {c} outside [0, {L - 1}]")
    return codes


def fsq_quantize(z: Sequence[float], levels: FsqLevels) -> Tuple[int, ...]:
    """Nearest FSQ level per dimension after clamping to [-1, 1].

    Level k of a dimension with L levels sits at ``2k/(L-1) - 1``; exact
    midpoints go to the higher level.
    """
    z = [float(v) for v in z]
    if len(z) != len(levels):
        raise CodecError(f"vector has {len(z)} dims, levels have {len(levels)}")
    out = []
    for v, L in zip(z, levels.levels):
        if math.isnan(v):
            raise CodecError("cannot quantise NaN")
        v = min(1.0, max(-1.0, v))
        out.append(int(math.floor((v + 1.0) * ((L - 1.0) / 2.0) + 0.5)))
    return tuple(out)


def fsq_dequantize(codes: Sequence[int], levels: FsqLevels) -> Tuple[float, ...]:
    codes = _check_code(codes, levels)
    return tuple(2.0 * c / (L - 1.0) - 1.0 for c, L in zip(codes, levels.levels))


def code_to_index(codes: Sequence[int], levels: FsqLevels) -> int:
    """Mixed-radix index, dimension 0 least significant."""
    codes = _check_code(codes, levels)
    index = 0
    for c, L in zip(reversed(codes), reversed(levels.levels)):
        index = index * L + c
    return index


def index_to_code(index: int, levels: FsqLevels) -> Tuple[int, ...]:
    index = int(index)
    if not 0 <= index < levels.vocab_size:
        raise CodecError(f"index {index} outside [0, {levels.vocab_size})")
    out = []
    for L in levels.levels:
        index, c = divmod(index, L)
        out.append(c)
    return tuple(out)


def codes_to_indices(codes, levels: FsqLevels) -> np.ndarray:
    """Batch form of :func:`code_to_index` over a (T, D) array."""
    idx, bad = kernels.codes_to_index(codes, levels.as_array())
    if bad >= 0:
        raise CodecError(f"row {bad} has a code component outside its level range")
    return idx


def indices_to_codes(indices, levels: FsqLevels) -> np.ndarray:
    codes, bad = kernels.index_to_codes(indices, levels.as_array())
    if bad >= 0:
        raise CodecError(f"entry {bad} outside [0, {levels.vocab_size})")
    return codes


N_SPEECH_SPECIALS = 3


@dataclass(frozen=True)
class SpeechTokenSpace:
    """Per-channel speech code range shared by all N codec channels.

    The three specials sit at the top of the range: SILENCE, BOS, EOS.
    ``silence_codes`` optionally replaces the SILENCE symbol with a measured
    per-channel code (e.g. the codec's encoding of silent audio).
    """

    n_channels: int = 4
    codebook_size: int = 4037
    fsq: Optional[FsqLevels] = None
    silence_codes: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.n_channels < 1:
            raise CodecError("need at least one speech channel")
        if self.codebook_size <= N_SPEECH_SPECIALS:
            raise CodecError("codebook too small for the reserved specials")
        if self.fsq is not None:
            if not isinstance(self.fsq, FsqLevels):
                object.__setattr__(self, "fsq", FsqLevels(tuple(self.fsq)))
            if self.fsq.vocab_size > self.payload_size:
                raise CodecError(
                    f"FSQ vocabulary {self.fsq.vocab_size} exceeds payload size {self.payload_size}"
                )
        if self.silence_codes is not None:
            codes = tuple(int(c) for c in self.silence_codes)
            if len(codes) != self.n_channels or any(not 0 <= c < self.codebook_size for c in codes):
                raise CodecError("silence_codes must give one in-range code per channel")
            object.__setattr__(self, "silence_codes", codes)

    @property
    def payload_size(self) -> int:
        return self.codebook_size - N_SPEECH_SPECIALS

    @property
    def silence(self) -> int:
        return self.codebook_size - 3

    @property
    def bos(self) -> int:
        return self.codebook_size - 2

    @property
    def eos(self) -> int:
        return self.codebook_size - 1

    def silence_for(self, channel: int) -> int:
        return self.silence if self.silence_codes is None else self.silence_codes[channel]


class Domain(str, enum.Enum):
    TEXT = "text"
    SPEECH = "speech"


class GlobalToken(NamedTuple):
    domain: Domain
    channel: Optional[int]
    code: int


@dataclass(frozen=True)
class VocabMap:
    text_vocab_size: int = 32000
    speech: SpeechTokenSpace = field(default_factory=SpeechTokenSpace)

    def __post_init__(self):
        if self.text_vocab_size < 1:
            raise CodecError("text_vocab_size must be positive")

    @property
    def total_size(self) -> int:
        return self.text_vocab_size + self.speech.n_channels * self.speech.codebook_size

    def channel_block(self, channel: int) -> Tuple[int, int]:
        lo = self.text_vocab_size + channel * self.speech.codebook_size
        return lo, lo + self.speech.codebook_size


def to_global_id(channel: int, code: int, vmap: VocabMap) -> int:
    sp = vmap.speech
    if not 0 <= channel < sp.n_channels:
        raise CodecError(f"channel {channel} outside [0, {sp.n_channels})")
    if not 0 <= code < sp.codebook_size:
        raise CodecError(f"code {code} outside [0, {sp.codebook_size})")
    return vmap.text_vocab_size + channel * sp.codebook_size + code


def text_to_global_id(token: int, vmap: VocabMap) -> int:
    if not 0 <= token < vmap.text_vocab_size:
        raise CodecError(f"text token {token} outside [0, {vmap.text_vocab_size})")
    return token


def from_global_id(gid: int, vmap: VocabMap) -> GlobalToken:
    gid = int(gid)
    if not 0 <= gid < vmap.total_size:
        raise CodecError(f"id {gid} outside [0, {vmap.total_size})")
    if gid < vmap.text_vocab_size:
        return GlobalToken(Domain.TEXT, None, gid)
    channel, code = divmod(gid - vmap.text_vocab_size, vmap.speech.codebook_size)
    return GlobalToken(Domain.SPEECH, channel, code)
