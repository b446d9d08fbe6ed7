import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from duplexkit.codec import (
    CodecError,
    Domain,
    FsqLevels,
    SpeechTokenSpace,
    VocabMap,
    code_to_index,
    codes_to_indices,
    from_global_id,
    fsq_dequantize,
    fsq_quantize,
    index_to_code,
    indices_to_codes,
    text_to_global_id,
    to_global_id,
)

L8555 = FsqLevels((8, 5, 5, 5))
VMAP = VocabMap()


def nearest_level_bruteforce(v, L):
    """Oracle: scan all levels, keep the closest (ties -> higher)."""
    v = min(1.0, max(-1.0, v))
    best = None
    for k in range(L):
        d = abs(v - (2 * k / (L - 1) - 1))
        if best is None or d <= best[0] + 1e-12:
            best = (d, k)
    return best[1]


@pytest.mark.parametrize("z, levels, expected", [([0.3], [5], (3,)), ([0.0], [5], (2,)), ([-2.0], [5], (0,))])
def test_fsq_quantize_examples(z, levels, expected):
    assert fsq_quantize(z, FsqLevels(levels)) == expected


@pytest.mark.parametrize("codes, levels, expected", [([3], [5], (0.5,)), ([0], [2], (-1.0,)), ([4], [5], (1.0,))])
def test_fsq_dequantize_examples(codes, levels, expected):
    assert fsq_dequantize(codes, FsqLevels(levels)) == expected


def test_fsq_tie_rounds_up():
    # 0.0 is the midpoint between the two levels of L=2
    assert fsq_quantize([0.0], FsqLevels((2,))) == (1,)
    # -0.75 is halfway between -1 and -0.5 for L=5
    assert fsq_quantize([-0.75], FsqLevels((5,))) == (1,)


@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=3, max_size=3), st.lists(st.integers(2, 9), min_size=3, max_size=3))
def test_fsq_quantize_matches_bruteforce(z, levels):
    got = fsq_quantize(z, FsqLevels(levels))
    assert got == tuple(nearest_level_bruteforce(v, L) for v, L in zip(z, levels))


def test_fsq_errors():
    with pytest.raises(CodecError):
        fsq_quantize([0.1, 0.2], FsqLevels((5,)))
    with pytest.raises(CodecError):
        fsq_dequantize([5], FsqLevels((5,)))
    with pytest.raises(CodecError):
        FsqLevels((1, 4))


@pytest.mark.parametrize(
    "code, expected",
    [((0, 0, 0, 0), 0), ((7, 4, 4, 4), 999), ((1, 0, 0, 0), 1), ((0, 1, 0, 0), 8)],
)
def test_code_to_index_examples(code, expected):
    assert code_to_index(code, L8555) == expected
    assert index_to_code(expected, L8555) == code


def test_index_out_of_range():
    with pytest.raises(CodecError):
        index_to_code(1000, L8555)
    with pytest.raises(CodecError):
        code_to_index((8, 0, 0, 0), L8555)


@pytest.mark.parametrize("levels", [(3, 3, 3), (8, 5, 5, 5)])
def test_bijection_and_idempotence_bruteforce(levels):
    fl = FsqLevels(levels)
    seen = set()
    for code in itertools.product(*[range(L) for L in levels]):
        i = code_to_index(code, fl)
        seen.add(i)
        assert index_to_code(i, fl) == code
        assert fsq_quantize(fsq_dequantize(code, fl), fl) == code
    assert seen == set(range(fl.vocab_size))


def test_batch_index_matches_scalar(backend):
    fl = L8555
    codes = np.array(list(itertools.product(*[range(L) for L in fl.levels])))
    idx = codes_to_indices(codes, fl)
    assert idx.tolist() == [code_to_index(c, fl) for c in codes.tolist()]
    assert np.array_equal(indices_to_codes(idx, fl), codes)
    with pytest.raises(CodecError):
        codes_to_indices(np.array([[8, 0, 0, 0]]), fl)
    with pytest.raises(CodecError):
        indices_to_codes(np.array([1000]), fl)


def test_speech_space_defaults():
    sp = SpeechTokenSpace()
    assert (sp.silence, sp.bos, sp.eos) == (4034, 4035, 4036)
    assert sp.payload_size == 4034
    assert SpeechTokenSpace(fsq=L8555).fsq.vocab_size == 1000
    assert SpeechTokenSpace(codebook_size=1003, fsq=L8555).payload_size == 1000
    with pytest.raises(CodecError):
        SpeechTokenSpace(codebook_size=1002, fsq=L8555)


@pytest.mark.parametrize(
    "channel, code, expected",
    [(0, 0, 32000), (3, 4036, 48147), (1, 5, 36042)],
)
def test_to_global_id(channel, code, expected):
    assert to_global_id(channel, code, VMAP) == expected
    assert from_global_id(expected, VMAP) == (Domain.SPEECH, channel, code)


def test_from_global_id_text_and_bounds():
    assert from_global_id(31999, VMAP) == (Domain.TEXT, None, 31999)
    assert text_to_global_id(17, VMAP) == 17
    assert VMAP.total_size == 32000 + 4 * 4037
    with pytest.raises(CodecError):
        from_global_id(VMAP.total_size, VMAP)
    with pytest.raises(CodecError):
        to_global_id(4, 0, VMAP)
    with pytest.raises(CodecError):
        to_global_id(0, 4037, VMAP)


def test_channel_blocks_tile_speech_range():
    covered = []
    for c in range(VMAP.speech.n_channels):
        lo, hi = VMAP.channel_block(c)
        covered.extend(range(lo, hi))
    assert covered == list(range(VMAP.text_vocab_size, VMAP.total_size))
    for c in range(4):
        for k in (0, 4036):
            assert from_global_id(to_global_id(c, k, VMAP), VMAP) == (Domain.SPEECH, c, k)
