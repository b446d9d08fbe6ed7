from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from duplexkit.timeline import (
    Conversation,
    DuplexTimeline,
    SegmentTrack,
    SpeakerRole,
    TimeGrid,
    TimelineError,
    Turn,
    as_seconds,
    seconds_to_json,
    time_to_frame,
    tracks_from_conversation,
)

from conftest import conversations

U, A = SpeakerRole.USER, SpeakerRole.AGENT


def conv(*turns, id="c"):
    return Conversation(id, tuple(Turn(r, s, e) for r, s, e in turns))


@pytest.mark.parametrize(
    "t, expected",
    [
        # 3.84 * 25/2 = 48 exactly; a float product would give 47.99999...
        ("3.84", 48),
        (3.84, 48),
        (0, 0),
        ("0.079", 0),
        ("0.08", 1),
        ("0.64", 8),
    ],
)
def test_time_to_frame(t, expected):
    assert time_to_frame(t) == expected


def test_time_to_frame_rejects_negative():
    with pytest.raises(TimelineError):
        time_to_frame("-0.001")


def test_grid_defaults():
    g = TimeGrid()
    assert g.frames_per_second == Fraction(25, 2)
    assert g.frame_duration == Fraction(2, 25)
    with pytest.raises(TimelineError):
        TimeGrid(0)


@given(st.integers(0, 10**6))
def test_frame_round_trip(k):
    g = TimeGrid()
    assert time_to_frame(g.frame_start(k), g) == k


@given(st.integers(0, 10**7), st.integers(0, 10**7))
def test_time_to_frame_monotone(a, b):
    a, b = sorted((a, b))
    assert time_to_frame(Fraction(a, 1000)) <= time_to_frame(Fraction(b, 1000))


def test_float_times_are_read_as_decimals():
    assert as_seconds(0.1) == Fraction(1, 10)
    assert seconds_to_json(Fraction(1, 10)) == 0.1
    assert seconds_to_json(Fraction(10)) == 10


def test_turn_invariants():
    with pytest.raises(TimelineError):
        Turn(U, 1, 1)
    with pytest.raises(TimelineError):
        Turn(U, -1, 1)


def test_conversation_rejects_same_role_overlap():
    with pytest.raises(TimelineError):
        conv((A, 0, 5), (A, 4, 6))


def test_conversation_allows_cross_role_overlap():
    c = conv((U, 0, 5), (A, 4, 6))
    assert len(c.turns) == 2


def test_conversation_must_be_sorted():
    with pytest.raises(TimelineError):
        Conversation("c", (Turn(U, 5, 6), Turn(A, 0, 1)))


def test_tracks_simple_projection():
    tl = tracks_from_conversation(conv((U, 0, "3.2"), (A, "3.84", 10)))
    assert tl.user.segments == ((0, Fraction(16, 5)),)
    assert tl.agent.segments == ((Fraction(96, 25), 10),)
    assert tl.total_duration == 10


def test_tracks_merge_touching_turns():
    tl = tracks_from_conversation(conv((U, 0, 2), (U, 2, 4)))
    assert tl.user.segments == ((0, 4),)


def test_tracks_merge_gap():
    c = conv((U, 0, 2), (U, "2.05", 4))
    assert len(tracks_from_conversation(c).user.segments) == 2
    assert tracks_from_conversation(c, merge_gap="0.1").user.segments == ((0, 4),)


def test_tracks_empty_conversation():
    with pytest.raises(TimelineError):
        tracks_from_conversation(Conversation("e", ()))


def test_timeline_bounds():
    with pytest.raises(TimelineError):
        DuplexTimeline(SegmentTrack(U, ((0, 5),)), SegmentTrack(A), 4)


@given(conversations())
def test_tracks_satisfy_track_invariants(c):
    tl = tracks_from_conversation(c)
    for track in (tl.user, tl.agent):
        segs = track.segments
        assert all(s < e for s, e in segs)
        assert all(e0 < s1 for (_, e0), (s1, _) in zip(segs, segs[1:]))
    # union of turn spans is preserved
    for role, track in ((U, tl.user), (A, tl.agent)):
        total = sum(t.duration for t in c.turns if t.role is role)
        assert sum(e - s for s, e in track.segments) == total
