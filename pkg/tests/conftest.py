from fractions import Fraction

import pytest
from hypothesis import strategies as st

from duplexkit import kernels
from duplexkit.timeline import Conversation, SpeakerRole, Turn

MS = Fraction(1, 1000)


@st.composite
def role_spans(draw, max_turns=5, min_gap=0):
    n = draw(st.integers(0, max_turns))
    t = draw(st.integers(0, 3000))
    spans = []
    for _ in range(n):
        t += draw(st.integers(min_gap, 4000))
        d = draw(st.integers(1, 6000))
        spans.append((t * MS, (t + d) * MS))
        t += d
    return spans


@st.composite
def conversations(draw, max_turns=5, min_user=0, min_agent=0, min_gap=0):
    user = draw(role_spans(max_turns, min_gap))
    agent = draw(role_spans(max_turns, min_gap))
    if len(user) < min_user or len(agent) < min_agent or not (user or agent):
        # fall back to one alternating exchange
        user = user or [(Fraction(0), Fraction(2))]
        agent = agent or [(Fraction(3), Fraction(5))]
    turns = [Turn(SpeakerRole.USER, s, e, f"u{i}") for i, (s, e) in enumerate(user)]
    turns += [Turn(SpeakerRole.AGENT, s, e, f"a{i}") for i, (s, e) in enumerate(agent)]
    turns.sort(key=lambda t: (t.start, t.role is SpeakerRole.AGENT))
    return Conversation("hyp", tuple(turns))


@pytest.fixture(params=["numpy", "numba"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    if request.param == "numba" and not kernels.HAVE_NUMBA:
        pytest.skip("numba unavailable")
    monkeypatch.setattr(kernels, "HAVE_NUMBA", request.param == "numba")
    return request.param
