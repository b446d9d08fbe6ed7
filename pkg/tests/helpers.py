"""Random valid inputs shared by the aligner tests and the acceptance suite."""

import math
from fractions import Fraction

import numpy as np

from duplexkit.aligner import AgentTurnTokens
from duplexkit.timeline import Conversation, SpeakerRole, Turn

MS = Fraction(1, 1000)
FPS = Fraction(25, 2)


def frames_of(start, end):
    f0 = math.floor(start * FPS)
    return f0, math.ceil(end * FPS) - f0


def random_aligned_conversation(rng, n_pairs=None, n_channels=4, payload=4034, text_vocab=32000):
    """Alternating user/agent turns (with occasional barge-in overlap) plus tokens."""
    n_pairs = int(rng.integers(1, 5)) if n_pairs is None else n_pairs
    turns = []
    t = int(rng.integers(0, 2000))
    for _ in range(n_pairs):
        u0 = t
        u1 = u0 + int(rng.integers(200, 5000))
        turns.append(Turn(SpeakerRole.USER, u0 * MS, u1 * MS))
        a0 = u1 + int(rng.integers(-150, 1500))  # negative: agent starts while user still talks
        a0 = max(a0, u0 + 1)
        a1 = a0 + int(rng.integers(400, 8000))
        turns.append(Turn(SpeakerRole.AGENT, a0 * MS, a1 * MS, "reply"))
        t = a1 + int(rng.integers(300, 2000))  # keeps agent blocks apart on the grid
    turns.sort(key=lambda x: (x.start, x.role is SpeakerRole.AGENT))
    conv = Conversation(f"rand-{int(rng.integers(1 << 30))}", tuple(turns))
    tokens = []
    for i, turn in enumerate(conv.turns):
        if turn.role is not SpeakerRole.AGENT:
            continue
        _, F = frames_of(turn.start, turn.end)
        n_text = int(rng.integers(1, F - 1))
        tokens.append(
            AgentTurnTokens(
                i,
                tuple(int(x) for x in rng.integers(0, text_vocab, n_text)),
                rng.integers(0, payload, (F, n_channels)),
            )
        )
    return conv, tokens


def reference_matrix(conv, tokens, delay=1, text_vocab=32000, codebook=4037, n_channels=4):
    """Cell-by-cell reconstruction of the expected channel matrix."""
    bos_t, eos_t, pad_t = text_vocab, text_vocab + 1, text_vocab + 2
    sil, bos_s, eos_s = codebook - 3, codebook - 2, codebook - 1
    n = math.ceil(max(t.end for t in conv.turns) * FPS)
    by_turn = {tt.turn_ref: tt for tt in tokens}
    text = [pad_t] * n
    speech = [[sil] * n_channels for _ in range(n)]
    mask = [False] * n
    for k in range(n):
        tk = Fraction(k) / FPS
        mask[k] = any(t.start <= tk < t.end for t in conv.turns if t.role is SpeakerRole.USER)
        for i, turn in enumerate(conv.turns):
            if turn.role is not SpeakerRole.AGENT:
                continue
            f0, F = frames_of(turn.start, turn.end)
            tt = by_turn[i]
            m = len(tt.text_tokens)
            if k == f0:
                text[k] = bos_t
            elif f0 < k <= f0 + m:
                text[k] = tt.text_tokens[k - f0 - 1]
            elif k == f0 + m + 1:
                text[k] = eos_t
            for c in range(n_channels):
                if k == f0 + delay:
                    speech[k][c] = bos_s
                elif f0 + delay < k <= f0 + F:
                    speech[k][c] = int(tt.speech_codes[k - f0 - delay - 1, c])
                elif k == f0 + F + 1:
                    speech[k][c] = eos_s
    return np.column_stack([np.array(text).reshape(-1, 1), np.array(speech).reshape(n, n_channels)]), np.array(mask)
