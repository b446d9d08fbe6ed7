"""Acceptance checks; each test prints one PASS/FAIL line."""

import json
import time
from fractions import Fraction as F

import numpy as np
import pytest

from duplexkit.aligner import align_conversation, deserialize_matrix, serialize_matrix
from duplexkit.builder import make_impatient
from duplexkit.cli import main
from duplexkit.codec import (
    FsqLevels,
    VocabMap,
    code_to_index,
    fsq_dequantize,
    fsq_quantize,
    from_global_id,
    index_to_code,
    to_global_id,
)
from duplexkit.manifest import conversation_from_dict, loads
from duplexkit.metrics import EARLY, evaluate
from duplexkit.simulator import make_rng, oracle_report, random_policy, random_script, simulate
from duplexkit.timeline import DEFAULT_GRID, Conversation, DuplexTimeline, SpeakerRole, Turn, tracks_from_conversation

from helpers import frames_of, random_aligned_conversation

U, A = SpeakerRole.USER, SpeakerRole.AGENT


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail

    return emit


def _qa_corpus(path, n, seed):
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        for i in range(n):
            u, a = (int(x) for x in rng.integers(200, 12000, 2))
            fh.write(json.dumps({"id": f"q{i}", "user": {"duration_s": u / 1000}, "agent": {"duration_s": a / 1000}}) + "\n")


def _lines(path):
    return [loads(x) for x in open(path) if x.strip()]


def test_1_constants(tmp_path, report):
    t0 = time.perf_counter()
    src = tmp_path / "qa.jsonl"
    _qa_corpus(src, 1200, 0)
    assert main(["duplexify", str(src), str(tmp_path / "s.jsonl")]) == 0
    assert main(["duplexify", str(src), str(tmp_path / "m.jsonl"), "--multiturn", "2", "--barge-in", "1", "--seed", "5"]) == 0
    singles = [conversation_from_dict(d) for d in _lines(tmp_path / "s.jsonl")]
    gap_ok = all(c.turns[1].start - c.turns[0].end == F(16, 25) for c in singles)
    frames_ok = all((c.turns[1].start - c.turns[0].end) / DEFAULT_GRID.frame_duration == 8 for c in singles)
    n_barge, residual_ok = 0, True
    for d in _lines(tmp_path / "m.jsonl"):
        c = conversation_from_dict(d)
        for a in c.by_role(A):
            for u in c.by_role(U):
                if a.start < u.start < a.end:
                    n_barge += 1
                    residual_ok &= a.end - u.start <= F(16, 25)
    dt = time.perf_counter() - t0
    ok = len(singles) >= 1000 and gap_ok and frames_ok and residual_ok and n_barge >= 500 and dt < 10
    report(1, ok, f"{len(singles)} items, gap=0.64s=8 frames: {gap_ok and frames_ok}, "
                  f"{n_barge} barge-ins with residual<=0.64: {residual_ok}, {dt:.2f}s")


def _tl(user, agent, id):
    s = lambda spans: [(F(a), F(b)) for a, b in spans]
    return DuplexTimeline.from_spans(s(user), s(agent), id=id)


def test_2_metric_fixtures(report):
    checks = []
    r = evaluate([_tl([("10", "13")], [("8", "11.49")], "stop149")])
    checks.append(("1.49 success", r.n_successes == 1 and r.mean_barge_in_latency == F("1.49")))
    r = evaluate([_tl([("10", "13")], [("8", "11.51")], "stop151")])
    checks.append(("1.51 failure", r.n_barge_in_opportunities == 1 and r.n_successes == 0))
    r = evaluate([_tl([("4", "5.09")], [("5", "6")], "fa009")])
    checks.append(("0.09 exempt", r.n_false_alarms == 0 and r.n_false_alarm_exempt == 1))
    r = evaluate([_tl([("4", "5.11")], [("5", "6")], "fa011")])
    checks.append(("0.11 false alarm", r.n_false_alarms == 1 and r.false_alarm_rate == 1))
    r = evaluate([_tl([("0", "3.2")], [("3", "4")], "early")])
    checks.append(("early n/a", r.first_response_latency == EARLY and r.to_dict()["first_response_latency"] == "n/a (early)"))
    r = evaluate([_tl([("0", "3.2"), ("10", "11")], [("3.92", "10.52")], "row")])
    d = r.to_dict()
    checks.append(("0.52/0.72", d["mean_barge_in_latency"] == 0.52 and d["first_response_latency"] == 0.72
                   and r.mean_barge_in_latency == F("0.52") and r.first_response_latency == F("0.72")))
    bad = [name for name, ok in checks if not ok]
    report(2, not bad, f"{len(checks) - len(bad)}/{len(checks)} fixtures exact" + (f", failing: {bad}" if bad else ""))


def test_3_oracle_equivalence(report):
    t0 = time.perf_counter()
    mism, n_opp, n_fa, max_dlat = 0, 0, 0, 0.0
    n_policies = 20
    for p in range(n_policies):
        rng = make_rng([2024, p])
        pol = random_policy(rng)
        for i in range(10):
            conv, log = simulate(pol, random_script(rng), (2024, p, i))
            got = evaluate([tracks_from_conversation(conv)])
            want = oracle_report(log)
            n_opp += want.n_barge_in_opportunities
            n_fa += want.n_false_alarms
            if (got.n_successes, got.n_false_alarms, got.n_barge_in_opportunities) != (
                want.n_successes, want.n_false_alarms, want.n_barge_in_opportunities
            ):
                mism += 1
            if want.n_successes:
                max_dlat = max(max_dlat, abs(float(got.mean_barge_in_latency) - float(want.mean_barge_in_latency)))
    dt = time.perf_counter() - t0
    ok = mism == 0 and max_dlat <= 1e-9 and dt < 30 and n_opp > 0 and n_fa > 0
    report(3, ok, f"200 conversations / {n_policies} policies, {mism} count mismatches, "
                  f"{n_opp} opportunities, {n_fa} false alarms, max latency diff {max_dlat:.1e}s, {dt:.2f}s")


def test_4_fsq_and_global_ids(report):
    ok_all, total = True, 0
    for levels in ([3, 3, 3], [8, 5, 5, 5]):
        fsq = FsqLevels(tuple(levels))
        seen = set()
        for idx in range(fsq.vocab_size):
            code = index_to_code(idx, fsq)
            total += 1
            ok_all &= code_to_index(code, fsq) == idx
            v = fsq_dequantize(code, fsq)
            ok_all &= fsq_quantize(v, fsq) == tuple(code)
            ok_all &= tuple(fsq_quantize(fsq_dequantize(fsq_quantize(v, fsq), fsq), fsq)) == tuple(code)
            seen.add(tuple(code))
        ok_all &= len(seen) == fsq.vocab_size
    vm = VocabMap()
    boundary = [(c, x) for c in range(4) for x in (0, 1, 4033, 4034, 4035, 4036)]
    gid_ok = all(from_global_id(to_global_id(c, x, vm), vm)[1:] == (c, x) for c, x in boundary)
    gid_ok &= to_global_id(3, 4036, vm) == 48147 and to_global_id(0, 0, vm) == 32000
    gid_ok &= vm.total_size == 48148
    report(4, ok_all and gid_ok, f"{total} codes bijective and idempotent: {ok_all}; "
                                 f"{len(boundary)} boundary global IDs round-trip, (3,4036)->48147: {gid_ok}")


def test_5_aligner_invariants(report):
    rng = np.random.default_rng(55)
    problems = []
    fps_ok = weights_ok = True
    for n in range(100):
        conv, toks = random_aligned_conversation(rng)
        res = align_conversation(conv, toks)
        m = res.matrix
        text, speech = m.text, m.speech
        covered = np.zeros(m.n_frames, bool)
        for p in res.placements:
            f0, F_ = p.start_frame, p.n_frames
            block = text[f0:f0 + F_]
            if (block == 32000).sum() != 1 or (block == 32001).sum() != 1:
                problems.append((n, "text BOS/EOS"))
            if p.speech_bos_frame - p.text_bos_frame != 1:
                problems.append((n, "delay"))
            sb = speech[p.speech_bos_frame]
            if not (sb == 4035).all():
                problems.append((n, "speech BOS"))
            if p.speech_eos_frame is not None and not (speech[p.speech_eos_frame] == 4036).all():
                problems.append((n, "speech EOS"))
            end = p.speech_eos_frame + 1 if p.speech_eos_frame is not None else m.n_frames
            covered[f0:end] = True
        if (text[~covered] != 32002).any() or (speech[~covered] != 4034).any():
            problems.append((n, "fill"))
        data = serialize_matrix(m)
        back = deserialize_matrix(data)
        if back != m or serialize_matrix(back) != data:
            problems.append((n, "dupx"))
        fps_ok &= int.from_bytes(data[12:16], "little") == 25 and int.from_bytes(data[16:20], "little") == 2
        weights_ok &= np.array_equal(np.frombuffer(data[28:48], "<f4"), [3, 1, 1, 1, 1])
    ok = not problems and fps_ok and weights_ok
    report(5, ok, f"100 conversations, {len(problems)} invariant violations, header fps 25/2: {fps_ok}, "
                  f"weights (3,1,1,1,1): {weights_ok}")


def _four_user_turns():
    turns, t = [], F(0)
    for i, (du, gap_a, da, pause) in enumerate([("1.5", "0.64", "3", "1.2"), ("2", "0.4", "2.5", "0.9"),
                                                ("0.8", "0.64", "4", "2.4"), ("3.1", "0.64", "1", "0")]):
        turns.append(Turn(U, t, t + F(du)))
        a0 = t + F(du) + F(gap_a)
        turns.append(Turn(A, a0, a0 + F(da)))
        t = a0 + F(da) + F(pause) + F(1, 2)
    return Conversation("impatient-fixture", tuple(turns))


def _user_gaps(c):
    u = c.by_role(U)
    return [b.start - a.end for a, b in zip(u, u[1:])]


def test_6_impatient(report):
    c = _four_user_turns()
    half = make_impatient(c, F(1, 2))
    g0, g1 = _user_gaps(c), _user_gaps(half)
    halved = all(b == a / 2 for a, b in zip(g0, g1)) and len(g0) == 3
    durs = [t.duration for t in c.by_role(U)] == [t.duration for t in half.by_role(U)]
    twice = _user_gaps(make_impatient(half, F(1, 2))) == _user_gaps(make_impatient(c, F(1, 4)))
    report(6, halved and durs and twice, f"gaps {[float(x) for x in g0]} -> {[float(x) for x in g1]} halved: {halved}, "
                                         f"durations unchanged: {durs}, 0.5 twice == 0.25: {twice}")


def _run_all(tmp, tag, jobs):
    d = tmp / tag
    d.mkdir()
    src = tmp / "qa.jsonl"
    pol, scr = tmp / "pol.json", tmp / "scr.json"
    common = ["--seed", "13", "--jobs", str(jobs)]
    status = [
        main(["duplexify", str(src), str(d / "dup.jsonl"), *common]),
        main(["duplexify", str(src), str(d / "multi.jsonl"), "--multiturn", "2", "--barge-in", "0.5", *common]),
        main(["impatient", str(d / "multi.jsonl"), str(d / "imp.jsonl"), *common]),
        main(["simulate", "--policy", str(pol), "--script", str(scr), "-n", "40",
              "--out", str(d / "sim.jsonl"), "--log-out", str(d / "log.jsonl"), *common]),
        main(["eval", str(d / "sim.jsonl"), str(d / "report.json"), "--events-csv", str(d / "ev.csv"), *common]),
        main(["align", str(d / "dup.jsonl"), str(tmp / "tok"), str(d / "dupx"), *common]),
    ]
    return status, d


def test_7_determinism(tmp_path, report, capsys):
    _qa_corpus(tmp_path / "qa.jsonl", 400, 3)
    (tmp_path / "pol.json").write_text(json.dumps({"response_delay": {"uniform": [0.1, 1.0]},
                                                   "stop_latency": {"uniform": [0.2, 2.0]},
                                                   "false_alarm_rate_hz": 0.4}))
    (tmp_path / "scr.json").write_text(json.dumps({"intents": [{"speak_duration": 2, "patience": 1.5},
                                                               {"speak_duration": 1, "patience": 0.5},
                                                               {"speak_duration": 2.5}]}))
    # tokens for the single-turn corpus (derived from durations only)
    tok = tmp_path / "tok"
    tok.mkdir()
    main(["duplexify", str(tmp_path / "qa.jsonl"), str(tmp_path / "pre.jsonl")])
    for rec in _lines(tmp_path / "pre.jsonl"):
        c = conversation_from_dict(rec)
        _, n = frames_of(c.turns[1].start, c.turns[1].end)
        (tok / f"{c.id}.json").write_text(json.dumps({"turns": [
            {"turn_index": 1, "text_tokens": [7] * max(1, n // 4), "speech_codes": [[k % 4034] * 4 for k in range(n)]}]}))
    s1, d1 = _run_all(tmp_path, "run1", 1)
    s2, d2 = _run_all(tmp_path, "run2", 1)
    s3, d3 = _run_all(tmp_path, "run3", 3)
    files = sorted(p.relative_to(d1) for p in d1.rglob("*") if p.is_file())
    same = all((d1 / f).read_bytes() == (d2 / f).read_bytes() for f in files)
    jobs_same = all((d1 / f).read_bytes() == (d3 / f).read_bytes() for f in files)
    outs = []
    for _ in range(2):
        capsys.readouterr()
        main(["inspect", str(d1 / "multi.jsonl"), "--id", _lines(d1 / "multi.jsonl")[0]["id"]])
        outs.append(capsys.readouterr().out)
    inspect_same = outs[0] == outs[1] and "agent |" in outs[0]
    ok = s1 == s2 == s3 == [0] * 6 and same and jobs_same and inspect_same and len(files) > 800
    report(7, ok, f"{len(files)} output files byte-identical across reruns: {same}, "
                  f"across --jobs 1/3 (incl. duplexify --multiturn 2): {jobs_same}, inspect stable: {inspect_same}")
