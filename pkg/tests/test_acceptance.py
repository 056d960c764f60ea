"""Acceptance criteria, each run at its stated tolerance.

Every test records a one-line summary; the pass/fail line per criterion is
printed in the "acceptance criteria" section at the end of the pytest run.
"""

import csv
import itertools
import random
import socket
import time

import pytest
from hypothesis import HealthCheck, given, settings

from golden_messages import GOLDEN
from oracles import brute_force_budgets
from strategies import messages
from slicesim import report, sim
from slicesim.builtins import SLICE_1, SLICE_2, exp1_slicing_control, exp2_min_prb_multislice
from slicesim.e2.codec import MSG_TYPES, CodecError, decode, encode
from slicesim.model import SNSSAI, PduSession, RrmPolicyRatio, SliceConfig
from slicesim.phy import TrafficProfile
from slicesim.scheduler import SliceScheduler, SliceState, compute_slice_budgets

from test_codec import GOLDEN_DIR

CSV_ARTIFACTS = ("prbs.csv", "throughput.csv", "control_log.csv", "slots.csv")
L1, L2 = str(SLICE_1), str(SLICE_2)


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Every simulation the criteria need, run once per session."""
    base = tmp_path_factory.mktemp("acceptance")
    out = {}

    def go(name, scn, **kw):
        t0 = time.monotonic()
        rep = sim.run(scn, base / name, **kw)
        out[name] = (base / name, rep, time.monotonic() - t0)

    go("exp1_106", exp1_slicing_control(106))
    go("exp1_106_again", exp1_slicing_control(106))
    go("exp1_273", exp1_slicing_control(273))
    go("exp2", exp2_min_prb_multislice())
    go("exp2_again", exp2_min_prb_multislice())
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    go("exp1_106_tcp", exp1_slicing_control(106), tcp=True, port=port)
    return out


def _exp1_periods(out_dir, n, tol):
    """Per-period per-slice mean of per-frame PRBs, skipping 1 s after each switch."""
    prbs = report.load_prbs(out_dir)
    low, high = 10 * n // 100, 90 * n // 100
    rows, ok = [], True
    prev_high = None
    for k in range(10):
        lo, hi = k * 10_000 + 1_000, (k + 1) * 10_000
        m1, m2 = report.mean_in(prbs[L1], lo, hi), report.mean_in(prbs[L2], lo, hi)
        high_slice = L1 if m1 > m2 else L2
        good = (abs(max(m1, m2) - high) <= tol and abs(min(m1, m2) - low) <= tol
                and high_slice != prev_high)
        ok &= good
        prev_high = high_slice
        rows.append(f"{m1:.1f}/{m2:.1f}")
    return ok, rows, (low, high)


@pytest.mark.criterion(1)
def test_c1_exp1_106(runs, record_property):
    out_dir, rep, wall = runs["exp1_106"]
    ok, rows, (low, high) = _exp1_periods(out_dir, 106, 3)
    record_property("detail", f"exp1@106 targets {low}/{high} +-3, periods {' '.join(rows)}, wall {wall:.1f}s")
    assert ok
    assert rep.control_messages == 10
    assert wall < 60


@pytest.mark.criterion(2)
def test_c2_exp1_273(runs, record_property):
    out_dir, rep, wall = runs["exp1_273"]
    ok, rows, (low, high) = _exp1_periods(out_dir, 273, 5)
    record_property("detail", f"exp1@273 targets {low}/{high} +-5, periods {' '.join(rows)}")
    assert ok
    assert rep.control_messages == 10


@pytest.mark.criterion(3)
def test_c3_exp2_staircase(runs, record_property):
    out_dir, _, _ = runs["exp2"]
    n = 106
    prbs = report.load_prbs(out_dir)
    thp = report.slice_throughput(out_dir)
    flows = report.load_throughput(out_dir)
    steps = [(0, 20_000), (20_000, 40_000), (40_000, 60_000), (60_000, 80_000), (80_000, 100_000)]
    share = [report.mean_in(prbs[L2], lo, hi) / n for lo, hi in steps]
    s2_thp = [report.mean_in(thp[L2], lo, hi, end_stamp=True) for lo, hi in steps]
    pdu1 = report.mean_in(flows[(1, 1)], *steps[0], end_stamp=True)
    pdu2 = report.mean_in(flows[(1, 2)], *steps[0], end_stamp=True)
    ratio = min(pdu1, pdu2) / max(pdu1, pdu2)
    s1_last = report.mean_in(prbs[L1], *steps[4]) / n
    checks = {
        "step1 UE1 PDUs within 10%": ratio >= 0.9,
        "step2 slice-2 thp < step1": s2_thp[1] < s2_thp[0],
        "step3 share >= 0.79": share[2] >= 0.80 - 0.01,
        "step4 share in [0.39, step3)": 0.40 - 0.01 <= share[3] < share[2],
    }
    record_property("detail", "slice-2 shares " + " ".join(f"{s:.3f}" for s in share)
                    + f", slice-2 Mbps step1 {s2_thp[0] / 1e6:.2f} step2 {s2_thp[1] / 1e6:.2f}"
                    + f", PDU ratio {ratio:.3f}, step5 slice-1 share {s1_last:.3f}")
    assert all(checks.values()), [k for k, v in checks.items() if not v]


def _policy_sets():
    pcts = range(0, 101, 10)
    return [RrmPolicyRatio(d, m, x) for d, m, x in itertools.product(pcts, pcts, pcts) if d <= m <= x]


@pytest.mark.criterion(4)
def test_c4_budget_oracle(record_property):
    rng = random.Random(2024)
    policies = _policy_sets()
    snssais = [SNSSAI(1), SNSSAI(1, 0), SNSSAI(2, 5)]
    cases = mismatches = 0
    # every single-slice config exhaustively, then random 2- and 3-slice configs
    todo = [(n, (p,)) for n in range(8, 25) for p in policies]
    while len(todo) < 30_000:
        k = rng.choice((2, 3))
        ps = tuple(rng.choice(policies) for _ in range(k))
        if sum(p.dedicated_pct for p in ps) <= 100:
            todo.append((rng.randrange(8, 25), ps))
    for n, ps in todo:
        ids = snssais[:len(ps)]
        states = [SliceState(SliceConfig(s, p)) for s, p in zip(ids, ps)]
        for demand in itertools.product((0, n // 2, n), repeat=len(ps)):
            if len(ps) == 3 and rng.random() < 0.7:
                continue
            d = dict(zip(ids, demand))
            got = {b.snssai.key: b.granted_prbs for b in compute_slice_budgets(states, d, n)}
            want = brute_force_budgets(
                {s.key: (p.dedicated_pct, p.min_pct, p.max_pct) for s, p in zip(ids, ps)},
                {s.key: v for s, v in d.items()}, n)
            cases += 1
            mismatches += got != want
    record_property("detail", f"{cases} configurations, {mismatches} mismatches")
    assert cases >= 10_000
    assert mismatches == 0


@pytest.mark.criterion(5)
def test_c5_invariants(runs, record_property):
    counts = {name: len(report.verify(out_dir)) for name, (out_dir, _, _) in runs.items()}
    total_slots = sum(rep.slots for _, rep, _ in runs.values())
    record_property("detail", f"{len(counts)} runs, {total_slots} slots, violations {sum(counts.values())}")
    assert not any(counts.values()), counts


@pytest.mark.criterion(6)
def test_c6_pf_fairness(record_property):
    a = SNSSAI(1, 1)
    sched = SliceScheduler([SliceConfig(a)], 106)
    full = TrafficProfile("full_buffer")
    flows = [PduSession(1, 1, a, full), PduSession(2, 1, a, full)]
    served = {1: 0, 2: 0}
    for slot in range(10_000):
        for f in flows:
            f.backlog_bytes = 10**7
        for g in sched.step(slot, flows).grants:
            served[g.ue_id] += g.tb_bytes
    ratio = served[1] / served[2]
    record_property("detail", f"throughput ratio {ratio:.4f}")
    assert abs(ratio - 1.0) <= 0.02


@pytest.mark.criterion(7)
def test_c7_codec(record_property):
    seen = {"n": 0}

    @settings(max_examples=10_000, deadline=None, database=None,
              suppress_health_check=list(HealthCheck))
    @given(messages())
    def roundtrip(msg):
        data = encode(msg)
        assert decode(data) == msg and encode(decode(data)) == data
        seen["n"] += 1

    roundtrip()

    goldens = sum(encode(GOLDEN[t]) == (GOLDEN_DIR / f"{t}.bin").read_bytes() for t in MSG_TYPES)

    rng = random.Random(7)
    seeds = [encode(m) for m in GOLDEN.values()]
    crashes = rejected = 0
    for i in range(1_000_000):
        kind = i % 4
        if kind == 0:
            buf = rng.randbytes(rng.randrange(0, 64))
        else:
            b = bytearray(rng.choice(seeds))
            for _ in range(rng.randint(1, 4)):
                b[rng.randrange(len(b))] = rng.randrange(256)
            if kind == 3:
                b = b[:rng.randrange(len(b) + 1)]
            buf = bytes(b)
        try:
            decode(buf)
        except CodecError:
            rejected += 1
        except Exception:
            crashes += 1
    record_property("detail", f"{seen['n']} roundtrips, {goldens}/{len(MSG_TYPES)} goldens, "
                              f"1000000 fuzz frames ({rejected} rejected, {crashes} crashes)")
    assert seen["n"] >= 10_000
    assert goldens == len(MSG_TYPES)
    assert crashes == 0


def _policy_sequence(path):
    with open(path, newline="") as fh:
        return [(r["timestamp_ms"], r["snssai"], r["ded"], r["min"], r["max"]) for r in csv.DictReader(fh)]


@pytest.mark.criterion(8)
def test_c8_determinism(runs, record_property):
    same = []
    for a, b in (("exp1_106", "exp1_106_again"), ("exp2", "exp2_again")):
        for name in CSV_ARTIFACTS:
            same.append((runs[a][0] / name).read_bytes() == (runs[b][0] / name).read_bytes())
    local = _policy_sequence(runs["exp1_106"][0] / "control_log.csv")
    remote = _policy_sequence(runs["exp1_106_tcp"][0] / "control_log.csv")
    record_property("detail", f"{sum(same)}/{len(same)} CSVs byte-identical, "
                              f"TCP policy sequence {'matches' if local == remote else 'differs'} ({len(remote)} entries)")
    assert all(same)
    assert local == remote and len(local) == 20
