"""Acceptance checks.  Each check appends a line to RESULTS; the terminal
summary prints one pass/fail line per criterion."""
import math
import time

import numpy as np
import pytest

from algtrace.cli import main
from algtrace.field import FieldCtx, poly_eval_horner
from algtrace.incremental import (KnownPath, detect_addition, op_counter, poly_a, poly_b,
                                  required_l)
from algtrace.marking import MarkingConfig, NodeMarkerState, traverse_deterministic
from algtrace.path_model import ChangeEvent, Path, TimedEvent, apply_change
from algtrace.reconstruct import interpolate_path
from algtrace.sim import Scenario, empirical_fractions, incremental_budget_ensemble, run_trial
from algtrace.stats import detection_window, fractions, worst_case_ratio

RESULTS = []


def record(crit, name, ok, detail):
    RESULTS.append((crit, name, bool(ok), detail))
    return ok


def csv_rows(capsys, argv):
    assert main(argv) == 0
    text = capsys.readouterr().out
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    head = lines[0].split(",")
    return [dict(zip(head, ln.split(","))) for ln in lines[1:]]


# 1 ---------------------------------------------------------------------------

def test_c1_deterministic_reconstruction():
    ctx = FieldCtx(65537)
    t0 = time.perf_counter()
    failures = 0
    for d in (1, 5, 25, 100):
        for trial in range(1000):
            rng = np.random.Generator(np.random.PCG64(10_000 * d + trial))
            path = Path(rng.integers(0, ctx.p, d).tolist())
            pk = traverse_deterministic(path, d, 1.0, rng, ctx)
            if interpolate_path(list(zip(pk.x.tolist(), pk.y.tolist())), d, ctx) != path:
                failures += 1
    elapsed = time.perf_counter() - t0
    ok = record(1, "exact recovery from d marks", failures == 0 and elapsed < 5.0,
                f"{failures} failures in 4000 trials, {elapsed:.2f}s")
    assert failures == 0
    assert elapsed < 5.0


# 2 ---------------------------------------------------------------------------

def test_c2_incremental_budget():
    ctx = FieldCtx(65537)
    t0 = time.perf_counter()
    bad = []
    for d in (10, 100, 1000):
        assert required_l(d, ctx, 2) == 3
        for kind in ("add", "delete"):
            r = incremental_budget_ensemble(d, ctx, kind, 100_000, seed=d + (kind == "delete"))
            if r.misidentified or r.unresolved or r.retried or r.first_window_errors:
                bad.append((d, kind, r))
    elapsed = time.perf_counter() - t0
    record(2, "10^5 trials x {10,100,1000} x {add,delete} at l=3", not bad and elapsed < 60,
           f"{len(bad)} failing configurations, {elapsed:.1f}s")
    assert not bad
    assert elapsed < 60


# 3 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_field():
    ctx = FieldCtx(11)
    return {kind: incremental_budget_ensemble(8, ctx, kind, 100_000, seed=3, delta=1)
            for kind in ("add", "delete")}


def _small_field_check(res, kind):
    r = res[kind]
    assert r.l == 2
    rate, bound = r.first_window_error_rate, r.union_bound
    ok = rate <= bound and rate <= 3 * bound
    record(3, f"{kind}: l-mark misidentification rate <= union bound", ok,
           f"rate {rate:.5f}, bound {bound:.5f}, after sliding {r.misidentified} wrong")
    return rate, bound


def test_c3_small_field_deletion(small_field):
    rate, bound = _small_field_check(small_field, "delete")
    assert rate <= bound


@pytest.mark.xfail(strict=True, reason="an addition row carries a free candidate ID, so one "
                   "coincidence per wrong row suffices; the rate scales as d/p^(l-1), not d/p^l")
def test_c3_small_field_addition(small_field):
    rate, bound = _small_field_check(small_field, "add")
    assert rate <= bound


# 4 ---------------------------------------------------------------------------

def test_c4_randomized_fractions():
    ctx = FieldCtx(65537)
    rng = np.random.default_rng(4)
    path = Path(rng.integers(0, ctx.p, 20).tolist())
    emp = empirical_fractions(path, MarkingConfig.uniform(0.04), 1_000_000, 4, ctx)
    f0, f1 = 0.96 ** 20, 0.04 * 0.96 ** 19
    e0, e1 = abs(emp[0] / f0 - 1), abs(emp[1] / f1 - 1)
    record(4, "f0 and f1 within 2% relative", e0 <= 0.02 and e1 <= 0.02,
           f"f0 {emp[0]:.5f} vs {f0:.5f}, f1 {emp[1]:.5f} vs {f1:.5f}")
    assert e0 <= 0.02 and e1 <= 0.02


# 5 ---------------------------------------------------------------------------

def test_c5_fig3(capsys):
    rows = csv_rows(capsys, ["fig3", "--d-min", "1", "--d-max", "100"])
    wrong = []
    for r in rows:
        d = int(r["d"])
        rand = d * math.ceil(round(sum(0.96 ** -i for i in range(d)), 9))
        want_inc = 3 if d >= 2 else 2
        if int(r["det_noninc"]) != d or int(r["det_inc"]) != want_inc or int(r["rand_noninc"]) != rand:
            wrong.append(d)
    record(5, "closed-form columns for d = 1..100", len(rows) == 100 and not wrong,
           f"{len(rows)} rows, mismatches at {wrong}")
    assert len(rows) == 100 and not wrong


# 6 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fig4_rows():
    import io
    import contextlib

    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        assert main(["fig4", "--d-min", "2", "--d-max", "40"]) == 0
    lines = [ln for ln in buf.getvalue().splitlines() if not ln.startswith("#")]
    head = lines[0].split(",")
    return [dict(zip(head, ln.split(","))) for ln in lines[1:]]


def test_c6_scheme0_increasing(fig4_rows):
    s0 = [float(r["scheme0_ratio"]) for r in fig4_rows]
    ok = all(b > a for a, b in zip(s0, s0[1:]))
    record(6, "scheme 0 strictly increasing", ok, f"{s0[0]:.4g} .. {s0[-1]:.4g}")
    assert ok


def test_c6_schemes_1_2_constant(fig4_rows):
    tail = [r for r in fig4_rows if int(r["d"]) >= 6]
    s1 = {r["scheme1_ratio"] for r in tail}
    s2 = {r["scheme2_ratio"] for r in tail}
    ok = len(s1) == 1 and len(s2) == 1
    record(6, "schemes 1, 2 constant for d >= 6", ok, f"scheme1 {sorted(s1)}, scheme2 {sorted(s2)}")
    assert ok


def test_c6_scheme1_unmarked_fraction():
    F0, _ = worst_case_ratio(MarkingConfig.cutoff(0.2, 5), 10)
    ok = abs(F0 - 0.32768) <= 1e-12
    record(6, "scheme 1 F0 = 0.8^5", ok, f"F0 {F0!r}")
    assert ok


@pytest.mark.xfail(strict=True, reason="15/7 is the approximate closed form; the exact plateau "
                   "1 + (1/a)(1/prod_{i=2..5}(1-a^i) - 1) is 2.35566 at a = 0.5")
def test_c6_scheme2_plateau(fig4_rows):
    val = float([r for r in fig4_rows if int(r["d"]) == 10][0]["scheme2_ratio"])
    ok = abs(val - 15 / 7) <= 1e-9
    record(6, "scheme 2 plateau = 15/7", ok, f"{val:.12g} vs {15 / 7:.12g}")
    assert ok


# 7 ---------------------------------------------------------------------------

W7 = detection_window(MarkingConfig.uniform(0.2), 10, 3)


@pytest.fixture(scope="module")
def randomized_runs():
    ctx = FieldCtx(65537)
    cfg = MarkingConfig.uniform(0.2)
    out = {}
    for name in ("add", "delete", "none"):
        correct, consumed = 0, []
        for i in range(1000):
            rng = np.random.Generator(np.random.PCG64(70_000 + i))
            path = Path(rng.integers(0, ctx.p, 10).tolist())
            if name == "add":
                events = [TimedEvent(0, ChangeEvent.added(1, int(rng.integers(0, ctx.p))))]
            elif name == "delete":
                events = [TimedEvent(0, ChangeEvent.deleted(1))]
            else:
                events = []
            rep = run_trial(Scenario(ctx, path, cfg, events, n_packets=50_000, seed=i,
                                     mode="randomized"))
            if name == "none":
                good = rep.initial_trace_ok and not rep.detections and bool(rep.probes)
                verdict = rep.probes[0] if rep.probes else None
            else:
                good = rep.all_correct and len(rep.detections) == 1
                verdict = rep.detections[0] if rep.detections else None
            correct += good
            if verdict is not None and verdict.detected is not None:
                consumed.append(verdict.marked_packets_consumed)
        out[name] = (correct / 1000, float(np.mean(consumed)))
    return out


@pytest.mark.parametrize("name", ["add", "delete", "none"])
def test_c7_randomized_detection(randomized_runs, name):
    acc, mean = randomized_runs[name]
    ok = acc >= 0.99 and abs(mean / W7 - 1) <= 0.25
    record(7, name, ok, f"{acc:.1%} correct, {mean:.1f} marks vs window {W7}")
    assert acc >= 0.99
    assert abs(mean / W7 - 1) <= 0.25


@pytest.mark.xfail(strict=True, reason="losing r_1 is only visible as missing full-path marks; "
                   "a 10% delay margin forces a no-change false-alarm rate above 1%")
def test_first_node_deletion_delay_within_ten_percent(randomized_runs):
    _, mean = randomized_runs["delete"]
    assert abs(mean / W7 - 1) <= 0.10


# 8 ---------------------------------------------------------------------------

def test_c8_butterfly(capsys):
    want = {"D1": {"SCD1", "SEABD1", "SCABD1"}, "D2": {"SED2", "SCABD2", "SEABD2"}}
    bad = []
    for seed in range(10):
        rows = csv_rows(capsys, ["butterfly", "--seed", str(seed)])
        got = {d: {r["route"] for r in rows if r["destination"] == d} for d in want}
        if got != want:
            bad.append(seed)
    record(8, "route sets at D1 and D2 over 10 seeds", not bad, f"mismatching seeds {bad}")
    assert not bad


# 9 ---------------------------------------------------------------------------

def test_c9_properties():
    ctx = FieldCtx(65537)
    p = ctx.p
    rng = np.random.default_rng(9)
    counts = dict(axioms=0, horner=0, split=0, round_trip=0)
    for _ in range(300):
        a, b, c = (int(v) for v in rng.integers(0, p, 3))
        assert (a * (b + c) - (a * b + a * c)) % p == 0
        if a:
            assert a * pow(a, -1, p) % p == 1
        counts["axioms"] += 1
        coeffs = rng.integers(0, p, int(rng.integers(1, 20))).tolist()
        x = int(rng.integers(0, p))
        n = len(coeffs)
        assert poly_eval_horner(coeffs, x, ctx) == sum(cf * pow(x, n - 1 - i, p) for i, cf in enumerate(coeffs)) % p
        counts["horner"] += 1
        kp = KnownPath(Path(coeffs), ctx)
        k = int(rng.integers(1, n + 2))
        assert (poly_a(kp, k, x) + pow(x, n - k + 1, p) * poly_b(kp, k, x)) % p == kp.y(x)
        counts["split"] += 1
        m = int(rng.integers(1, n + 2))
        grown = apply_change(kp.path, ChangeEvent.added(m, int(rng.integers(0, p))))
        assert apply_change(grown, ChangeEvent.deleted(m)) == kp.path
        counts["round_trip"] += 1
    ratios = []
    for d in (10, 100, 1000):
        kp = KnownPath(Path(rng.integers(0, p, d).tolist()), ctx)
        grown = apply_change(kp.path, ChangeEvent.added(d // 3 + 1, 5))
        xs = rng.choice(np.arange(1, p), 3, replace=False).tolist()
        op_counter.reset()
        detect_addition(kp, [(x, poly_eval_horner(grown.nodes, x, ctx)) for x in xs])
        ratios.append(op_counter.mults / (d * 3))
    ok = max(ratios) <= 8
    record(9, "field axioms, Horner oracle, a/b split, round trip, multiplication count", ok,
           f"{counts}, mults/(d*l) = {[round(r, 2) for r in ratios]}")
    assert ok
