"""Packet-level simulator and Monte-Carlo ensembles.

Randomness comes from numpy's PCG64 generator; trial ``i`` of an ensemble
is seeded with ``seed_base + i`` so any single trial can be replayed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from .errors import (AmbiguousChange, ConfigError, InconsistentEvidence, InsufficientBuffer,
                     InsufficientPairs, StreamExhausted, TracebackError)
from .field import FieldCtx, np_horner
from .incremental import (DecoderParams, KnownPath, detect_addition, detect_change_randomized,
                          detect_deletion, required_l, screen_batch)
from .marking import (MarkingConfig, NodeMarkerState, Packet, traverse_deterministic,
                      traverse_randomized)
from .path_model import (ChangeEvent, ChangeKind, Path, TimedEvent, apply_change, complete_event,
                         load_scenario_json, parse_event)
from .reconstruct import interpolate_path, reconstruct_randomized
from .stats import absence_horizon, detection_window, fractions

MODES = ("deterministic", "randomized")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class Scenario:
    ctx: FieldCtx
    initial_path: Path
    config: MarkingConfig = field(default_factory=MarkingConfig.deterministic)
    events: List[TimedEvent] = field(default_factory=list)
    n_packets: int = 100_000
    seed: int = 0
    mode: str = "deterministic"
    params: DecoderParams = field(default_factory=DecoderParams)
    stop_when_resolved: bool = True
    # randomized mode: give up on an epoch after this many detection windows
    max_windows: int = 16
    # randomized initial trace: accepted chance that a longer path went unseen
    trace_false_alarm: float = 1e-4

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        self.initial_path.check_field(self.ctx)
        ats = [e.at_packet for e in self.events]
        if any(b <= a for a, b in zip(ats, ats[1:])):
            raise ConfigError("event packet indices must be strictly increasing")
        if self.mode == "deterministic" and self.config.scheme != "deterministic":
            self.config = MarkingConfig.deterministic()

    @classmethod
    def from_json(cls, text: str, **overrides) -> "Scenario":
        doc = load_scenario_json(text)
        try:
            ctx = FieldCtx(int(doc["p"]))
            path = Path(doc["path"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad 'p' or 'path': {exc}") from None
        events = [parse_event(e, f"events[{i}]") for i, e in enumerate(doc.get("events", []))]
        mode = doc.get("mode", "deterministic")
        cfg = doc.get("marking", {})
        try:
            config = MarkingConfig(**cfg) if cfg else (
                MarkingConfig.deterministic() if mode == "deterministic" else MarkingConfig.uniform(0.2))
        except TypeError as exc:
            raise ConfigError(f"bad 'marking' block: {exc}") from None
        kw = dict(ctx=ctx, initial_path=path, config=config, events=events, mode=mode,
                  n_packets=int(doc.get("n_packets", 100_000)), seed=int(doc.get("seed", 0)),
                  params=DecoderParams(delta=int(doc.get("delta", 2))))
        kw.update(overrides)
        return cls(**kw)


@dataclass
class Detection:
    truth: ChangeEvent
    detected: Optional[ChangeEvent]
    packets_consumed: int
    marked_packets_consumed: int
    correct: bool
    retries: int = 0
    error: Optional[str] = None


@dataclass
class TrialReport:
    seed: int
    initial_trace_packets: int
    initial_trace_ok: bool
    detections: List[Detection] = field(default_factory=list)
    # NoChange verdicts issued while no change was pending
    probes: List[Detection] = field(default_factory=list)

    @property
    def all_correct(self) -> bool:
        return self.initial_trace_ok and all(d.correct for d in self.detections)


class _Emitter:
    """Generates packets along the current path in vectorised blocks."""

    BLOCK = 128

    def __init__(self, scenario: Scenario, rng: np.random.Generator):
        self.sc = scenario
        self.rng = rng
        self.path = scenario.initial_path
        self.markers: Dict[int, NodeMarkerState] = {}
        self.index = 0
        self._block: List[Packet] = []
        self._pos = 0

    def set_path(self, path: Path) -> None:
        self.path = path
        self._block, self._pos = [], 0

    def exhausted(self) -> bool:
        return self.index >= self.sc.n_packets

    def next(self) -> Packet:
        if self._pos >= len(self._block):
            n = self.BLOCK
            if self.sc.mode == "deterministic":
                batch = traverse_deterministic(self.path, n, self.sc.config.q1, self.rng,
                                               self.sc.ctx, self.markers)
            else:
                batch = traverse_randomized(self.path, n, self.sc.config, self.rng,
                                            self.sc.ctx, self.markers)
            self._block, self._pos = list(batch), 0
        pkt = self._block[self._pos]
        self._pos += 1
        self.index += 1
        return pkt


def _same_outcome(path: Path, a: Optional[ChangeEvent], b: ChangeEvent) -> bool:
    if a is None or a.kind is not b.kind:
        return False
    return apply_change(path, a) == apply_change(path, b)


def _horizon(sc: Scenario, d: int) -> int:
    return absence_horizon(fractions(sc.config, d), sc.trace_false_alarm)


def _initial_trace(sc: Scenario, em: _Emitter):
    """Phase 1: collect marks until the known-path reconstruction succeeds."""
    ctx = sc.ctx
    if sc.mode == "deterministic":
        pairs, seen = [], set()
        while not em.exhausted():
            pkt = em.next()
            if pkt.flag and pkt.x not in seen:
                seen.add(pkt.x)
                pairs.append((pkt.x, pkt.y))
                if len(pairs) == pkt.hop:
                    return interpolate_path(pairs, pkt.hop, ctx), em.index
        raise InsufficientPairs("packet budget ended during the initial trace")
    marked: List[Packet] = []
    counts: Dict[int, set] = {}
    while not em.exhausted():
        pkt = em.next()
        if not pkt.flag:
            continue
        marked.append(pkt)
        counts.setdefault(pkt.hop, set()).add(pkt.x)
        top = max(counts)
        # a longer path would have shown a hop top+1 mark by now
        if len(counts[top]) >= top and len(marked) >= _horizon(sc, top + 1):
            return reconstruct_randomized(marked, ctx, cross_check=True), em.index
    raise InsufficientPairs("packet budget ended during the initial trace")


def run_trial(scenario: Scenario) -> TrialReport:
    """Initial traceback, then incremental detection of each scheduled change.

    Events take effect between packets.  An event scheduled before the
    initial trace finishes, or while an earlier change is still unresolved,
    is held back until the destination is ready.
    """
    sc = scenario
    rng = make_rng(sc.seed)
    em = _Emitter(sc, rng)
    try:
        known, n_init = _initial_trace(sc, em)
    except TracebackError as exc:
        rep = TrialReport(sc.seed, em.index, False)
        rep.detections.append(Detection(ChangeEvent.none(), None, em.index, 0, False,
                                        error=f"initial trace: {exc}"))
        return rep
    rep = TrialReport(sc.seed, n_init, known == sc.initial_path)
    if not rep.initial_trace_ok:
        return rep
    if sc.mode == "deterministic":
        _run_deterministic(sc, em, known, rep)
    else:
        _run_randomized(sc, em, known, rep)
    return rep


def _due_event(events: List[TimedEvent], em: _Emitter) -> Optional[ChangeEvent]:
    if events and events[0].at_packet <= em.index:
        return events.pop(0).event
    return None


def _run_deterministic(sc: Scenario, em: _Emitter, known: Path, rep: TrialReport) -> None:
    events = list(sc.events)
    ctx = sc.ctx
    truth: Optional[ChangeEvent] = None
    change_at = em.index
    while not em.exhausted():
        if truth is None:
            ev = _due_event(events, em)
            if ev is not None:
                truth = complete_event(em.path, ev)
                em.set_path(apply_change(em.path, truth))
                change_at = em.index
        elif sc.stop_when_resolved is False:
            pass
        if truth is None and not events and sc.stop_when_resolved:
            return
        pkt = em.next()
        if not pkt.flag or pkt.hop == known.d:
            continue
        counter = {"marked": 0}

        def stream(first=pkt) -> Iterator[Packet]:
            counter["marked"] += 1
            yield first
            while not em.exhausted():
                nxt = em.next()
                counter["marked"] += nxt.flag
                yield nxt

        kp = KnownPath(known, ctx)
        t = truth if truth is not None else ChangeEvent.none()
        try:
            if pkt.hop == known.d + 1:
                res = detect_addition(kp, stream(), sc.params)
            elif pkt.hop == known.d - 1:
                res = detect_deletion(kp, stream(), sc.params)
            else:
                raise InconsistentEvidence(f"hop {pkt.hop} on a known path of length {known.d}")
        except TracebackError as exc:
            rep.detections.append(Detection(t, None, em.index - change_at, counter["marked"],
                                            False, error=f"{type(exc).__name__}: {exc}"))
            return
        ok = _same_outcome(known, res.event, t)
        rep.detections.append(Detection(t, res.event, em.index - change_at, counter["marked"],
                                        ok, res.retries))
        known = apply_change(known, res.event)
        if not ok:
            return
        truth = None
    if truth is not None:
        rep.detections.append(Detection(truth, None, em.index - change_at, 0, False,
                                        error="undetected"))


def _run_randomized(sc: Scenario, em: _Emitter, known: Path, rep: TrialReport) -> None:
    events = list(sc.events)
    ctx = sc.ctx
    truth: Optional[ChangeEvent] = None
    change_marked = 0
    change_at = em.index
    buffer: List[Packet] = []
    epoch_start = em.index

    def setup(path: Path):
        params = sc.params.for_path(path.d, ctx)
        return (KnownPath(path, ctx), params, fractions(sc.config, path.d),
                detection_window(sc.config, path.d, params.l))

    kp, params, st, window = setup(known)
    while not em.exhausted():
        if truth is None:
            ev = _due_event(events, em)
            if ev is not None:
                truth = complete_event(em.path, ev)
                em.set_path(apply_change(em.path, truth))
                change_at, change_marked = em.index, 0
        pkt = em.next()
        if not pkt.flag:
            continue
        buffer.append(pkt)
        change_marked += 1
        if len(buffer) < window:
            continue
        t = truth if truth is not None else ChangeEvent.none()
        consumed = em.index - (change_at if truth is not None else epoch_start)
        marked_consumed = change_marked if truth is not None else len(buffer)
        try:
            res = detect_change_randomized(kp, buffer, params, st, min_buffer=window)
        except (InsufficientBuffer, AmbiguousChange) as exc:
            if len(buffer) < sc.max_windows * window:
                continue
            rep.detections.append(Detection(t, None, consumed, marked_consumed, False,
                                            error=f"{type(exc).__name__}: {exc}"))
            return
        except TracebackError as exc:
            rep.detections.append(Detection(t, None, consumed, marked_consumed, False,
                                            error=f"{type(exc).__name__}: {exc}"))
            return
        buffer = []
        epoch_start = em.index
        if res.event.kind is ChangeKind.NO_CHANGE:
            if truth is None:
                rep.probes.append(Detection(t, res.event, consumed, marked_consumed, True))
                if not events and sc.stop_when_resolved:
                    return
            continue
        ok = _same_outcome(known, res.event, t)
        rep.detections.append(Detection(t, res.event, consumed, marked_consumed, ok, res.retries))
        known = apply_change(known, res.event)
        kp, params, st, window = setup(known)
        truth = None
        if not ok:
            return
        if not events and sc.stop_when_resolved:
            return
    if truth is not None:
        rep.detections.append(Detection(truth, None, em.index - change_at, change_marked, False,
                                        error="undetected"))


# -- ensembles ---------------------------------------------------------------

def _summary(values: Sequence[float]) -> dict:
    if not values:
        return {"mean": math.nan, "std": math.nan, "min": math.nan, "max": math.nan}
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "min": float(arr.min()),
            "max": float(arr.max())}


def run_ensemble(template: Scenario, n_trials: int, seed_base: int = 0) -> dict:
    """Run ``n_trials`` copies of ``template`` with seeds ``seed_base + i``."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    reports = []
    for i in range(n_trials):
        sc = Scenario(**{**template.__dict__, "seed": seed_base + i,
                         "events": list(template.events)})
        reports.append(run_trial(sc))
    dets = [d for r in reports for d in r.detections]
    failures = sum(1 for r in reports if not r.all_correct)
    return {
        "n_trials": n_trials,
        "n_detections": len(dets),
        "n_correct": sum(d.correct for d in dets),
        "failed_trials": failures,
        "error_rate": failures / n_trials,
        "packets_consumed": _summary([d.packets_consumed for d in dets]),
        "marked_packets_consumed": _summary([d.marked_packets_consumed for d in dets]),
        "initial_trace_packets": _summary([r.initial_trace_packets for r in reports]),
        "reports": reports,
    }


# -- batched incremental-detection ensembles --------------------------------------

def _distinct_x(rng, B: int, l: int, p: int) -> np.ndarray:
    x = rng.integers(1, p, size=(B, l))
    while True:
        s = np.sort(x, axis=1)
        bad = (s[:, 1:] == s[:, :-1]).any(axis=1) if l > 1 else np.zeros(B, dtype=bool)
        if not bad.any():
            return x
        x[bad] = rng.integers(1, p, size=(int(bad.sum()), l))


@dataclass
class BudgetResult:
    kind: str
    d: int
    p: int
    l: int
    n_trials: int
    first_window_errors: int = 0     # a non-equivalent row also matched (the union-bound event)
    first_window_resolved: int = 0
    misidentified: int = 0
    unresolved: int = 0
    retried: int = 0                 # needed marks beyond the first l

    @property
    def first_window_error_rate(self) -> float:
        return self.first_window_errors / self.n_trials

    @property
    def union_bound(self) -> float:
        return 2.0 ** (math.log2(self.d) - self.l * math.log2(self.p))


def incremental_budget_ensemble(d: int, ctx: FieldCtx, kind: str, n_trials: int, seed: int,
                                delta: int = 2, chunk: int = 2000) -> BudgetResult:
    """Random path, random single change, exactly ``l`` fresh marks per trial.

    The l-pair window of every trial is screened in bulk; trials whose
    window is not uniquely decided are replayed through the sliding-window
    detector with further marks from the changed path.
    """
    if kind not in ("add", "delete"):
        raise ValueError("kind must be 'add' or 'delete'")
    p = ctx.p
    rng = make_rng(seed)
    l = required_l(d, ctx, delta)
    res = BudgetResult(kind, d, p, l, n_trials)
    params = DecoderParams(delta=delta)
    done = 0
    while done < n_trials:
        B = min(chunk, n_trials - done)
        nodes = rng.integers(0, p, size=(B, d)).astype(ctx.dtype)
        if kind == "add":
            m = rng.integers(1, d + 2, size=B)
            ids = rng.integers(0, p, size=B).astype(ctx.dtype)
            cols = np.arange(d + 1)[None, :]
            src = np.where(cols < (m - 1)[:, None], cols, cols - 1)
            changed = np.take_along_axis(nodes, np.clip(src, 0, d - 1), axis=1)
            changed[np.arange(B), m - 1] = ids
        else:
            m = rng.integers(1, d + 1, size=B)
            ids = nodes[np.arange(B), m - 1]
            cols = np.arange(d - 1)[None, :]
            src = np.where(cols < (m - 1)[:, None], cols, cols + 1)
            changed = np.take_along_axis(nodes, src, axis=1)
        x = _distinct_x(rng, B, l, p).astype(ctx.dtype)
        z = np_horner(changed, x, ctx)
        ok, vals = screen_batch(nodes, x, z, kind, ctx)
        count = ok.sum(axis=1)
        row = ok.argmax(axis=1)
        val = vals[np.arange(B), row]
        simple = (count == 1) & (row == m - 1) & (val == ids)
        res.first_window_resolved += int(simple.sum())
        for b in np.flatnonzero(~simple):
            path = Path(nodes[b].tolist())
            truth = (ChangeEvent.added(int(m[b]), int(ids[b])) if kind == "add"
                     else ChangeEvent.deleted(int(m[b]), int(ids[b])))
            target = apply_change(path, truth)
            rows = np.flatnonzero(ok[b])
            cands = [ChangeEvent(truth.kind, int(k) + 1, int(vals[b, k])) for k in rows]
            if any(apply_change(path, c) != target for c in cands):
                res.first_window_errors += 1
            kp = KnownPath(path, ctx)
            sub = make_rng(seed * 1_000_003 + done + int(b) + 1)

            def stream(b=b, target=target, sub=sub):
                for xi, zi in zip(x[b].tolist(), z[b].tolist()):
                    yield xi, zi
                used = set(x[b].tolist())
                while True:
                    xi = int(sub.integers(1, p))
                    if xi in used:
                        continue
                    used.add(xi)
                    yield xi, int(np_horner(np.asarray(target.nodes, dtype=ctx.dtype),
                                            np.asarray([xi], dtype=ctx.dtype), ctx)[0])

            try:
                det = (detect_addition if kind == "add" else detect_deletion)(kp, stream(), params)
            except (AmbiguousChange, StreamExhausted):
                res.unresolved += 1
                continue
            res.retried += det.retries > 0
            if apply_change(path, det.event) != target:
                res.misidentified += 1
        done += B
    return res


def empirical_fractions(path: Path, config: MarkingConfig, n_packets: int, seed: int,
                        ctx: FieldCtx, block: int = 250_000) -> np.ndarray:
    """Share of packets whose surviving mark came from each position (index 0: unmarked)."""
    rng = make_rng(seed)
    counts = np.zeros(path.d + 1, dtype=np.int64)
    markers: Dict[int, NodeMarkerState] = {}
    left = n_packets
    while left:
        n = min(block, left)
        batch = traverse_randomized(path, n, config, rng, ctx, markers)
        counts += np.bincount(batch.last_marker, minlength=path.d + 1)
        left -= n
    return counts / n_packets
