"""Incremental change detection against a known path.

Both candidate matrices are computed from three tables evaluated once per
x-value in O(d) sweeps:

* ``a_k(x)``  suffix polynomial ``r_d + r_{d-1} x + ... + r_k x^(d-k)``,
* ``b_k(x)``  prefix polynomial ``r_{k-1} + ... + r_lo x^(k-1-lo)`` where
  ``lo`` is 1 for full-path marks and ``d-h+2`` for a hop-``h`` mark,
* ``x^-e``    inverse powers.

All tables carry a leading batch axis so Monte-Carlo ensembles can screen
thousands of trials per call; the single-path API uses a batch of one.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import islice
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (AmbiguousChange, InconsistentEvidence, InsufficientBuffer, KOutOfRange,
                     StreamExhausted, ZeroX)
from .field import FieldCtx, np_pow, poly_eval_horner
from .marking import Packet
from .path_model import ChangeEvent, ChangeKind, Path, apply_change
from .stats import MarkingStats, absence_horizon

log = logging.getLogger(__name__)


class OpCounter:
    """Tally of field multiplications performed by the candidate-matrix code."""

    def __init__(self):
        self.mults = 0

    def reset(self):
        self.mults = 0


op_counter = OpCounter()


def required_l(d: int, ctx: FieldCtx, delta: int = 2) -> int:
    """``ceil(log2 d / log2 p + delta)``, computed exactly in integers."""
    if d < 1:
        raise ValueError("d must be >= 1")
    t, power = 0, 1
    while power < d:
        power *= ctx.p
        t += 1
    return t + delta


@dataclass(frozen=True)
class DecoderParams:
    delta: int = 2
    epsilon: int = 1
    l: Optional[int] = None
    max_retries: int = 8
    # false-alarm target for declaring the first node gone (randomized mode)
    absence_false_alarm: float = 0.008

    def for_path(self, d: int, ctx: FieldCtx) -> "DecoderParams":
        l = self.l if self.l is not None else required_l(d, ctx, self.delta)
        if l < 1 or self.epsilon < 1:
            raise ValueError("l and epsilon must be positive")
        if self.epsilon >= l and l > 1:
            raise ValueError("epsilon must be smaller than l")
        return DecoderParams(self.delta, self.epsilon, l, self.max_retries, self.absence_false_alarm)


class KnownPath:
    """The pre-change path held by the destination, with direct polynomial evaluators."""

    def __init__(self, path: Path, ctx: FieldCtx):
        path.check_field(ctx)
        self.path = path
        self.ctx = ctx
        self.d = path.d
        self.nodes = np.asarray(path.nodes, dtype=ctx.dtype)

    def y(self, x: int) -> int:
        return poly_eval_horner(self.path.nodes, x, self.ctx)


def poly_a(kp: KnownPath, k: int, x: int) -> int:
    d = kp.d
    if not 1 <= k <= d + 1:
        raise KOutOfRange(f"k={k} outside 1..{d + 1}")
    if k == d + 1:
        return 0
    # highest power first: r_k x^(d-k) + ... + r_d
    return poly_eval_horner(kp.path.nodes[k - 1:], x, kp.ctx)


def poly_b(kp: KnownPath, k: int, x: int) -> int:
    d = kp.d
    if not 1 <= k <= d + 1:
        raise KOutOfRange(f"k={k} outside 1..{d + 1}")
    if k == 1:
        return 0
    return poly_eval_horner(kp.path.nodes[:k - 1], x, kp.ctx)


def poly_b_h(kp: KnownPath, k: int, h: int, x: int) -> int:
    """Prefix polynomial restricted to the nodes a hop-``h`` mark traversed:
    ``r_{k-1} + r_{k-2} x + ... + r_{d-h+2} x^(k-d+h-3)``."""
    d = kp.d
    lo = d - h + 2
    if not 1 <= k <= d + 1 or k < lo:
        raise KOutOfRange(f"k={k} outside {max(lo, 1)}..{d + 1} for hop {h}")
    lo = max(lo, 1)
    if k == lo:
        return 0
    return poly_eval_horner(kp.path.nodes[lo - 1:k - 1], x, kp.ctx)


# -- vectorised tables ---------------------------------------------------------

def _tables(nodes: np.ndarray, x: np.ndarray, lo: np.ndarray, ctx: FieldCtx):
    """Return ``A, Bh, IP`` for a batch.

    ``nodes``: (B, d); ``x``, ``lo``: (B, l).  ``A[k]`` and ``Bh[k]`` are
    indexed by k = 1..d+1 (row 0 unused); ``IP[e] = x^-e`` for e = 0..d.
    """
    p = ctx.p
    B, d = nodes.shape
    l = x.shape[1]
    dt = ctx.dtype
    if B * l <= 16:
        return _tables_small(nodes, x, lo, ctx)
    A = np.zeros((d + 2, B, l), dtype=dt)
    pw = np.ones((B, l), dtype=dt)
    for k in range(d, 0, -1):
        A[k] = (A[k + 1] + nodes[:, k - 1:k] * pw) % p
        pw = pw * x % p
    Bh = np.zeros((d + 2, B, l), dtype=dt)
    b = np.zeros((B, l), dtype=dt)
    for k in range(1, d + 1):
        Bh[k] = b
        b = (b * x + np.where(lo <= k, nodes[:, k - 1:k], 0)) % p
    Bh[d + 1] = b
    IP = np.empty((d + 1, B, l), dtype=dt)
    IP[0] = 1
    ix = ctx.inv_array(x)
    for e in range(1, d + 1):
        IP[e] = IP[e - 1] * ix % p
    op_counter.mults += B * l * (2 * d + d + d)
    return A, Bh, IP


def _tables_small(nodes, x, lo, ctx: FieldCtx):
    # Same tables with plain ints: cheaper than numpy for a handful of columns.
    p = ctx.p
    B, d = nodes.shape
    l = x.shape[1]
    A = np.zeros((d + 2, B, l), dtype=ctx.dtype)
    Bh = np.zeros((d + 2, B, l), dtype=ctx.dtype)
    IP = np.empty((d + 1, B, l), dtype=ctx.dtype)
    for bi in range(B):
        r = [int(v) for v in nodes[bi]]
        for j in range(l):
            xv, low = int(x[bi, j]), int(lo[bi, j])
            col = [0] * (d + 2)
            pw = 1
            for k in range(d, 0, -1):
                col[k] = (col[k + 1] + r[k - 1] * pw) % p
                pw = pw * xv % p
            A[:, bi, j] = col
            col = [0] * (d + 2)
            b = 0
            for k in range(1, d + 1):
                col[k] = b
                b = (b * xv + (r[k - 1] if low <= k else 0)) % p
            col[d + 1] = b
            Bh[:, bi, j] = col
            ix = pow(xv, -1, p)
            col = [1] * (d + 1)
            for e in range(1, d + 1):
                col[e] = col[e - 1] * ix % p
            IP[:, bi, j] = col
    op_counter.mults += B * l * (2 * d + d + d)
    return A, Bh, IP


def _as_batch(nodes, x, z, h, ctx):
    nodes = np.atleast_2d(np.asarray(nodes, dtype=ctx.dtype))
    x = np.atleast_2d(np.asarray(x, dtype=ctx.dtype)) % ctx.p
    z = np.atleast_2d(np.asarray(z, dtype=ctx.dtype)) % ctx.p
    h = np.atleast_2d(np.asarray(h, dtype=np.int64))
    if np.any(x == 0):
        raise ZeroX("x = 0 cannot be divided out of a candidate entry")
    return nodes, x, z, h


def s_entries(nodes, x, z, h, ctx: FieldCtx, masked: bool = True):
    """Addition candidates for a batch: entries and validity, shape (B, d+1, l).

    ``s[k] = (z - a_k(x)) / x^(d-k+1) - x * b_{k,h}(x)``, valid for
    ``k >= d-h+2`` when ``masked``.
    """
    nodes, x, z, h = _as_batch(nodes, x, z, h, ctx)
    p = ctx.p
    d = nodes.shape[1]
    lo = d - h + 2
    A, Bh, IP = _tables(nodes, x, np.maximum(lo, 1), ctx)
    k = np.arange(1, d + 2)
    diff = (z[None] - A[1:]) % p
    S = (diff * IP[d - k + 1] - x[None] * Bh[1:]) % p
    op_counter.mults += 2 * S.size
    valid = (k[:, None, None] >= lo[None]) if masked else np.ones(S.shape, dtype=bool)
    valid = np.broadcast_to(valid, S.shape)
    return np.moveaxis(S, 0, 1), np.moveaxis(valid, 0, 1)


def r_entries(nodes, x, z, h, ctx: FieldCtx, masked: bool = True):
    """Deletion candidates for a batch, shape (B, d, l).

    ``r[k] = b_{k,h+2}(x) - (z - a_k(x)) / x^(d-k)``, valid for
    ``k >= d-h+1`` when ``masked``.
    """
    nodes, x, z, h = _as_batch(nodes, x, z, h, ctx)
    p = ctx.p
    d = nodes.shape[1]
    lo = d - h
    A, Bh, IP = _tables(nodes, x, np.maximum(lo, 1), ctx)
    k = np.arange(1, d + 1)
    diff = (z[None] - A[1:d + 1]) % p
    R = (Bh[1:d + 1] - diff * IP[d - k]) % p
    op_counter.mults += R.size
    valid = (k[:, None, None] >= lo[None] + 1) if masked else np.ones(R.shape, dtype=bool)
    valid = np.broadcast_to(valid, R.shape)
    return np.moveaxis(R, 0, 1), np.moveaxis(valid, 0, 1)


def matching_rows(entries: np.ndarray, valid: np.ndarray, min_valid: int,
                  expected: Optional[np.ndarray] = None) -> np.ndarray:
    """Boolean (..., rows): all valid entries equal and at least ``min_valid`` of them.

    With ``expected`` (shape (..., rows)) the common value must also equal it.
    """
    big = np.iinfo(np.int64).max
    e = entries.astype(np.int64) if entries.dtype == object else entries
    hi = np.where(valid, e, -1).max(axis=-1)
    lo = np.where(valid, e, big).min(axis=-1)
    count = valid.sum(axis=-1)
    ok = (count >= min_valid) & (hi == lo)
    if expected is not None:
        ok &= hi == expected
    return ok


def screen_batch(nodes, x, z, kind: str, ctx: FieldCtx):
    """Row-by-row candidate test for a batch in deterministic mode.

    Same result as ``matching_rows`` over ``s_entries``/``r_entries`` with
    every entry valid (deletion rows also filtered on the known ID), but the
    rows are produced one at a time so no (rows, B, l) table is built.
    Returns ``ok`` (B, rows) and the first-column value of each row.
    """
    if kind not in ("add", "delete"):
        raise ValueError("kind must be 'add' or 'delete'")
    nodes = np.atleast_2d(np.asarray(nodes, dtype=ctx.dtype))
    x = np.atleast_2d(np.asarray(x, dtype=ctx.dtype)) % ctx.p
    z = np.atleast_2d(np.asarray(z, dtype=ctx.dtype)) % ctx.p
    if np.any(x == 0):
        raise ZeroX("x = 0 cannot be divided out of a candidate entry")
    p = ctx.p
    B, d = nodes.shape
    rows = d + 1 if kind == "add" else d
    # work column-major: (l, B) arrays and one contiguous node row per step
    cols = np.ascontiguousarray(nodes.T)
    xt = np.ascontiguousarray(x.T)
    y = np.zeros_like(xt)
    for k in range(d):
        y = (y * xt + cols[k]) % p
    # With c = z - y(x): s_k = c x^-(d-k+1) + (1-x) b_k and
    # r_k = (1-x) b_k - c x^-(d-k), where b_k is the prefix polynomial.
    c = (z.T - y) % p
    e0 = d if kind == "add" else d - 1
    g = c * np_pow(ctx.inv_array(xt), e0, ctx) % p
    omx = (1 - xt) % p
    if kind == "delete":
        g = (p - g) % p
    b = np.zeros_like(xt)
    ok = np.empty((rows, B), dtype=bool)
    val = np.empty((rows, B), dtype=ctx.dtype)
    for k in range(1, rows + 1):
        e = (g + omx * b) % p
        ok[k - 1] = (e[1:] == e[0]).all(axis=0)
        val[k - 1] = e[0]
        if k <= d:
            b = (b * xt + cols[k - 1]) % p
        g = g * xt % p
    ok, val = ok.T, val.T
    if kind == "delete":
        ok &= val == nodes
    op_counter.mults += B * x.shape[1] * (3 * rows + 2 * d)
    return ok, val


# -- single-path API -----------------------------------------------------------

@dataclass
class CandidateMatrix:
    kind: str                 # "S_hat" or "R_hat"
    entries: np.ndarray       # rows x l
    valid: np.ndarray         # rows x l

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def l(self) -> int:
        return self.entries.shape[1]

    def entry(self, k: int, j: int) -> Optional[int]:
        """1-based accessor; None for masked entries."""
        if not self.valid[k - 1, j - 1]:
            return None
        return int(self.entries[k - 1, j - 1])

    def matching(self, min_valid: int, expected=None) -> List[int]:
        ok = matching_rows(self.entries, self.valid, min_valid, expected)
        return [int(k) + 1 for k in np.flatnonzero(ok)]

    def row_value(self, k: int) -> int:
        row = self.entries[k - 1][self.valid[k - 1]]
        return int(row[0])


def _split_pairs(pairs):
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no value-pairs")
    cols = list(zip(*pairs))
    if len(cols) == 2:
        return cols[0], cols[1], None
    return cols[0], cols[1], cols[2]


def build_S(kp: KnownPath, pairs: Sequence[Tuple[int, ...]], masked: Optional[bool] = None) -> CandidateMatrix:
    """(d+1) x l addition candidates from ``(x, z)`` or ``(x, z, h)`` pairs.

    Without hop counts every pair is treated as a full-path mark (h = d+1)."""
    xs, zs, hs = _split_pairs(pairs)
    if hs is None:
        hs = [kp.d + 1] * len(xs)
        masked = False if masked is None else masked
    masked = True if masked is None else masked
    S, valid = s_entries(kp.nodes[None], [xs], [zs], [hs], kp.ctx, masked)
    return CandidateMatrix("S_hat", S[0], np.array(valid[0]))


def build_R(kp: KnownPath, pairs: Sequence[Tuple[int, ...]], masked: Optional[bool] = None) -> CandidateMatrix:
    """d x l deletion candidates from ``(x, w)`` or ``(x, w, h)`` pairs."""
    xs, zs, hs = _split_pairs(pairs)
    if hs is None:
        hs = [kp.d - 1] * len(xs)
        masked = False if masked is None else masked
    masked = True if masked is None else masked
    R, valid = r_entries(kp.nodes[None], [xs], [zs], [hs], kp.ctx, masked)
    return CandidateMatrix("R_hat", R[0], np.array(valid[0]))


@dataclass
class DetectionResult:
    event: ChangeEvent
    rows_matched: List[int] = field(default_factory=list)
    packets_consumed: int = 0
    retries: int = 0


def _pairs_from(stream, hop: Optional[int]) -> Iterator[Tuple[int, int]]:
    for item in stream:
        if isinstance(item, Packet):
            if item.flag != 1 or (hop is not None and item.hop != hop):
                continue
            yield item.x, item.y
        else:
            yield int(item[0]), int(item[1])


def _resolve(path: Path, events: List[ChangeEvent]) -> Optional[ChangeEvent]:
    """Collapse candidate events that produce the same path; None if they differ."""
    if not events:
        return None
    outcomes = {apply_change(path, ev).nodes for ev in events}
    if len(outcomes) != 1:
        return None
    return min(events, key=lambda ev: ev.position)


def _sliding_detect(kp: KnownPath, stream, params: DecoderParams, hop: int, build, expected):
    params = params.for_path(kp.d, kp.ctx)
    l, eps = params.l, params.epsilon
    it = _pairs_from(stream, hop)
    window = list(islice(it, l))
    consumed = len(window)
    if len(window) < l:
        raise StreamExhausted(f"stream ended after {consumed} of {l} value-pairs")
    retries = 0
    while True:
        cm = build(window)
        rows = cm.matching(l, expected)
        events = [ChangeEvent(ChangeKind.ADDED if cm.kind == "S_hat" else ChangeKind.DELETED,
                              k, cm.row_value(k)) for k in rows]
        ev = _resolve(kp.path, events)
        if ev is not None:
            return DetectionResult(ev, rows, consumed, retries)
        if retries >= params.max_retries:
            raise AmbiguousChange(f"{len(rows)} consistent rows after {retries} retries", rows)
        more = list(islice(it, eps))
        consumed += len(more)
        if len(more) < eps:
            raise StreamExhausted("stream ended while resolving an ambiguous window")
        window = window[eps:] + more
        retries += 1


def detect_addition(kp: KnownPath, stream: Iterable, params: DecoderParams = DecoderParams()) -> DetectionResult:
    """Addition detector over a stream of hop-(d+1) marks (packets) or ``(x, z)`` pairs.

    Rows whose added node yields the same path (an ID inserted next to an
    equal ID) count as one outcome; the smallest position is reported.
    """
    return _sliding_detect(kp, stream, params, kp.d + 1,
                           lambda w: build_S(kp, w, masked=False), None)


def detect_deletion(kp: KnownPath, stream: Iterable, params: DecoderParams = DecoderParams()) -> DetectionResult:
    """Deletion detector over hop-(d-1) marks.  A row only counts when its common
    value equals the known ID at that position."""
    if kp.d < 2:
        raise ValueError("deleting the only node of a path is not representable")
    return _sliding_detect(kp, stream, params, kp.d - 1,
                           lambda w: build_R(kp, w, masked=False), kp.nodes)


# -- randomized mode -------------------------------------------------------------

def _suffix_values(kp: KnownPath, xs: np.ndarray, hs: np.ndarray) -> np.ndarray:
    """``a_{d-h+1}(x)``: the value an unchanged hop-h mark would carry."""
    d = kp.d
    A, _, _ = _tables(kp.nodes[None], xs[None], np.ones((1, len(xs)), dtype=np.int64), kp.ctx)
    idx = np.clip(d - hs + 1, 1, d + 1)
    return A[idx, 0, np.arange(len(xs))]


def detect_change_randomized(kp: KnownPath, buffer: Sequence[Packet], params: DecoderParams,
                             stats: MarkingStats, min_buffer: Optional[int] = None) -> DetectionResult:
    """Randomized-marking change detector on the marks received since the last verdict.

    Only marks that contradict the known path (hop d+1, or a value differing
    from the unchanged sub-path polynomial) vote in the candidate matrices;
    unchanged marks are consistent with a boundary row by construction and
    carry no evidence.  The ``l`` highest-hop such marks are tested, first
    in S_hat and, unless a hop d+1 mark is present, in R_hat; ambiguous
    windows slide by ``epsilon``.

    Losing ``r_1`` leaves every surviving mark unchanged, so it is declared
    from absence: no hop >= d mark among at least
    ``absence_horizon(stats, params.absence_false_alarm)`` marks, with two or
    more hop d-1 marks present.  Without contradicting marks the verdict is
    NoChange once a full-path mark is seen.  :class:`InsufficientBuffer` asks
    the caller for more packets.
    """
    params = params.for_path(kp.d, kp.ctx)
    d, l = kp.d, params.l
    marked = [pk for pk in buffer if pk.flag == 1]
    if min_buffer is not None and len(marked) < min_buffer:
        raise InsufficientBuffer(f"{len(marked)} marked packets, detector needs {min_buffer}")
    if not marked:
        raise InsufficientBuffer("no marked packets")
    hs = np.array([pk.hop for pk in marked], dtype=np.int64)
    if hs.max() > d + 1:
        raise InconsistentEvidence(f"hop {hs.max()} implies more than one change")
    xs = np.array([pk.x for pk in marked], dtype=kp.ctx.dtype)
    zs = np.array([pk.y for pk in marked], dtype=kp.ctx.dtype)
    informative = (hs == d + 1) | (zs != _suffix_values(kp, xs, hs))
    order = [int(i) for i in np.flatnonzero(informative)]
    order.sort(key=lambda i: -hs[i])
    n_marked = len(marked)

    if len(order) >= 2:
        start, retries = 0, 0
        while True:
            win = order[start:start + l]
            if len(win) < 2:
                raise InsufficientBuffer("not enough contradicting marks left to resolve")
            wx, wz, wh = xs[win], zs[win], hs[win]
            events: List[ChangeEvent] = []
            S, Sv = s_entries(kp.nodes[None], wx[None], wz[None], wh[None], kp.ctx)
            for k in np.flatnonzero(matching_rows(S[0], Sv[0], 2)):
                events.append(ChangeEvent.added(int(k) + 1, int(S[0][k][Sv[0][k]][0])))
            if not (wh == d + 1).any() and d >= 2:
                R, Rv = r_entries(kp.nodes[None], wx[None], wz[None], wh[None], kp.ctx)
                r_rows = np.flatnonzero(matching_rows(R[0], Rv[0], 2, kp.nodes))
                if len(r_rows) and events:
                    log.warning("both addition and deletion rows are consistent")
                events.extend(ChangeEvent.deleted(int(k) + 1, int(kp.nodes[k])) for k in r_rows)
            ev = _resolve(kp.path, events)
            if ev is not None:
                rows = [e.position for e in events]
                return DetectionResult(ev, rows, n_marked, retries)
            if retries >= params.max_retries:
                raise AmbiguousChange(f"{len(events)} candidate changes after {retries} retries",
                                      [e.position for e in events])
            start += params.epsilon
            retries += 1

    if len(order) == 1:
        raise InsufficientBuffer("a single contradicting mark; waiting for a second")
    if (hs >= d).any():
        return DetectionResult(ChangeEvent.none(), [], n_marked, 0)
    if d >= 2 and (hs == d - 1).sum() >= 2:
        horizon = absence_horizon(stats, params.absence_false_alarm)
        if n_marked >= horizon:
            return DetectionResult(ChangeEvent.deleted(1, int(kp.nodes[0])), [1], n_marked, 0)
    raise InsufficientBuffer("no full-path mark yet")
