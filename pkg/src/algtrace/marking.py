"""Packet marking: source-initiated (deterministic) and re-marking (randomized) encoders."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Dict, Iterable, Iterator, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, UnmarkedPacket, XExhausted
from .field import FieldCtx, np_horner
from .path_model import Path

SCHEMES = ("uniform", "cutoff", "geometric", "deterministic")


@dataclass(frozen=True)
class Packet:
    flag: int
    hop: int
    x: int = 0
    y: int = 0

    @property
    def marked(self) -> bool:
        return self.flag == 1


@dataclass(frozen=True)
class MarkingConfig:
    """Marking-probability schedule.

    ``uniform``: every node re-marks with ``q``.  ``cutoff``: ``q`` while the
    presented hop is at most ``h0``, else 0.  ``geometric``: ``alpha**h`` up to
    ``h0``, else 0.  ``deterministic``: only the first node initiates, with
    probability ``q1``.  ``per_node`` overrides the probability by path
    position (1-based list index + 1) when given.
    """

    scheme: str = "uniform"
    q: float = 0.04
    h0: int = 5
    alpha: float = 0.5
    q1: float = 1.0
    per_node: Optional[tuple] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown marking scheme {self.scheme!r}")
        if self.scheme in ("uniform", "cutoff") and not 0 <= self.q < 1:
            raise ConfigError("q must lie in [0, 1)")
        if self.scheme in ("cutoff", "geometric") and self.h0 < 1:
            raise ConfigError("h0 must be >= 1")
        if self.scheme == "geometric" and not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.scheme == "deterministic" and not 0 <= self.q1 <= 1:
            raise ConfigError("q1 must lie in [0, 1]")
        if self.per_node is not None:
            object.__setattr__(self, "per_node", tuple(float(v) for v in self.per_node))
            if any(not 0 <= v <= 1 for v in self.per_node):
                raise ConfigError("per-node probabilities must lie in [0, 1]")

    @classmethod
    def uniform(cls, q: float) -> "MarkingConfig":
        return cls("uniform", q=q)

    @classmethod
    def cutoff(cls, q: float, h0: int) -> "MarkingConfig":
        return cls("cutoff", q=q, h0=h0)

    @classmethod
    def geometric(cls, alpha: float, h0: int) -> "MarkingConfig":
        return cls("geometric", alpha=alpha, h0=h0)

    @classmethod
    def deterministic(cls, q1: float = 1.0) -> "MarkingConfig":
        return cls("deterministic", q1=q1)

    @property
    def hop_dependent(self) -> bool:
        return self.scheme in ("cutoff", "geometric")

    def probability(self, position: int, hop_seen):
        """Re-marking probability at 1-based ``position`` for presented hop(s)."""
        if self.per_node is not None:
            q = self.per_node[position - 1] if position <= len(self.per_node) else 0.0
            return np.full(np.shape(hop_seen), q) if np.ndim(hop_seen) else q
        if self.scheme == "deterministic":
            q = self.q1 if position == 1 else 0.0
            return np.full(np.shape(hop_seen), q) if np.ndim(hop_seen) else q
        return marking_probability(self, hop_seen)


def marking_probability(config: MarkingConfig, hop_seen):
    """Probability that a node re-marks a packet presenting hop ``hop_seen``.

    ``hop_seen`` is the hop the packet would carry after this node, i.e. the
    current hop plus one; an unmarked packet presents 1.  Accepts a scalar or
    an array.
    """
    h = np.asarray(hop_seen)
    if config.scheme == "uniform":
        out = np.full(h.shape, config.q)
    elif config.scheme == "cutoff":
        out = np.where((h >= 1) & (h <= config.h0), config.q, 0.0)
    elif config.scheme == "geometric":
        out = np.where((h >= 1) & (h <= config.h0), config.alpha ** h.astype(float), 0.0)
    else:
        out = np.where(h == 1, config.q1, 0.0)
    return float(out) if out.ndim == 0 else out


class XSampler:
    """Draws x-values from GF(p)\\{0} without replacement.

    Early draws use rejection against the set of issued values; once half the
    field is used the remaining values are shuffled into a pool and consumed
    in order.  ``preset`` values are issued first (used by tests to force x).
    """

    def __init__(self, p: int, rng: np.random.Generator, preset: Iterable[int] = ()):
        self.p = p
        self.rng = rng
        self._preset = [int(v) for v in preset]
        self._used: set = set()
        self._pool: Optional[np.ndarray] = None
        self._pool_pos = 0

    @property
    def remaining(self) -> int:
        return self.p - 1 - len(self._used)

    def reset(self) -> None:
        self._used.clear()
        self._pool = None
        self._pool_pos = 0

    def force(self, values: Iterable[int]) -> None:
        self._preset.extend(int(v) for v in values)

    def draw(self) -> int:
        return int(self.draw_many(1)[0])

    def draw_many(self, k: int) -> np.ndarray:
        if k > self.remaining:
            raise XExhausted(f"only {self.remaining} unused x-values left")
        out: List[int] = []
        while self._preset and len(out) < k:
            v = self._preset.pop(0)
            self._claim(v)
            out.append(v)
        need = k - len(out)
        if need and self._pool is None and len(self._used) + need <= (self.p - 1) // 2:
            while need:
                for v in self.rng.integers(1, self.p, size=need + 8).tolist():
                    if v not in self._used:
                        self._used.add(v)
                        out.append(v)
                        need -= 1
                        if not need:
                            break
        if need:
            if self._pool is None:
                free = np.setdiff1d(np.arange(1, self.p, dtype=np.int64),
                                    np.fromiter(self._used, dtype=np.int64, count=len(self._used)))
                self._pool = self.rng.permutation(free)
                self._pool_pos = 0
            chunk = self._pool[self._pool_pos:self._pool_pos + need].tolist()
            self._pool_pos += need
            self._used.update(chunk)
            out.extend(chunk)
        return np.asarray(out, dtype=np.int64)

    def _claim(self, v: int) -> None:
        if not 0 < v < self.p:
            raise ValueError(f"x-value {v} outside 1..p-1")
        self._used.add(v)
        if self._pool is not None:
            # drop a forced value from the shuffled pool so it is not reissued
            rest = self._pool[self._pool_pos:]
            self._pool = rest[rest != v]
            self._pool_pos = 0


class NodeMarkerState:
    def __init__(self, node_id: int, ctx: FieldCtx, rng: np.random.Generator,
                 preset: Iterable[int] = ()):
        self.node_id = node_id
        self.ctx = ctx
        self.used_x = XSampler(ctx.p, rng, preset)

    def draw_x(self, k: int = 1) -> np.ndarray:
        try:
            return self.used_x.draw_many(k)
        except XExhausted:
            self.used_x.reset()
            raise


def init_mark(state: NodeMarkerState, rng=None) -> Packet:
    x = int(state.draw_x(1)[0])
    return Packet(1, 1, x, state.node_id % state.ctx.p)


def update_mark(pkt: Packet, node_id: int, ctx: FieldCtx) -> Packet:
    if pkt.flag != 1:
        raise UnmarkedPacket("only marked packets carry a value-pair to update")
    return Packet(1, pkt.hop + 1, pkt.x, (pkt.y * pkt.x + node_id) % ctx.p)


# -- batched traversal --------------------------------------------------------

class PacketBatch:
    """Column-oriented packet list; iterating yields :class:`Packet` objects."""

    def __init__(self, flag, hop, x, y, last_marker=None):
        self.flag = np.asarray(flag, dtype=np.int8)
        self.hop = np.asarray(hop, dtype=np.int64)
        self.x = np.asarray(x)
        self.y = np.asarray(y)
        self.last_marker = None if last_marker is None else np.asarray(last_marker)

    def __len__(self):
        return len(self.flag)

    def __getitem__(self, i) -> Packet:
        return Packet(int(self.flag[i]), int(self.hop[i]), int(self.x[i]), int(self.y[i]))

    def __iter__(self) -> Iterator[Packet]:
        for f, h, x, y in zip(self.flag.tolist(), self.hop.tolist(), self.x.tolist(), self.y.tolist()):
            yield Packet(f, h, x, y)

    def marked(self) -> "PacketBatch":
        m = self.flag == 1
        lm = None if self.last_marker is None else self.last_marker[m]
        return PacketBatch(self.flag[m], self.hop[m], self.x[m], self.y[m], lm)


def _marker(markers: Dict[int, NodeMarkerState], node_id: int, ctx, rng) -> NodeMarkerState:
    st = markers.get(node_id)
    if st is None:
        st = markers[node_id] = NodeMarkerState(node_id, ctx, rng)
    return st


def _draw_for(state: NodeMarkerState, k: int) -> np.ndarray:
    out = []
    while k:
        take = min(k, state.used_x.remaining)
        if take == 0:
            state.used_x.reset()
            continue
        out.append(state.used_x.draw_many(take))
        k -= take
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def traverse_deterministic(path: Path, n_packets: int, q1: float, rng: np.random.Generator,
                           ctx: FieldCtx, markers: Optional[Dict[int, NodeMarkerState]] = None
                           ) -> PacketBatch:
    """Send ``n_packets`` along ``path`` with only ``r_1`` initiating marks."""
    if n_packets < 1:
        raise ValueError("n_packets must be >= 1")
    markers = {} if markers is None else markers
    d = path.d
    marked = rng.random(n_packets) < q1
    k = int(marked.sum())
    x = np.zeros(n_packets, dtype=ctx.dtype)
    y = np.zeros(n_packets, dtype=ctx.dtype)
    if k:
        xs = _draw_for(_marker(markers, path.r(1), ctx, rng), k)
        x[marked] = xs
        y[marked] = np_horner(np.asarray(path.nodes, dtype=ctx.dtype), xs.astype(ctx.dtype), ctx)
    hop = np.full(n_packets, d, dtype=np.int64)
    last = np.where(marked, 1, 0)
    return PacketBatch(marked.astype(np.int8), hop, x, y, last)


def traverse_randomized(path: Path, n_packets: int, config: MarkingConfig, rng: np.random.Generator,
                        ctx: FieldCtx, markers: Optional[Dict[int, NodeMarkerState]] = None
                        ) -> PacketBatch:
    """Send ``n_packets`` through the clear-and-re-mark encoder.

    Nodes are visited in order and each applies its probability to the whole
    batch at once; ``last_marker`` records the 1-based position of the node
    whose mark survived (0 when unmarked).
    """
    if n_packets < 1:
        raise ValueError("n_packets must be >= 1")
    markers = {} if markers is None else markers
    p = ctx.p
    flag = np.zeros(n_packets, dtype=bool)
    hop = np.zeros(n_packets, dtype=np.int64)
    x = np.zeros(n_packets, dtype=ctx.dtype)
    y = np.zeros(n_packets, dtype=ctx.dtype)
    last = np.zeros(n_packets, dtype=np.int64)
    for i, r in enumerate(path.nodes, start=1):
        hop_seen = np.where(flag, hop + 1, 1)
        prob = config.probability(i, hop_seen)
        remark = rng.random(n_packets) < prob
        upd = flag & ~remark
        if upd.any():
            y[upd] = (y[upd] * x[upd] + r) % p
            hop[upd] += 1
        k = int(remark.sum())
        if k:
            x[remark] = _draw_for(_marker(markers, r, ctx, rng), k)
            y[remark] = r % p
            hop[remark] = 1
            flag |= remark
            last[remark] = i
    return PacketBatch(flag.astype(np.int8), hop, x, y, last)


# -- trace files --------------------------------------------------------------

TRACE_MAGIC = b"ATRC"
TRACE_VERSION = 1
_HEADER = struct.Struct("<4sHI")
_RECORD = struct.Struct("<BHII")


def pack_packet(pkt: Packet) -> bytes:
    return _RECORD.pack(pkt.flag, pkt.hop, pkt.x, pkt.y)


def unpack_packet(buf: bytes) -> Packet:
    return Packet(*_RECORD.unpack(buf))


def write_trace(fh: BinaryIO, packets: Iterable[Packet], ctx: FieldCtx) -> int:
    fh.write(_HEADER.pack(TRACE_MAGIC, TRACE_VERSION, ctx.p))
    n = 0
    for pkt in packets:
        fh.write(pack_packet(pkt))
        n += 1
    return n


def read_trace(fh: BinaryIO) -> tuple:
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise ValueError("truncated trace header")
    magic, version, p = _HEADER.unpack(head)
    if magic != TRACE_MAGIC:
        raise ValueError(f"bad trace magic {magic!r}")
    if version != TRACE_VERSION:
        raise ValueError(f"unsupported trace version {version}")
    packets = []
    while True:
        rec = fh.read(_RECORD.size)
        if not rec:
            break
        if len(rec) != _RECORD.size:
            raise ValueError("truncated packet record")
        packets.append(unpack_packet(rec))
    return FieldCtx(p), packets
