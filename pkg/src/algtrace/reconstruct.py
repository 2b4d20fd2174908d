"""Full-path traceback from marked packets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DuplicateX, InconsistentEvidence, InsufficientPairs
from .field import FieldCtx, poly_eval_horner
from .marking import Packet
from .path_model import Path


@dataclass
class EvaluationSet:
    hop: int
    pairs: List[Tuple[int, int]] = field(default_factory=list)
    dropped: int = 0
    _seen: set = field(default_factory=set, repr=False)

    def add(self, x: int, y: int) -> bool:
        if x in self._seen:
            self.dropped += 1
            return False
        self._seen.add(x)
        self.pairs.append((x, y))
        return True

    def __len__(self):
        return len(self.pairs)


def segregate_by_hopcount(packets: Iterable[Packet]) -> Dict[int, EvaluationSet]:
    """Bucket marked packets by hop; a repeated x inside a bucket keeps the first pair."""
    buckets: Dict[int, EvaluationSet] = {}
    for pkt in packets:
        if pkt.flag != 1:
            raise ValueError("segregate_by_hopcount expects marked packets only")
        bucket = buckets.get(pkt.hop)
        if bucket is None:
            bucket = buckets[pkt.hop] = EvaluationSet(pkt.hop)
        bucket.add(pkt.x, pkt.y)
    return buckets


def newton_coefficients(xs: Sequence[int], ys: Sequence[int], ctx: FieldCtx) -> List[int]:
    """Monomial coefficients (constant term first) of the interpolating polynomial.

    Divided differences give the Newton form in O(n^2); it is then expanded
    to the monomial basis, also O(n^2).  Each divided-difference level and
    each expansion step is one vector operation.
    """
    p = ctx.p
    n = len(xs)
    x = np.asarray(xs, dtype=ctx.dtype) % p
    c = np.asarray(ys, dtype=ctx.dtype) % p
    if len(np.unique(x)) != n:
        raise DuplicateX("repeated x-value")
    if n > 1:
        # every denominator x_i - x_{i-j} inverted in one pass; level j reads
        # the j-th subdiagonal
        diff = (x[:, None] - x[None, :]) % p
        np.fill_diagonal(diff, 1)
        inv = ctx.inv_array(diff)
    for j in range(1, n):
        c[j:] = (c[j:] - c[j - 1:-1]) % p * np.diagonal(inv, -j) % p
    coeffs = np.zeros(n, dtype=ctx.dtype)
    coeffs[0] = c[n - 1]
    for k in range(n - 2, -1, -1):
        # coeffs <- coeffs * (X - x_k) + c_k on the low n-k entries
        w = n - 1 - k
        head = coeffs[:w] * x[k]
        coeffs[1:w + 1] = coeffs[:w]
        coeffs[0] = c[k]
        coeffs[:w] -= head
        coeffs[:w] %= p
    return [int(v) for v in coeffs]


def interpolate_path(pairs, d: int, ctx: FieldCtx) -> Path:
    """Recover ``(r_1 .. r_d)`` from value-pairs of a hop-``d`` mark.

    The first ``d`` pairs determine the polynomial; any further pairs must lie
    on it, otherwise :class:`InconsistentEvidence` is raised.
    """
    if isinstance(pairs, EvaluationSet):
        pairs = pairs.pairs
    pairs = [(int(x) % ctx.p, int(y) % ctx.p) for x, y in pairs]
    if len(pairs) < d:
        raise InsufficientPairs(f"need {d} value-pairs, have {len(pairs)}", hop=d)
    xs = [x for x, _ in pairs[:d]]
    if len(set(xs)) != d:
        raise DuplicateX("value-pairs used for interpolation must have distinct x")
    coeffs = newton_coefficients(xs, [y for _, y in pairs[:d]], ctx)
    nodes = list(reversed(coeffs))
    for x, y in pairs[d:]:
        if poly_eval_horner(nodes, x, ctx) != y:
            raise InconsistentEvidence(f"pair ({x}, {y}) does not fit the recovered path")
    return Path(nodes)


def reconstruct_randomized(packets: Iterable[Packet], ctx: FieldCtx, d: Optional[int] = None,
                           cross_check: bool = True) -> Path:
    """Rebuild the path from the bucket at the largest hop (or at ``d``).

    With ``cross_check`` every lower bucket holding enough pairs is
    interpolated too and must equal the matching suffix.
    """
    buckets = segregate_by_hopcount(p for p in packets if p.flag == 1)
    if d is None:
        if not buckets:
            raise InsufficientPairs("no marked packets", hop=None)
        d = max(buckets)
    top = buckets.get(d)
    if top is None or len(top) < d:
        have = 0 if top is None else len(top)
        raise InsufficientPairs(f"hop-{d} bucket has {have} distinct pairs, needs {d}", hop=d)
    path = interpolate_path(top, d, ctx)
    if cross_check:
        for h, bucket in buckets.items():
            if h >= d:
                if h > d:
                    raise InconsistentEvidence(f"marks with hop {h} exceed the claimed length {d}")
                continue
            if len(bucket) >= h:
                sub = interpolate_path(bucket, h, ctx)
                if sub.nodes != path.nodes[d - h:]:
                    raise InconsistentEvidence(f"hop-{h} bucket disagrees with the path suffix")
    return path
