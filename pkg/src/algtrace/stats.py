"""Closed-form marking statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

from .errors import DegenerateScheme
from .marking import MarkingConfig


def safe_ceil(v: float) -> int:
    # Ratios that are integral in exact arithmetic (e.g. d=1) must not round up
    # on floating noise.
    return math.ceil(v - 1e-9 * max(1.0, abs(v)))


@dataclass(frozen=True)
class MarkingStats:
    """``f[i]`` is the fraction of packets whose surviving mark came from ``r_i``;
    ``f[0]`` is the unmarked fraction."""

    f: tuple
    d: int

    @property
    def f0(self) -> float:
        return self.f[0]

    @property
    def f1(self) -> float:
        return self.f[1]

    @property
    def ratio(self) -> float:
        if self.f1 == 0:
            return math.inf
        return (1.0 - self.f0) / self.f1

    @property
    def full_path_share(self) -> float:
        """Share of *marked* packets carrying a full-path mark."""
        marked = 1.0 - self.f0
        return self.f1 / marked if marked > 0 else 0.0


def position_probabilities(config: MarkingConfig, d: int) -> list:
    # Node r_i is charged q at the hop a mark started at r_1 would present, i.e. q(i).
    return [float(config.probability(i, i)) for i in range(1, d + 1)]


def fractions(config: MarkingConfig, d: int) -> MarkingStats:
    if d < 1:
        raise ValueError("d must be >= 1")
    q = position_probabilities(config, d)
    f = [0.0] * (d + 1)
    survive = 1.0
    for i in range(d, 0, -1):
        f[i] = q[i - 1] * survive
        survive *= 1.0 - q[i - 1]
    f[0] = survive
    return MarkingStats(tuple(f), d)


def avg_marked_for_full_trace(stats: MarkingStats, d: int) -> int:
    """Average marked packets needed before ``d`` full-path marks have arrived."""
    if stats.f1 <= 0:
        raise DegenerateScheme("the first node never contributes a surviving mark")
    return d * safe_ceil(stats.ratio)


def worst_case_stats(config: MarkingConfig, d: int) -> MarkingStats:
    if d < 2:
        raise ValueError("worst-case ratio needs d >= 2")
    best = None
    for n in (d - 1, d, d + 1):
        st = fractions(config, n)
        if best is None or st.ratio > best.ratio:
            best = st
    return best


def worst_case_ratio(config: MarkingConfig, d: int) -> Tuple[float, float]:
    """``(F0, F1)``: the path-length hypothesis among d-1, d, d+1 with the largest
    ``(1-f0)/f1``."""
    st = worst_case_stats(config, d)
    return st.f0, st.f1


def detection_window(config: MarkingConfig, d: int, l: int) -> int:
    """Marked packets to buffer before running the randomized change detector."""
    if d < 2:
        return l * safe_ceil(fractions(config, max(d, 1) + 1).ratio)
    F0, F1 = worst_case_ratio(config, d)
    if F1 <= 0:
        raise DegenerateScheme("worst-case first-node fraction is zero")
    return l * safe_ceil((1.0 - F0) / F1)


def absence_horizon(stats: MarkingStats, false_alarm: float) -> int:
    """Marked packets without a full-path mark after which losing ``r_1`` is
    declared; under no change such a gap has probability ``false_alarm``."""
    share = stats.full_path_share
    if share <= 0:
        raise DegenerateScheme("full-path marks never occur")
    if share >= 1:
        return 1
    return math.ceil(math.log(false_alarm) / math.log1p(-share))
