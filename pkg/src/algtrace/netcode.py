"""Traceback over multipath and coded multicast graphs.

Graphs are DAGs of labelled nodes; every label carries a field ID used for
marking.  Only the marking channel is simulated, not coded payloads.
"""
from __future__ import annotations

import json
import logging
from collections import defaultdict, deque
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from itertools import combinations, islice
from typing import Dict, Hashable, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import (ConfigError, EmptyIntersection, InconsistentEvidence, InsufficientPairs,
                     NoPath)
from .field import FieldCtx, poly_eval_horner
from .marking import NodeMarkerState, Packet
from .reconstruct import interpolate_path

log = logging.getLogger(__name__)

Edge = Tuple[Hashable, Hashable]


@dataclass
class Dag:
    nodes: List[Hashable]
    edges: List[Edge]
    sources: List[Hashable]
    destinations: List[Hashable]
    ids: Dict[Hashable, int] = field(default_factory=dict)

    def __post_init__(self):
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            raise ConfigError("duplicate node label")
        for u, v in self.edges:
            if u not in known or v not in known:
                raise ConfigError(f"edge ({u}, {v}) uses an unknown node")
        if len(set(self.edges)) != len(self.edges):
            raise ConfigError("parallel edges are not supported")
        for n in self.nodes:
            self.ids.setdefault(n, n)
        try:
            self.order = list(TopologicalSorter({n: self.pred(n) for n in self.nodes}).static_order())
        except CycleError:
            raise ConfigError("graph has a cycle") from None
        for s in self.sources:
            reach = self.reachable(s)
            missing = [t for t in self.destinations if t not in reach]
            if missing:
                raise ConfigError(f"destinations {missing} unreachable from {s}")

    def succ(self, u) -> List[Hashable]:
        return [v for a, v in self.edges if a == u]

    def pred(self, v) -> List[Hashable]:
        return [u for u, b in self.edges if b == v]

    def reachable(self, s) -> Set[Hashable]:
        seen, todo = {s}, [s]
        while todo:
            for v in self.succ(todo.pop()):
                if v not in seen:
                    seen.add(v)
                    todo.append(v)
        return seen

    def is_path(self, labels: Sequence[Hashable]) -> bool:
        es = set(self.edges)
        return all((u, v) in es for u, v in zip(labels, labels[1:]))

    @classmethod
    def from_json(cls, text: str) -> "Dag":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        try:
            return cls([int(n) for n in doc["nodes"]],
                       [(int(u), int(v)) for u, v in doc["edges"]],
                       [int(s) for s in doc["sources"]],
                       [int(t) for t in doc["destinations"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad graph document: {exc!r}") from None


def butterfly() -> Dag:
    """The two-source-edge, two-sink butterfly with A as the coding node."""
    labels = ["S", "C", "E", "A", "B", "D1", "D2"]
    edges = [("S", "C"), ("S", "E"), ("C", "A"), ("E", "A"), ("A", "B"),
             ("B", "D1"), ("B", "D2"), ("C", "D1"), ("E", "D2")]
    # small IDs so the topology also works over tiny fields
    ids = {n: i + 1 for i, n in enumerate(labels)}
    return Dag(labels, edges, ["S"], ["D1", "D2"], ids)


# -- max-flow path decomposition ----------------------------------------------

def decompose_paths(dag: Dag, s, t) -> List[List[Hashable]]:
    """Edge-disjoint ``s -> t`` paths, as many as the min cut, by Edmonds-Karp."""
    if s == t:
        raise ValueError("source and sink must differ")
    cap: Dict[Hashable, Dict[Hashable, int]] = defaultdict(dict)
    for u, v in dag.edges:
        cap[u][v] = cap[u].get(v, 0) + 1
        cap[v].setdefault(u, 0)
    flow = 0
    while True:
        parent = {s: None}
        queue = deque([s])
        while queue and t not in parent:
            u = queue.popleft()
            for v, c in cap[u].items():
                if c > 0 and v not in parent:
                    parent[v] = u
                    queue.append(v)
        if t not in parent:
            break
        v = t
        while parent[v] is not None:
            u = parent[v]
            cap[u][v] -= 1
            cap[v][u] += 1
            v = u
        flow += 1
    if flow == 0:
        raise NoPath(f"no path from {s} to {t}")
    # an original edge carries flow iff its residual capacity dropped to 0
    used = defaultdict(list)
    for u, v in dag.edges:
        if cap[u][v] == 0:
            used[u].append(v)
    paths = []
    for _ in range(flow):
        path, u = [s], s
        while u != t:
            u = used[path[-1]].pop(0)
            path.append(u)
        paths.append(path)
    return paths


# -- coded forwarding ----------------------------------------------------------------

def coding_node_forward(incoming: Sequence[Tuple[int, int]], node_id: int, slot: int,
                        ctx: FieldCtx, rng: Optional[np.random.Generator] = None) -> Tuple[int, int]:
    """Pick one incoming value-pair and apply this node's marking update.

    The pick cycles through the inputs with the slot number, so with two
    inputs consecutive slots alternate.  Passing ``rng`` picks uniformly.
    """
    if not incoming:
        raise ValueError("coding node needs at least one incoming pair")
    if rng is not None:
        i = int(rng.integers(len(incoming)))
    else:
        i = slot % len(incoming)
    x, y = incoming[i]
    return x, (y * x + node_id) % ctx.p


@dataclass(frozen=True)
class Observation:
    edge: Edge
    packet: Packet


def run_multicast(dag: Dag, n_slots: int, ctx: FieldCtx, rng: np.random.Generator,
                  random_selection: bool = False) -> Dict[Hashable, List[Observation]]:
    """Send one marked packet per source out-edge per slot; return arrivals per destination.

    Sources start a fresh mark on every out-edge.  Interior nodes forward to
    all out-edges; nodes with several inputs choose one via
    :func:`coding_node_forward`.  Destinations do not mark.
    """
    markers = {s: NodeMarkerState(dag.ids[s], ctx, rng) for s in dag.sources}
    dests = set(dag.destinations)
    seen: Dict[Hashable, List[Observation]] = {t: [] for t in dag.destinations}
    for slot in range(n_slots):
        inbox: Dict[Hashable, List[Tuple[Hashable, Packet]]] = defaultdict(list)
        for u in dag.order:
            if u in dests:
                for src, pkt in inbox[u]:
                    seen[u].append(Observation((src, u), pkt))
                continue
            if u in markers:
                for v in dag.succ(u):
                    x = int(markers[u].draw_x()[0])
                    inbox[v].append((u, Packet(1, 1, x, dag.ids[u] % ctx.p)))
                continue
            arrivals = sorted(inbox[u], key=lambda a: dag.order.index(a[0]))
            if not arrivals:
                continue
            pairs = [(pk.x, pk.y) for _, pk in arrivals]
            sel = rng if random_selection else None
            x, y = coding_node_forward(pairs, dag.ids[u] % ctx.p, slot, ctx, sel)
            hop = next(pk.hop for _, pk in arrivals if pk.x == x) + 1
            for v in dag.succ(u):
                inbox[v].append((u, Packet(1, hop, x, y)))
    return seen


# -- destination-side reconstruction --------------------------------------------

def _split_group(pairs: List[Tuple[int, int]], d: int, ctx: FieldCtx, max_tries: int = 20000):
    """Peel off polynomials of degree < d supported by at least d+1 pairs."""
    found = []
    rest = list(pairs)
    while len(rest) >= d + 1:
        hit = None
        for combo in islice(combinations(range(len(rest)), d), max_tries):
            try:
                path = interpolate_path([rest[i] for i in combo], d, ctx)
            except InconsistentEvidence:
                continue
            support = [i for i, (x, y) in enumerate(rest) if poly_eval_horner(path.nodes, x, ctx) == y]
            if len(support) >= d + 1:
                hit = path, set(support)
                break
        if hit is None:
            break
        found.append(hit[0])
        rest = [pr for i, pr in enumerate(rest) if i not in hit[1]]
    return found, rest


def _labels_for(dag: Dag, ids: Sequence[int], last: Hashable, dest: Hashable, ctx: FieldCtx):
    """Map a recovered ID sequence back to a DAG path ending ``last -> dest``."""
    by_id = defaultdict(list)
    for n in dag.nodes:
        by_id[dag.ids[n] % ctx.p].append(n)
    out = []

    def walk(i, prefix):
        if i == len(ids):
            if prefix[-1] == last:
                out.append(tuple(prefix) + (dest,))
            return
        for n in by_id.get(ids[i], ()):
            if not prefix or (prefix[-1], n) in edges:
                walk(i + 1, prefix + [n])

    edges = set(dag.edges)
    walk(0, [])
    return out


def trace_subgraph(observations: Iterable[Observation], dag: Dag, dest, ctx: FieldCtx) -> Set[tuple]:
    """Recover every source-to-``dest`` route seen in the observations.

    Arrivals are grouped by (last edge, hop) and each group interpolated.
    A group holding marks from several upstream branches is split into
    polynomials that each explain at least hop+1 pairs.  Every recovered
    route is checked to be a real path of ``dag``.
    """
    groups: Dict[Tuple[Edge, int], Dict[int, int]] = defaultdict(dict)
    for ob in observations:
        if ob.packet.flag:
            groups[(ob.edge, ob.packet.hop)].setdefault(ob.packet.x, ob.packet.y)
    routes: Set[tuple] = set()
    for (edge, hop), pts in sorted(groups.items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        pairs = list(pts.items())
        if len(pairs) < hop:
            raise InsufficientPairs(f"edge {edge} hop {hop}: {len(pairs)} pairs", hop=hop)
        if len(pairs) == hop:
            paths, rest = [interpolate_path(pairs, hop, ctx)], []
        else:
            paths, rest = _split_group(pairs, hop, ctx)
        if not paths:
            raise InconsistentEvidence(f"edge {edge} hop {hop}: no consistent route")
        if rest:
            log.warning("edge %s hop %d: %d pairs fit no recovered route", edge, hop, len(rest))
        for path in paths:
            labels = _labels_for(dag, path.nodes, edge[0], dest, ctx)
            if not labels:
                raise InconsistentEvidence(f"recovered IDs {path.nodes} are not a route of the graph")
            routes.update(labels)
    return routes


def virtual_split(dag: Dag, source) -> Tuple[Dag, Dict[Hashable, Hashable]]:
    """Unfold ``dag`` into the tree of all routes from ``source``.

    Each virtual node is the route prefix reaching it, so every virtual node
    has one input and plain routing reaches each destination once per route.
    Returns the tree and the map from virtual node to real node.
    """
    nodes, edges, origin = [], [], {}
    todo = [(source,)]
    while todo:
        pre = todo.pop()
        nodes.append(pre)
        origin[pre] = pre[-1]
        for v in dag.succ(pre[-1]):
            nxt = pre + (v,)
            edges.append((pre, nxt))
            todo.append(nxt)
    dests = [n for n in nodes if n[-1] in set(dag.destinations)]
    ids = {n: dag.ids[n[-1]] for n in nodes}
    tree = Dag(nodes, edges, [(source,)], dests, ids)
    return tree, origin


def routes_via_virtual_split(dag: Dag, n_slots: int, ctx: FieldCtx,
                             rng: np.random.Generator) -> Dict[Hashable, Set[tuple]]:
    """Route (no coding) over the unfolded graph and map recovered routes back."""
    out: Dict[Hashable, Set[tuple]] = {t: set() for t in dag.destinations}
    for s in dag.sources:
        tree, origin = virtual_split(dag, s)
        seen = run_multicast(tree, n_slots, ctx, rng)
        for vt, obs in seen.items():
            for route in trace_subgraph(obs, tree, vt, ctx):
                out[origin[vt]].add(tuple(origin[n] for n in route))
    return out


def coded_routes(dag: Dag, n_slots: int, ctx: FieldCtx, rng: np.random.Generator,
                 random_selection: bool = False) -> Dict[Hashable, Set[tuple]]:
    seen = run_multicast(dag, n_slots, ctx, rng, random_selection)
    return {t: trace_subgraph(obs, dag, t, ctx) for t, obs in seen.items()}


def intersect_failure_subgraphs(failed: Sequence[Iterable]) -> set:
    """Nodes common to every failed slot's subgraph."""
    if not failed:
        raise ValueError("need at least one failed-slot subgraph")
    common = set(failed[0])
    for s in failed[1:]:
        common &= set(s)
    if not common:
        raise EmptyIntersection("no single node is present in every failed subgraph")
    return common
