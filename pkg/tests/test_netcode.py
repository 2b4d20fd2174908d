import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from algtrace.errors import ConfigError, EmptyIntersection, NoPath
from algtrace.field import FieldCtx
from algtrace.marking import Packet
from algtrace.netcode import (Dag, Observation, butterfly, coded_routes, coding_node_forward,
                              decompose_paths, intersect_failure_subgraphs, routes_via_virtual_split,
                              run_multicast, trace_subgraph, virtual_split)
from algtrace.field import poly_eval_horner

CTX = FieldCtx()


def names(paths):
    return {"".join(p) for p in paths}


def test_butterfly_decomposition():
    g = butterfly()
    assert names(decompose_paths(g, "S", "D1")) == {"SCD1", "SEABD1"}
    assert names(decompose_paths(g, "S", "D2")) == {"SED2", "SCABD2"}


def test_trivial_decompositions():
    g = Dag([1, 2], [(1, 2)], [1], [2])
    assert decompose_paths(g, 1, 2) == [[1, 2]]
    g = Dag([1, 2, 3, 4], [(1, 2), (2, 4), (1, 3), (3, 4)], [1], [4])
    paths = decompose_paths(g, 1, 4)
    assert sorted(paths) == [[1, 2, 4], [1, 3, 4]]
    with pytest.raises(NoPath):
        decompose_paths(Dag([1, 2, 3], [(1, 2)], [1], [2]), 1, 3)
    with pytest.raises(ValueError):
        decompose_paths(g, 1, 1)


@st.composite
def small_dags(draw):
    n = draw(st.integers(2, 9))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True, min_size=1, max_size=len(pairs)))
    return n, edges


@given(small_dags())
def test_decomposition_matches_max_flow(g):
    n, edges = g
    G = nx.DiGraph()
    G.add_nodes_from(range(n))
    G.add_edges_from(edges, capacity=1)
    s, t = 0, n - 1
    flow = nx.maximum_flow_value(G, s, t) if nx.has_path(G, s, t) else 0
    dag = Dag(list(range(n)), edges, [], [])
    if flow == 0:
        with pytest.raises(NoPath):
            decompose_paths(dag, s, t)
        return
    paths = decompose_paths(dag, s, t)
    assert len(paths) == flow
    used = [e for p in paths for e in zip(p, p[1:])]
    assert len(used) == len(set(used))
    assert all(p[0] == s and p[-1] == t and dag.is_path(p) for p in paths)


def test_dag_validation():
    with pytest.raises(ConfigError):
        Dag([1, 2], [(1, 2), (2, 1)], [1], [2])
    with pytest.raises(ConfigError):
        Dag([1, 2, 3], [(1, 2)], [1], [3])
    with pytest.raises(ConfigError):
        Dag([1, 2], [(1, 5)], [1], [2])
    g = Dag.from_json('{"nodes": [1, 2, 3], "edges": [[1, 2], [2, 3]], "sources": [1], "destinations": [3]}')
    assert g.order == [1, 2, 3]
    with pytest.raises(ConfigError, match="line 1"):
        Dag.from_json('{"nodes": [1,}')
    with pytest.raises(ConfigError):
        Dag.from_json('{"nodes": [1]}')


def test_coding_node_selection(f11):
    assert coding_node_forward([(3, 5)], 4, 7, f11) == (3, (5 * 3 + 4) % 11)
    g = butterfly()
    a = g.ids["A"]
    c_side, e_side = (2, 9), (6, 1)
    assert coding_node_forward([c_side, e_side], a, 0, f11) == (2, (9 * 2 + a) % 11)
    assert coding_node_forward([c_side, e_side], a, 1, f11) == (6, (1 * 6 + a) % 11)
    n = 50
    picks = [coding_node_forward([c_side, e_side], a, slot, f11)[0] for slot in range(2 * n)]
    assert picks.count(2) == n and picks.count(6) == n
    rng = np.random.default_rng(0)
    rnd = [coding_node_forward([c_side, e_side], a, 0, f11, rng)[0] for _ in range(200)]
    assert 0 < rnd.count(2) < 200
    with pytest.raises(ValueError):
        coding_node_forward([], 1, 0, f11)


def test_butterfly_route_sets_over_seeds():
    want = {"D1": {"SCD1", "SEABD1", "SCABD1"}, "D2": {"SED2", "SCABD2", "SEABD2"}}
    for seed in range(10):
        got = coded_routes(butterfly(), 30, CTX, np.random.default_rng(seed))
        assert {k: names(v) for k, v in got.items()} == want
    rand = coded_routes(butterfly(), 60, CTX, np.random.default_rng(1), random_selection=True)
    assert {k: names(v) for k, v in rand.items()} == want


def test_recovered_routes_are_graph_paths():
    g = butterfly()
    for routes in coded_routes(g, 30, CTX, np.random.default_rng(3)).values():
        assert all(g.is_path(r) for r in routes)


def test_virtual_split_equivalence():
    g = butterfly()
    tree, origin = virtual_split(g, "S")
    assert all(len(tree.pred(n)) <= 1 for n in tree.nodes)
    assert len(tree.destinations) == 6
    for seed in range(3):
        coded = coded_routes(g, 30, CTX, np.random.default_rng(seed))
        virtual = routes_via_virtual_split(g, 30, CTX, np.random.default_rng(seed))
        assert coded == virtual


def test_unicast_reduces_to_plain_trace():
    g = Dag([10, 20, 30, 40], [(10, 20), (20, 30), (30, 40)], [10], [40])
    seen = run_multicast(g, 5, CTX, np.random.default_rng(2))
    assert trace_subgraph(seen[40], g, 40, CTX) == {(10, 20, 30, 40)}
    for ob in seen[40]:
        assert ob.packet.hop == 3 and ob.packet.y == poly_eval_horner([10, 20, 30], ob.packet.x, CTX)


def test_trace_reports_missing_pairs():
    from algtrace.errors import InsufficientPairs

    g = Dag([10, 20, 30], [(10, 20), (20, 30)], [10], [30])
    with pytest.raises(InsufficientPairs):
        trace_subgraph([Observation((20, 30), Packet(1, 2, 3, 4))], g, 30, CTX)


def test_failure_intersection():
    assert intersect_failure_subgraphs([{"A", "B", "C"}, {"A", "B", "E"}]) == {"A", "B"}
    assert intersect_failure_subgraphs([{"A"}]) == {"A"}
    with pytest.raises(EmptyIntersection):
        intersect_failure_subgraphs([{"A"}, {"B"}])
    with pytest.raises(ValueError):
        intersect_failure_subgraphs([])
