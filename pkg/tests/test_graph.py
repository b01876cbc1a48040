import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavdag.errors import CycleFound, NoVertexAhead, UnknownVertex, UnreachableDestination
from cavdag.graph import (WaypointGraph, backward_reachable, check_acyclic, extend_with_start,
                          extract_subgraph, forward_reachable, longest_path_length)

A, B, C, D = range(4)


@pytest.fixture
def fork():
    # a->b, a->c, c->d
    return WaypointGraph.build([(0, 0), (10, 5), (10, -5), (20, -5)], [(A, B), (A, C), (C, D)])


def _edge_pairs(graph, edges):
    return {(graph.edges[e].source, graph.edges[e].target) for e in edges}


def test_edge_lengths_are_euclidean():
    g = WaypointGraph.build([(0, 0), (3, 4), (3, 10)], [(0, 1), (1, 2)])
    assert g.edges[0].length == pytest.approx(5.0, abs=1e-9)
    assert g.edges[1].length == pytest.approx(6.0, abs=1e-9)


def test_adjacency_matches_endpoints(fork):
    for e in fork.edges:
        assert e.id in fork.out_adjacency[e.source]
        assert e.id in fork.in_adjacency[e.target]
    assert sum(map(len, fork.out_adjacency)) == len(fork.edges)


def test_duplicate_edges_collapse_and_self_loops_fail():
    g = WaypointGraph.build([(0, 0), (1, 0)], [(0, 1), (0, 1)])
    assert len(g.edges) == 1
    with pytest.raises(ValueError):
        WaypointGraph.build([(0, 0), (1, 0)], [(0, 0)])
    with pytest.raises(UnknownVertex):
        WaypointGraph.build([(0, 0), (1, 0)], [(0, 5)])


def test_topological_order_of_chain():
    g = WaypointGraph.build([(0, 0), (1, 0), (2, 0)], [(0, 1), (1, 2)])
    assert check_acyclic(g) == [0, 1, 2]


def test_single_vertex_order():
    assert check_acyclic(WaypointGraph.build([(0, 0)], [])) == [0]


def test_two_cycle_reported():
    g = WaypointGraph.build([(0, 0), (1, 0)], [(0, 1), (1, 0)])
    with pytest.raises(CycleFound) as info:
        check_acyclic(g)
    assert sorted(info.value.cycle) == [0, 1]


def test_reachable_sets(fork):
    assert forward_reachable(fork, A) == {A, B, C, D}
    assert backward_reachable(fork, D) == {A, C, D}


def test_isolated_vertex_reaches_itself():
    g = WaypointGraph.build([(0, 0), (1, 0), (5, 5)], [(0, 1)])
    assert forward_reachable(g, 2) == {2}
    assert backward_reachable(g, 2) == {2}


def test_unknown_vertex(fork):
    with pytest.raises(UnknownVertex):
        forward_reachable(fork, 99)


def test_extend_with_start_picks_nearest_ahead():
    g = WaypointGraph.build([(10, 0), (20, 0), (-10, 0)], [(2, 0), (0, 1)])
    g2, s = extend_with_start(g, (0, 0), 0.0, k=2)
    assert s == 3
    assert sorted(g2.successors(s)) == [0, 1]
    assert g2.predecessors(s) == []
    check_acyclic(g2)


def test_extend_with_start_on_existing_vertex():
    g = WaypointGraph.build([(0, 0), (10, 0), (20, 0)], [(0, 1), (1, 2)])
    g2, s = extend_with_start(g, (0, 0), 0.0, k=1)
    assert g2.position(s) == pytest.approx([0, 0])
    assert g2.successors(s) == [1]


def test_extend_with_start_nothing_ahead():
    g = WaypointGraph.build([(0, 0), (10, 0)], [(0, 1)])
    with pytest.raises(NoVertexAhead):
        extend_with_start(g, (20, 0), 0.0)


def test_extract_subgraph(fork):
    sub = extract_subgraph(fork, A, {D})
    assert sub.vertices == {A, C, D}
    assert _edge_pairs(fork, sub.edges) == {(A, C), (C, D)}


def test_extract_subgraph_start_is_destination(fork):
    sub = extract_subgraph(fork, D, {D})
    assert sub.vertices == {D}
    assert sub.edges == ()


def test_extract_subgraph_unreachable(fork):
    with pytest.raises(UnreachableDestination):
        extract_subgraph(fork, B, {D})


def test_longest_path_on_diamond():
    g = WaypointGraph.build([(0, 0), (10, 2), (10, -2), (20, 0), (30, 0)],
                            [(0, 1), (0, 2), (1, 3), (2, 3), (3, 4), (0, 3)])
    sub = extract_subgraph(g, 0, {4})
    assert longest_path_length(g, sub) == pytest.approx(2 * np.hypot(10, 2) + 10)


@st.composite
def random_dags(draw, max_n=200):
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    p = float(rng.uniform(0.0, min(1.0, 4.0 / n)))
    edges = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < p]
    # relabel so that ids are not already a topological order
    perm = rng.permutation(n)
    pos = rng.uniform(-100, 100, (n, 2))
    return WaypointGraph.build(pos, [(int(perm[a]), int(perm[b])) for a, b in edges]), rng


@settings(max_examples=40, deadline=None)
@given(random_dags())
def test_reachability_adjoint_and_matches_networkx(case):
    g, rng = case
    ref = nx.DiGraph()
    ref.add_nodes_from(range(g.n_vertices))
    ref.add_edges_from((e.source, e.target) for e in g.edges)
    fwd = {v: forward_reachable(g, v) for v in range(g.n_vertices)}
    bwd = {v: backward_reachable(g, v) for v in range(g.n_vertices)}
    for v in rng.choice(g.n_vertices, size=min(10, g.n_vertices), replace=False):
        v = int(v)
        assert fwd[v] == nx.descendants(ref, v) | {v}
        assert bwd[v] == nx.ancestors(ref, v) | {v}
    for v, w in itertools.islice(itertools.product(range(g.n_vertices), repeat=2), 5000):
        assert (w in fwd[v]) == (v in bwd[w])


@settings(max_examples=40, deadline=None)
@given(random_dags(max_n=60))
def test_topological_order_and_subgraph_paths(case):
    g, rng = case
    order = check_acyclic(g)
    rank = {v: k for k, v in enumerate(order)}
    assert all(rank[e.source] < rank[e.target] for e in g.edges)
    ref = nx.DiGraph()
    ref.add_nodes_from(range(g.n_vertices))
    ref.add_edges_from((e.source, e.target) for e in g.edges)
    s = int(rng.integers(g.n_vertices))
    des = {int(d) for d in rng.choice(g.n_vertices, size=min(3, g.n_vertices), replace=False)}
    if not any(nx.has_path(ref, s, d) for d in des):
        with pytest.raises(UnreachableDestination):
            extract_subgraph(g, s, des)
        return
    sub = extract_subgraph(g, s, des)
    inner = ref.subgraph(sub.vertices)
    assert nx.is_directed_acyclic_graph(inner)
    for v in sub.vertices:
        # every kept vertex lies on some start -> destination path
        assert nx.has_path(ref, s, v)
        assert any(nx.has_path(ref, v, d) for d in sub.destinations)
    for e in sub.edges:
        assert g.edges[e].source in sub.vertices and g.edges[e].target in sub.vertices


@settings(max_examples=30, deadline=None)
@given(random_dags(max_n=40), st.floats(-np.pi, np.pi), st.integers(1, 5))
def test_extension_keeps_acyclic(case, heading, k):
    g, rng = case
    try:
        g2, s = extend_with_start(g, rng.uniform(-120, 120, 2), heading, k=k)
    except NoVertexAhead:
        return
    check_acyclic(g2)
    assert len(g2.in_adjacency[s]) == 0
    assert 1 <= len(g2.out_adjacency[s]) <= k
