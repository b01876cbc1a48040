"""Directed acyclic waypoint graphs and per-vehicle subgraph extraction."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import CycleFound, NoVertexAhead, UnknownVertex, UnreachableDestination

DEFAULT_START_EDGES = 3


@dataclass(frozen=True)
class Vertex:
    id: int
    position: tuple[float, float]
    lane_tag: str | None = None


@dataclass(frozen=True)
class Edge:
    id: int
    source: int
    target: int
    length: float


@dataclass(frozen=True)
class WaypointGraph:
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    out_adjacency: tuple[tuple[int, ...], ...] = field(repr=False)
    in_adjacency: tuple[tuple[int, ...], ...] = field(repr=False)

    @classmethod
    def build(cls, positions: Sequence[Sequence[float]],
              edges: Iterable[tuple[int, int]],
              lane_tags: Sequence[str | None] | None = None) -> "WaypointGraph":
        """Create a graph from vertex positions and (source, target) pairs.

        Edge lengths are the Euclidean distances between endpoints. Duplicate
        edges are collapsed; self-loops are rejected.
        """
        pos = [tuple(float(c) for c in p) for p in positions]
        for p in pos:
            if len(p) != 2 or not all(np.isfinite(p)):
                raise ValueError(f"vertex position must be a finite 2-D point, got {p}")
        tags = list(lane_tags) if lane_tags is not None else [None] * len(pos)
        vertices = tuple(Vertex(i, p, tags[i]) for i, p in enumerate(pos))

        seen = set()
        edge_list = []
        for s, t in edges:
            s, t = int(s), int(t)
            for v in (s, t):
                if not 0 <= v < len(pos):
                    raise UnknownVertex(v)
            if s == t:
                raise ValueError(f"self-loop at vertex {s}")
            if (s, t) in seen:
                continue
            seen.add((s, t))
            length = float(np.hypot(pos[t][0] - pos[s][0], pos[t][1] - pos[s][1]))
            if length <= 0.0:
                raise ValueError(f"edge {s}->{t} has zero length")
            edge_list.append(Edge(len(edge_list), s, t, length))

        out_adj = [[] for _ in pos]
        in_adj = [[] for _ in pos]
        for e in edge_list:
            out_adj[e.source].append(e.id)
            in_adj[e.target].append(e.id)
        return cls(vertices, tuple(edge_list),
                   tuple(tuple(a) for a in out_adj), tuple(tuple(a) for a in in_adj))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def position(self, v: int) -> np.ndarray:
        self._check(v)
        return np.asarray(self.vertices[v].position, dtype=float)

    def edge_vector(self, e: int) -> np.ndarray:
        edge = self.edges[e]
        return self.position(edge.target) - self.position(edge.source)

    def successors(self, v: int) -> list[int]:
        return [self.edges[e].target for e in self.out_adjacency[v]]

    def predecessors(self, v: int) -> list[int]:
        return [self.edges[e].source for e in self.in_adjacency[v]]

    def _check(self, v: int) -> None:
        if not (isinstance(v, (int, np.integer)) and 0 <= v < len(self.vertices)):
            raise UnknownVertex(v)


def check_acyclic(graph: WaypointGraph) -> list[int]:
    """Return a topological order of the vertices, or raise CycleFound."""
    n = graph.n_vertices
    # iterative DFS with colouring so the cycle itself can be reported
    state = [0] * n  # 0 unvisited, 1 on stack, 2 done
    order: list[int] = []
    for root in range(n):
        if state[root]:
            continue
        stack = [(root, iter(graph.successors(root)))]
        path = [root]
        state[root] = 1
        while stack:
            v, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                path.pop()
                state[v] = 2
                order.append(v)
            elif state[nxt] == 1:
                raise CycleFound(path[path.index(nxt):])
            elif state[nxt] == 0:
                state[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(graph.successors(nxt))))
    order.reverse()
    return order


def _reach(graph: WaypointGraph, v: int, forward: bool) -> set[int]:
    graph._check(v)
    step = graph.successors if forward else graph.predecessors
    seen = {v}
    frontier = [v]
    while frontier:
        u = frontier.pop()
        for w in step(u):
            if w not in seen:
                seen.add(w)
                frontier.append(w)
    return seen


def forward_reachable(graph: WaypointGraph, v: int) -> set[int]:
    """Vertices reachable from ``v`` along directed edges, ``v`` included."""
    return _reach(graph, v, True)


def backward_reachable(graph: WaypointGraph, v: int) -> set[int]:
    """Vertices from which ``v`` is reachable, ``v`` included."""
    return _reach(graph, v, False)


def extend_with_start(graph: WaypointGraph, position: Sequence[float], heading: float,
                      k: int = DEFAULT_START_EDGES,
                      lane_tag: str | None = "start",
                      candidates: Iterable[int] | None = None) -> tuple[WaypointGraph, int]:
    """Add a vertex at a vehicle pose linked to the ``k`` nearest vertices ahead.

    A vertex is ahead when its displacement from the pose has a strictly
    positive projection onto the heading direction. ``candidates`` restricts
    the targets, e.g. to keep one vehicle's start off another's.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    p = np.asarray(position, dtype=float)
    h = np.array([np.cos(heading), np.sin(heading)])
    pool = graph.vertices if candidates is None else [graph.vertices[v] for v in candidates]
    ahead = []
    for vert in pool:
        d = np.asarray(vert.position) - p
        if float(d @ h) > 1e-12:
            ahead.append((float(np.hypot(*d)), vert.id))
    if not ahead:
        raise NoVertexAhead(f"no waypoint ahead of pose {tuple(p)} heading {heading}")
    ahead.sort()
    new_id = graph.n_vertices
    positions = [v.position for v in graph.vertices] + [tuple(p)]
    tags = [v.lane_tag for v in graph.vertices] + [lane_tag]
    pairs = [(e.source, e.target) for e in graph.edges]
    pairs += [(new_id, vid) for _, vid in ahead[:k]]
    return WaypointGraph.build(positions, pairs, tags), new_id


@dataclass(frozen=True)
class VehicleSubgraph:
    vehicle: int
    vertices: frozenset[int]
    edges: tuple[int, ...]
    start: int
    destinations: frozenset[int]

    @cached_property
    def edge_set(self) -> frozenset[int]:
        return frozenset(self.edges)

    def out_edges(self, graph: WaypointGraph, v: int) -> list[int]:
        return [e for e in graph.out_adjacency[v] if e in self.edge_set]

    def in_edges(self, graph: WaypointGraph, v: int) -> list[int]:
        return [e for e in graph.in_adjacency[v] if e in self.edge_set]

    @property
    def intermediate(self) -> list[int]:
        return sorted(v for v in self.vertices
                      if v != self.start and v not in self.destinations)


def extract_subgraph(graph: WaypointGraph, start: int, destinations: Iterable[int],
                     vehicle: int = 0) -> VehicleSubgraph:
    """Keep the vertices lying on some path from ``start`` to a destination."""
    des = set(destinations)
    graph._check(start)
    for d in des:
        graph._check(d)
    fwd = forward_reachable(graph, start)
    back: set[int] = set()
    for d in des:
        back |= backward_reachable(graph, d)
    verts = fwd & back
    kept_des = des & verts
    if not kept_des:
        raise UnreachableDestination(
            f"vehicle {vehicle}: no destination in {sorted(des)} reachable from {start}")
    edges = tuple(e.id for e in graph.edges if e.source in verts and e.target in verts)
    return VehicleSubgraph(vehicle, frozenset(verts), edges, start, frozenset(kept_des))


def path_length_bounds(graph: WaypointGraph, sub: VehicleSubgraph) -> tuple[dict, dict]:
    """Shortest and longest path length from the start to every subgraph vertex."""
    order = [v for v in check_acyclic(graph) if v in sub.vertices]
    short = {v: np.inf for v in order}
    long = {v: -np.inf for v in order}
    short[sub.start] = long[sub.start] = 0.0
    for v in order:
        if long[v] == -np.inf:
            continue
        for e in sub.out_edges(graph, v):
            edge = graph.edges[e]
            short[edge.target] = min(short[edge.target], short[v] + edge.length)
            long[edge.target] = max(long[edge.target], long[v] + edge.length)
    return short, long


def longest_path_length(graph: WaypointGraph, sub: VehicleSubgraph) -> float:
    """Length of the longest start-to-destination path inside a subgraph."""
    _, long = path_length_bounds(graph, sub)
    return max(long[d] for d in sub.destinations)
