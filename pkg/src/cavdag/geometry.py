"""Swept regions, critical edge pairs and their one-dimensional projections."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import NoOverlap
from .graph import VehicleSubgraph, WaypointGraph

GRID_STEP = 0.01
BISECT_TOL = 1e-4
_TOUCH_EPS = 1e-9


@dataclass(frozen=True)
class Footprint:
    length: float
    width: float

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"footprint dimensions must be positive, got {self}")


def _frame(p1, p2):
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    d = p2 - p1
    length = float(np.hypot(*d))
    if length <= 0:
        raise ValueError("degenerate segment")
    u = d / length
    return p1, p2, u, np.array([-u[1], u[0]]), length


def rectangle(center, direction, length: float, width: float) -> np.ndarray:
    """Counter-clockwise corners of an oriented rectangle."""
    c = np.asarray(center, dtype=float)
    u = np.asarray(direction, dtype=float)
    u = u / np.hypot(*u)
    n = np.array([-u[1], u[0]])
    hl, hw = length / 2.0, width / 2.0
    return np.array([c - hl * u - hw * n, c + hl * u - hw * n,
                     c + hl * u + hw * n, c - hl * u + hw * n])


def swept_region(p1, p2, footprint: Footprint) -> np.ndarray:
    """Rectangle covered by a footprint aligned with p1->p2 travelling along it."""
    p1, p2, u, _, length = _frame(p1, p2)
    return rectangle((p1 + p2) / 2.0, u, length + footprint.length, footprint.width)


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _axes(poly: np.ndarray) -> np.ndarray:
    edges = np.roll(poly, -1, axis=0) - poly
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
    norms = np.hypot(normals[:, 0], normals[:, 1])
    return normals[norms > 0] / norms[norms > 0, None]


def polygons_intersect(a: np.ndarray, b: np.ndarray, eps: float = _TOUCH_EPS) -> bool:
    """Separating-axis test for convex polygons; touching counts as contact."""
    for axis in np.vstack([_axes(a), _axes(b)]):
        pa, pb = a @ axis, b @ axis
        if pa.max() < pb.min() - eps or pb.max() < pa.min() - eps:
            return False
    return True


def _hits_along(p1, p2, footprint: Footprint, region: np.ndarray,
                thetas: np.ndarray) -> np.ndarray:
    """Vectorised SAT: does the footprint at each theta on p1->p2 touch ``region``?"""
    p1, p2, u, _, _ = _frame(p1, p2)
    base = rectangle(p1, u, footprint.length, footprint.width)
    shift = p2 - p1
    hit = np.ones(thetas.shape, dtype=bool)
    for axis in np.vstack([_axes(base), _axes(region)]):
        pf = base @ axis
        pr = region @ axis
        offset = thetas * float(shift @ axis)
        hit &= (pf.max() + offset >= pr.min() - _TOUCH_EPS) & \
               (pr.max() >= pf.min() + offset - _TOUCH_EPS)
    return hit


def critical_region(p1, p2, footprint: Footprint, region: np.ndarray,
                    step: float = GRID_STEP, tol: float = BISECT_TOL) -> tuple[float, float]:
    """Smallest and largest edge fraction at which the footprint touches ``region``.

    The grid is refined by bisection; the returned bounds are taken on the
    non-touching side so the interval never under-covers the contact set.
    """
    n = int(round(1.0 / step))
    grid = np.linspace(0.0, 1.0, n + 1)
    hits = _hits_along(p1, p2, footprint, region, grid)
    if not hits.any():
        # contact set may be thinner than the grid step
        grid = np.linspace(0.0, 1.0, int(round(1.0 / tol)) + 1)
        hits = _hits_along(p1, p2, footprint, region, grid)
        if not hits.any():
            raise NoOverlap("footprint never touches the partner swept region")
        idx = np.flatnonzero(hits)
        return (float(max(grid[idx[0]] - tol, 0.0)), float(min(grid[idx[-1]] + tol, 1.0)))

    def hit(theta):
        return bool(_hits_along(p1, p2, footprint, region, np.array([theta]))[0])

    def refine(inside, outside):
        while abs(outside - inside) > tol:
            mid = 0.5 * (inside + outside)
            if hit(mid):
                inside = mid
            else:
                outside = mid
        return outside

    idx = np.flatnonzero(hits)
    lo = 0.0 if idx[0] == 0 else refine(grid[idx[0]], grid[idx[0] - 1])
    hi = 1.0 if idx[-1] == n else refine(grid[idx[-1]], grid[idx[-1] + 1])
    return float(lo), float(hi)


def brute_force_region(p1, p2, footprint: Footprint, region: np.ndarray,
                       step: float = 1e-5) -> tuple[float, float] | None:
    """Dense-grid reference for :func:`critical_region`."""
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    hits = _hits_along(p1, p2, footprint, region, grid)
    if not hits.any():
        return None
    idx = np.flatnonzero(hits)
    return float(grid[idx[0]]), float(grid[idx[-1]])


def projected_length(footprint: Footprint, phi: float) -> float:
    """Width of a rectangle's shadow on an axis at angle ``phi`` to its heading."""
    return footprint.length * abs(math.cos(phi)) + footprint.width * abs(math.sin(phi))


def angle_between(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    c = float(u @ v) / (np.hypot(*u) * np.hypot(*v))
    return math.acos(min(1.0, max(-1.0, c)))


@dataclass(frozen=True)
class CriticalEdgePair:
    """Geometry of vehicle ``i`` on ``edge_i`` against vehicle ``j`` on ``edge_j``.

    Coordinates ``s1, s2`` (own critical region) and ``s_hat1, s_hat2``
    (partner critical region) are measured along ``edge_i`` from its source.
    """
    i: int
    edge_i: int
    j: int
    edge_j: int
    theta_i: tuple[float, float]
    theta_j: tuple[float, float]
    s1: float = 0.0
    s2: float = 0.0
    s_hat1: float = 0.0
    s_hat2: float = 0.0
    projected_length: float = 0.0
    safety_distance: float = 0.0
    phi: float = 0.0

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.i, self.edge_i, self.j, self.edge_j)

    @property
    def same_direction(self) -> bool:
        """True for the acute-angle case; perpendicular and beyond count as opposed."""
        return self.phi < math.pi / 2

    def bounds_hold(self, tol: float = 1e-6) -> bool:
        """Whether the entry/exit containment bounds used by the parallelogram rows hold."""
        d = self.safety_distance
        if self.same_direction:
            return (self.s_hat1 - d - tol <= self.s1 <= self.s_hat1 + d + tol
                    and self.s_hat2 - d - tol <= self.s2 <= self.s_hat2 + d + tol)
        return (self.s_hat2 - d - tol <= self.s1 <= self.s_hat2 + d + tol
                and self.s_hat1 - d - tol <= self.s2 <= self.s_hat1 + d + tol)


def project_pair(pair: CriticalEdgePair, graph: WaypointGraph,
                 footprints: Mapping[int, Footprint]) -> CriticalEdgePair:
    """Fill projected coordinates and the equivalent safety distance."""
    ei, ej = graph.edges[pair.edge_i], graph.edges[pair.edge_j]
    pi1, pi2 = graph.position(ei.source), graph.position(ei.target)
    pj1, pj2 = graph.position(ej.source), graph.position(ej.target)
    u = (pi2 - pi1) / ei.length
    phi = angle_between(pi2 - pi1, pj2 - pj1)

    def proj(theta):
        return float((((1 - theta) * pj1 + theta * pj2) - pi1) @ u)

    l_hat = projected_length(footprints[pair.j], phi)
    return CriticalEdgePair(
        pair.i, pair.edge_i, pair.j, pair.edge_j, pair.theta_i, pair.theta_j,
        s1=pair.theta_i[0] * ei.length, s2=pair.theta_i[1] * ei.length,
        s_hat1=proj(pair.theta_j[0]), s_hat2=proj(pair.theta_j[1]),
        projected_length=l_hat,
        safety_distance=0.5 * (footprints[pair.i].length + l_hat),
        phi=phi,
    )


def _bbox(poly):
    return poly.min(axis=0), poly.max(axis=0)


def find_critical_pairs(graph: WaypointGraph, subgraphs: Sequence[VehicleSubgraph],
                        footprints: Mapping[int, Footprint]) -> list[CriticalEdgePair]:
    """All ordered critical edge pairs between distinct vehicles, sorted by key.

    Both orientations of every overlapping pair are returned, each projected
    onto its own first edge.
    """
    regions = {}
    for sub in subgraphs:
        fp = footprints[sub.vehicle]
        for e in sub.edges:
            edge = graph.edges[e]
            poly = swept_region(graph.position(edge.source), graph.position(edge.target), fp)
            regions[sub.vehicle, e] = (poly, *_bbox(poly))

    pairs = []
    for a, sa in enumerate(subgraphs):
        for sb in subgraphs[a + 1:]:
            i, j = sa.vehicle, sb.vehicle
            for ei in sa.edges:
                poly_i, lo_i, hi_i = regions[i, ei]
                for ej in sb.edges:
                    poly_j, lo_j, hi_j = regions[j, ej]
                    if np.any(hi_i < lo_j - _TOUCH_EPS) or np.any(hi_j < lo_i - _TOUCH_EPS):
                        continue
                    if not polygons_intersect(poly_i, poly_j):
                        continue
                    pairs.extend(_build_pair(graph, footprints, i, ei, j, ej, poly_i, poly_j))
    pairs.sort(key=lambda p: p.key)
    return pairs


def _build_pair(graph, footprints, i, ei, j, ej, poly_i, poly_j):
    edge_i, edge_j = graph.edges[ei], graph.edges[ej]
    pi = (graph.position(edge_i.source), graph.position(edge_i.target))
    pj = (graph.position(edge_j.source), graph.position(edge_j.target))
    if ei == ej and footprints[i] == footprints[j]:
        th_i = th_j = (0.0, 1.0)
    else:
        th_i = critical_region(*pi, footprints[i], poly_j)
        th_j = critical_region(*pj, footprints[j], poly_i)
    out = []
    for a, ea, b, eb, ta, tb in ((i, ei, j, ej, th_i, th_j), (j, ej, i, ei, th_j, th_i)):
        raw = CriticalEdgePair(a, ea, b, eb, ta, tb)
        out.append(project_pair(raw, graph, footprints))
    return out
