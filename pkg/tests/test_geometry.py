import math

import numpy as np
import pytest
import shapely
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from cavdag.errors import NoOverlap
from cavdag.geometry import (CriticalEdgePair, Footprint, critical_region, find_critical_pairs,
                             polygon_area, polygons_intersect, project_pair, projected_length,
                             rectangle, swept_region)
from cavdag.graph import WaypointGraph, extract_subgraph

L, W = 3.826, 1.673
CAR = Footprint(L, W)


def _footprint_polys(p1, p2, fp, thetas):
    """Footprint rectangles along p1->p2 as shapely polygons (oracle side)."""
    p1, p2 = np.asarray(p1, float), np.asarray(p2, float)
    u = (p2 - p1) / np.hypot(*(p2 - p1))
    n = np.array([-u[1], u[0]])
    corners = np.array([-L / 2 * u - W / 2 * n, L / 2 * u - W / 2 * n,
                        L / 2 * u + W / 2 * n, -L / 2 * u + W / 2 * n]) \
        if fp is CAR else np.array([-fp.length / 2 * u - fp.width / 2 * n,
                                    fp.length / 2 * u - fp.width / 2 * n,
                                    fp.length / 2 * u + fp.width / 2 * n,
                                    -fp.length / 2 * u + fp.width / 2 * n])
    centers = (1 - thetas)[:, None] * p1 + thetas[:, None] * p2
    return shapely.polygons(centers[:, None, :] + corners[None])


def _shapely_interval(p1, p2, fp, region, step=1e-5):
    thetas = np.linspace(0, 1, int(round(1 / step)) + 1)
    hit = shapely.intersects(_footprint_polys(p1, p2, fp, thetas), Polygon(region))
    if not hit.any():
        return None
    idx = np.flatnonzero(hit)
    return thetas[idx[0]], thetas[idx[-1]]


def test_swept_region_table_footprint():
    poly = swept_region((0, 0), (10, 0), CAR)
    assert poly[:, 0].min() == pytest.approx(-1.913)
    assert poly[:, 0].max() == pytest.approx(11.913)
    assert poly[:, 1].min() == pytest.approx(-0.8365)
    assert poly[:, 1].max() == pytest.approx(0.8365)


def test_swept_region_vertical_edge():
    poly = swept_region((0, 0), (0, 5), Footprint(1, 1))
    assert poly[:, 1].min() == pytest.approx(-0.5)
    assert poly[:, 1].max() == pytest.approx(5.5)
    assert poly[:, 0].min() == pytest.approx(-0.5)
    assert poly[:, 0].max() == pytest.approx(0.5)


@pytest.mark.parametrize("dims", [(0, 1), (1, 0), (-1, 2)])
def test_footprint_rejects_degenerate(dims):
    with pytest.raises(ValueError):
        Footprint(*dims)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 2 * math.pi), st.floats(0.5, 30))
def test_swept_area_and_orientation(x, y, ang, length):
    p2 = (x + length * math.cos(ang), y + length * math.sin(ang))
    poly = swept_region((x, y), p2, CAR)
    # counter-clockwise corners give positive signed area
    assert polygon_area(poly) == pytest.approx((length + L) * W, abs=1e-6)
    assert Polygon(poly).is_valid


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=10, max_size=10))
def test_separating_axis_matches_shapely(v):
    a = rectangle(v[0:2], (math.cos(v[2]), math.sin(v[2])), abs(v[3]) + 0.1, abs(v[4]) + 0.1)
    b = rectangle(v[5:7], (math.cos(v[7]), math.sin(v[7])), abs(v[8]) + 0.1, abs(v[9]) + 0.1)
    pa, pb = Polygon(a), Polygon(b)
    if pa.distance(pb) > 1e-6 or pa.intersection(pb).area > 1e-6:
        assert polygons_intersect(a, b) == pa.intersects(pb)


def _pair_graph(points, edges):
    return WaypointGraph.build(points, edges)


def test_parallel_lanes_are_not_critical():
    g = _pair_graph([(0, 0), (10, 0), (0, 3.75), (10, 3.75)], [(0, 1), (2, 3)])
    subs = [extract_subgraph(g, 0, {1}, vehicle=1), extract_subgraph(g, 2, {3}, vehicle=2)]
    assert find_critical_pairs(g, subs, {1: CAR, 2: CAR}) == []


def test_shared_edge_pair_covers_whole_edge():
    g = _pair_graph([(0, 0), (10, 0)], [(0, 1)])
    subs = [extract_subgraph(g, 0, {1}, vehicle=1), extract_subgraph(g, 0, {1}, vehicle=2)]
    pairs = find_critical_pairs(g, subs, {1: CAR, 2: CAR})
    assert [p.key for p in pairs] == [(1, 0, 2, 0), (2, 0, 1, 0)]
    for p in pairs:
        assert p.theta_i == (0.0, 1.0) and p.theta_j == (0.0, 1.0)
        assert (p.s_hat1, p.s_hat2) == pytest.approx((p.s1, p.s2))
        assert p.safety_distance == pytest.approx(L)


def test_perpendicular_crossing_matches_oracle():
    g = _pair_graph([(0, 0), (20, 0), (10, -10), (10, 10)], [(0, 1), (2, 3)])
    subs = [extract_subgraph(g, 0, {1}, vehicle=1), extract_subgraph(g, 2, {3}, vehicle=2)]
    pairs = find_critical_pairs(g, subs, {1: CAR, 2: CAR})
    assert len(pairs) == 2
    p = pairs[0]
    # footprint of length L must reach the other swept band of width W
    half = (W / 2 + L / 2) / 20
    assert p.theta_i[0] == pytest.approx(0.5 - half, abs=2e-4)
    assert p.theta_i[1] == pytest.approx(0.5 + half, abs=2e-4)
    ref = _shapely_interval((0, 0), (20, 0), CAR, swept_region((10, -10), (10, 10), CAR))
    assert p.theta_i == pytest.approx(ref, abs=2e-4)
    assert p.phi == pytest.approx(math.pi / 2)
    assert not p.same_direction
    assert p.projected_length == pytest.approx(W)
    assert p.safety_distance == pytest.approx(2.7495)


def test_tangential_touch_at_end():
    # partner region begins exactly where the footprint reaches at theta = 1
    region = rectangle((10 + L / 2 + 1.0, 0), (1, 0), 2.0, 1.0)
    lo, hi = critical_region((0, 0), (10, 0), CAR, region)
    assert hi == 1.0
    assert 1.0 - lo <= 2e-4


def test_no_overlap_raises():
    region = rectangle((50, 50), (1, 0), 2.0, 1.0)
    with pytest.raises(NoOverlap):
        critical_region((0, 0), (10, 0), CAR, region)


@pytest.mark.parametrize("phi,expected_d", [(0.0, 3.826), (math.pi / 2, 2.7495)])
def test_safety_distance_formula(phi, expected_d):
    assert 0.5 * (L + projected_length(CAR, phi)) == pytest.approx(expected_d)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_critical_region_matches_dense_shapely_grid(seed):
    rng = np.random.default_rng(seed)
    p1 = rng.uniform(-5, 5, 2)
    ang = rng.uniform(0, 2 * math.pi)
    p2 = p1 + rng.uniform(3, 15) * np.array([math.cos(ang), math.sin(ang)])
    q1 = rng.uniform(-8, 8, 2)
    ang2 = rng.uniform(0, 2 * math.pi)
    q2 = q1 + rng.uniform(3, 15) * np.array([math.cos(ang2), math.sin(ang2)])
    region = swept_region(q1, q2, CAR)
    ref = _shapely_interval(p1, p2, CAR, region)
    if ref is None:
        with pytest.raises(NoOverlap):
            critical_region(p1, p2, CAR, region)
        return
    got = critical_region(p1, p2, CAR, region)
    assert got == pytest.approx(ref, abs=2e-4)


def _random_layout(rng, n_vehicles=3, n_points=8):
    pts = rng.uniform(0, 30, (n_points, 2))
    order = np.argsort(pts[:, 0])
    pts = pts[order]
    edges = [(a, b) for a in range(n_points) for b in range(a + 1, n_points)
             if rng.random() < 0.35 and np.hypot(*(pts[b] - pts[a])) > 1.0]
    return WaypointGraph.build(pts, edges)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pairs_symmetric_and_complete(seed):
    rng = np.random.default_rng(seed)
    g = _random_layout(rng)
    subs = []
    for vid in (1, 2, 3):
        starts = [v for v in range(g.n_vertices) if g.out_adjacency[v]]
        if not starts:
            return
        s = int(rng.choice(starts))
        ends = sorted(set(range(g.n_vertices)) - {s})
        try:
            subs.append(extract_subgraph(g, s, set(ends), vehicle=vid))
        except Exception:
            return
    fps = {1: CAR, 2: Footprint(4.5, 2.0), 3: CAR}
    pairs = find_critical_pairs(g, subs, fps)
    keys = {p.key for p in pairs}
    assert keys == {(p.j, p.edge_j, p.i, p.edge_i) for p in pairs}
    # completeness against shapely on every cross-vehicle edge combination
    polys = {(s.vehicle, e): Polygon(swept_region(g.position(g.edges[e].source),
                                                  g.position(g.edges[e].target),
                                                  fps[s.vehicle]))
             for s in subs for e in s.edges}
    for sa in subs:
        for sb in subs:
            if sa.vehicle == sb.vehicle:
                continue
            for ea in sa.edges:
                for eb in sb.edges:
                    pa, pb = polys[sa.vehicle, ea], polys[sb.vehicle, eb]
                    inter = pa.intersection(pb).area
                    if inter > 1e-6:
                        assert (sa.vehicle, ea, sb.vehicle, eb) in keys
                    elif pa.distance(pb) > 1e-6:
                        assert (sa.vehicle, ea, sb.vehicle, eb) not in keys
    for p in pairs:
        assert 0 <= p.theta_i[0] <= p.theta_i[1] <= 1
        assert p.safety_distance > 0
        if p.same_direction:
            assert p.s_hat1 <= p.s_hat2 + 1e-9
        else:
            assert p.s_hat1 >= p.s_hat2 - 1e-9


def test_containment_bounds_on_clean_crossings():
    # full crossings: bounds hold up to the bisection margin (1e-4 of a 20 m edge)
    g = _pair_graph([(0, 0), (20, 0), (10, -10), (10, 10), (0, -1), (20, 1)],
                    [(0, 1), (2, 3), (4, 5)])
    subs = [extract_subgraph(g, 0, {1}, vehicle=1), extract_subgraph(g, 2, {3}, vehicle=2),
            extract_subgraph(g, 4, {5}, vehicle=3)]
    pairs = find_critical_pairs(g, subs, {1: CAR, 2: CAR, 3: CAR})
    assert pairs
    assert all(p.bounds_hold(tol=2.5e-3) for p in pairs)


def test_project_pair_identity_projection():
    g = _pair_graph([(0, 0), (10, 0)], [(0, 1)])
    raw = CriticalEdgePair(1, 0, 2, 0, (0.2, 0.7), (0.2, 0.7))
    p = project_pair(raw, g, {1: CAR, 2: CAR})
    assert (p.s1, p.s2) == pytest.approx((2.0, 7.0))
    assert (p.s_hat1, p.s_hat2) == pytest.approx((2.0, 7.0))
