import math

import numpy as np
import pytest
import shapely

from cavdag.decision import (check_paths, check_regions, check_velocity, decision_margins, decode,
                             encode, read_decision, replay_separation, validate_decision,
                             write_decision)
from cavdag.geometry import Footprint, rectangle
from cavdag.graph import WaypointGraph
from cavdag.milp import solve_milp
from cavdag.model import DecisionProblem, VehicleTask, VelocityRegions, assemble

CAR = Footprint(3.826, 1.673)


def _task(vid, start, dest, heading):
    return VehicleTask(vid, CAR, start, (dest,), 10.0, 10.0, heading, VelocityRegions.default(10.0))


@pytest.fixture(scope="module")
def crossing():
    g = WaypointGraph.build([(0, 0), (20, 0), (10, -10), (10, 10)], [(0, 1), (2, 3)])
    m = assemble(DecisionProblem(g, [_task(1, 0, 1, 0.0), _task(2, 2, 3, math.pi / 2)]),
                 prune_pairs=False)
    sol = solve_milp(m)
    assert sol.status == "optimal"
    return m, sol.x


def _overlaps(model, x, dt=0.01):
    """Sample uniform motion and intersect the footprints (independent of the projection)."""
    g = model.graph
    tracks = {}
    for d in decode(model, x).vehicles.values():
        tracks[d.vehicle] = (np.array([g.position(v) for v in d.vertices]), np.array(d.times))
    (pa, ta), (pb, tb) = tracks[1], tracks[2]
    hits = []
    for t in np.arange(0, min(ta[-1], tb[-1]), dt):
        polys = []
        for pts, ts in ((pa, ta), (pb, tb)):
            k = min(np.searchsorted(ts, t, side="right") - 1, len(ts) - 2)
            w = (t - ts[k]) / (ts[k + 1] - ts[k])
            c = (1 - w) * pts[k] + w * pts[k + 1]
            polys.append(shapely.Polygon(rectangle(c, pts[k + 1] - pts[k], CAR.length, CAR.width)))
        if polys[0].intersection(polys[1]).area > 1e-9:
            hits.append(round(t, 2))
    return hits


def test_solution_passes_every_validator(crossing):
    m, x = crossing
    assert validate_decision(m, x) == {"paths": [], "velocity": [], "regions": [], "separation": []}
    assert decision_margins(m, x)["separation"] >= -1e-6


def test_replay_agrees_with_polygon_oracle(crossing):
    m, x = crossing
    assert _overlaps(m, x) == []


def test_corrupted_timestamp_is_flagged(crossing):
    m, x = crossing
    d = decode(m, x).vehicles
    first = min(d, key=lambda i: d[i].times[-1])
    other = 3 - first
    y = x.copy()
    # make the later vehicle run on the same schedule as the earlier one
    for v, t in zip(d[other].vertices, d[first].times):
        y[m.var("t", other, v)] = t
    bad = replay_separation(m, y)
    assert bad and "step" in bad[0]
    assert _overlaps(m, y)


def test_decision_file_round_trip(crossing, tmp_path):
    m, x = crossing
    dec = decode(m, x)
    path = tmp_path / "decision.csv"
    write_decision(path, dec, m.graph)
    rec = read_decision(path)
    assert {i: [v for v, _ in r] for i, r in rec.items()} == \
        {i: d.vertices for i, d in dec.vehicles.items()}
    y = encode(m, rec)
    assert validate_decision(m, y)["paths"] == []
    assert validate_decision(m, y)["separation"] == []
    again = decode(m, y)
    for i, d in dec.vehicles.items():
        assert again.vehicles[i].times == pytest.approx(d.times, abs=1e-6)


def test_broken_path_detected(crossing):
    m, x = crossing
    y = x.copy()
    sub = m.subgraphs[0]
    for e in sub.edges:
        y[m.var("y", 1, e)] = 0.0
    assert check_paths(m, y)


def test_speed_outside_envelope(crossing):
    m, x = crossing
    d = decode(m, x).vehicles[1]
    y = x.copy()
    # 20 m edge in 1 s is 20 m/s, above 1.3 * 10
    y[m.var("t", 1, d.vertices[-1])] = y[m.var("t", 1, d.vertices[-2])] + 1.0
    assert check_velocity(m, y)
    assert check_regions(m, y)


def test_arrival_order(crossing):
    m, x = crossing
    dec = decode(m, x)
    order = dec.arrival_order()
    assert sorted(order) == [1, 2]
    assert dec.vehicles[order[0]].arrival <= dec.vehicles[order[1]].arrival
