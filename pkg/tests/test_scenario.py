import copy
import math

import pytest
import yaml

from cavdag.errors import GeometryError, SchemaError
from cavdag.scenario import (arc_points, bundled_path, bundled_scenarios, parse_scenario,
                             parse_scenario_dict, straight_points)


def _raw(name):
    with open(bundled_path(name), encoding="utf-8") as fh:
        return yaml.safe_load(fh)


def test_bundled_names():
    assert {"overtaking", "roundabout", "intersection"} <= set(bundled_scenarios())


def test_overtaking_setup():
    spec = parse_scenario("overtaking")
    assert len(spec.lanes["lane1"]) == len(spec.lanes["lane2"]) == 8
    assert spec.n_lane_vertices == 16
    assert spec.graph.n_vertices == 20
    assert [v.v_init for v in spec.vehicles] == [20.0, 10.0, 10.0, 4.0]
    assert all((v.slow_factor, v.fast_factor) == (0.6, 1.3) for v in spec.vehicles)
    ys = {spec.graph.position(v)[1] for v in spec.lanes["lane2"]}
    assert ys == {3.75}
    xs = [spec.graph.position(v)[0] for v in spec.lanes["lane1"]]
    assert xs == pytest.approx([0, 10, 20, 30, 40, 50, 60, 70])
    # start vertices come last and have no incoming edges
    starts = [v.start_vertex for v in spec.vehicles]
    assert starts == [16, 17, 18, 19]
    assert all(not spec.graph.in_adjacency[s] for s in starts)


def test_roundabout_arc_counts_and_no_lane_change_at_ramps():
    spec = parse_scenario("roundabout")
    # 240 degrees at 20 degree steps
    assert len(spec.lanes["outer"]) == math.floor(240 / 20) + 1 == 13
    assert len(spec.lanes["inner"]) == 13
    g = spec.graph
    inner = set(spec.lanes["inner"])
    for k in (4, 8, 9):
        v = spec.lanes["outer"][k]
        assert not [w for w in g.successors(v) if w in inner]


def test_intersection_parses():
    spec = parse_scenario("intersection")
    assert len(spec.vehicles) == 7
    assert len(spec.lanes["nb_left"]) == 5


def test_missing_destination():
    data = _raw("overtaking")
    del data["vehicles"][0]["destinations"]
    with pytest.raises(SchemaError) as info:
        parse_scenario_dict(data)
    assert info.value.path == "vehicles[0].destinations"


@pytest.mark.parametrize("mutate,path", [
    (lambda d: d["graph"]["lanes"][0].update(kind="spiral"), "graph.lanes[0].kind"),
    (lambda d: d["vehicles"][1].update(id=1), "vehicles"),
    (lambda d: d["solver"].update(backend="cplex"), "solver.backend"),
    (lambda d: d["milp"]["weights"].update(time=-1), "milp.weights"),
    (lambda d: d["vehicles"][0].update(destinations=["nowhere:0"]), "vehicles[0].destinations[0]"),
])
def test_schema_errors_carry_paths(mutate, path):
    data = copy.deepcopy(_raw("overtaking"))
    mutate(data)
    with pytest.raises(SchemaError) as info:
        parse_scenario_dict(data)
    assert info.value.path == path


def test_zero_length_lane():
    with pytest.raises(GeometryError):
        straight_points((1, 1), (1, 1), 5.0)


def test_straight_sampling_keeps_end():
    pts = straight_points((0, 0), (25, 0), 10.0)
    assert [p[0] for p in pts] == pytest.approx([0, 10, 20, 25])
    pts = straight_points((0, 0), (0.3, 0), 0.1)
    assert len(pts) == 4


@pytest.mark.parametrize("span,step", [(240, 20), (90, 22.5), (100, 30), (-90, 22.5)])
def test_arc_point_count(span, step):
    pts = arc_points((0, 0), 10.0, 30.0, 30.0 + span, step)
    assert len(pts) == math.floor(abs(span) / step) + 1
    assert all(math.hypot(*p) == pytest.approx(10.0) for p in pts)


def test_unknown_scenario():
    with pytest.raises(FileNotFoundError):
        parse_scenario("no_such_scenario")
