import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavdag.decision import DecisionSolution, VehicleDecision
from cavdag.errors import InfeasibleStart, KinematicDomain, NonmonotoneTimestamps
from cavdag.graph import WaypointGraph
from cavdag.scenario import OCPSettings
from cavdag.trajectory import (TrackingOCP, decision_to_reference, f_r, front_rear_circles,
                               gradient_check, initial_state, rollout, solve_ocp, step_kinematics,
                               validate_collisions)

CFG = OCPSettings()
B = CFG.wheelbase
D_F, D_R = 2.279, 0.126


def test_table_defaults():
    assert CFG.tau_s == 0.1
    assert CFG.d_safe == 2.366
    assert (CFG.d_f, CFG.d_r) == (D_F, D_R)
    assert CFG.d_b == pytest.approx(1.2025)
    assert B == pytest.approx(2.405)
    assert tuple(CFG.Q) == (20, 20, 0, 0) and tuple(CFG.R) == (20, 0.1)
    assert (CFG.delta_max, CFG.a_min, CFG.a_max) == (0.6, -6.0, 4.0)


@pytest.mark.parametrize("v", [0.0, 0.3, 4.0, 10.0, 20.0, 37.7])
def test_straight_displacement_is_exact(v):
    assert f_r(v, 0.0, 0.1, B) == 0.1 * v


def test_straight_step_keeps_heading():
    nxt = step_kinematics((1.0, 2.0, 0.7, 10.0), (0.0, 2.0), 0.1, B)
    assert nxt[2] == 0.7
    assert nxt[0] == pytest.approx(1.0 + math.cos(0.7))
    assert nxt[1] == pytest.approx(2.0 + math.sin(0.7))
    assert nxt[3] == pytest.approx(10.2)


def test_heading_increment():
    nxt = step_kinematics((0, 0, 0, 10.0), (0.1, 0.0), 0.1, 2.405)
    assert nxt[2] == pytest.approx(math.asin(math.sin(0.1) / 2.405))
    assert nxt[2] == pytest.approx(0.0415, abs=1e-4)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 30), st.floats(-0.6, 0.6))
def test_closed_form_matches_chord_geometry(v, delta):
    # rear axle moves along a chord of the turning circle: b + C - r
    S, C = 0.1 * v * math.sin(delta), 0.1 * v * math.cos(delta)
    direct = B + C - math.sqrt(B * B - S * S)
    assert f_r(v, delta, 0.1, B) == pytest.approx(direct, abs=1e-12)


def test_small_angle_limit():
    assert f_r(10.0, 1e-8, 0.1, B) == pytest.approx(1.0, abs=1e-15)


def test_domain_error():
    with pytest.raises(KinematicDomain):
        f_r(40.0, 0.6, 0.5, B)


def test_rollout_matches_iterated_steps():
    rng = np.random.default_rng(3)
    U = np.column_stack([rng.uniform(-0.6, 0.6, 30), rng.uniform(-6, 4, 30)])
    X = rollout((0, 0, 0.2, 8.0), U, 0.1, B)
    x = np.array([0, 0, 0.2, 8.0])
    for k, u in enumerate(U):
        x = step_kinematics(x, u, 0.1, B)
        assert np.max(np.abs(X[k + 1] - x)) <= 1e-9


def test_circle_centres():
    f, r = front_rear_circles((0, 0, 0, 5), D_F, D_R)
    assert f == pytest.approx([2.279, 0]) and r == pytest.approx([0.126, 0])
    f, r = front_rear_circles((0, 0, math.pi / 2, 5), D_F, D_R)
    assert f == pytest.approx([0, 2.279]) and r == pytest.approx([0, 0.126])


def test_head_on_violation_at_step_zero():
    a = np.array([[0.0, 0.0, 0.0, 5.0]])
    b = np.array([[5.0, 0.0, math.pi, 5.0]])
    rep = validate_collisions({1: a, 2: b}, 2.366)
    assert rep.min_distance == pytest.approx(5 - 2 * 2.279)
    assert rep.first_violation[0] == 0
    assert not rep.clean


def test_parallel_lanes_are_clean():
    xs = np.arange(20) * 1.0
    a = np.column_stack([xs, np.zeros(20), np.zeros(20), np.full(20, 10.0)])
    b = a.copy()
    b[:, 1] = 3.75
    rep = validate_collisions({1: a, 2: b}, 2.366)
    assert rep.clean
    assert rep.min_distance == pytest.approx(3.75)


def test_single_vehicle_report_is_vacuous():
    rep = validate_collisions({1: np.zeros((5, 4))}, 2.366)
    assert rep.clean and rep.worst is None


def _decision(vertices, times):
    d = VehicleDecision(1, vertices, [], times)
    return DecisionSolution({1: d}, 0.0)


def test_reference_interpolation():
    g = WaypointGraph.build([(0, 0), (10, 0)], [(0, 1)])
    d = _decision([0, 1], [1.0, 2.0])
    refs = decision_to_reference(d, g, CFG.d_b, 0.1)
    r = refs[1]
    assert r.horizon == 10
    assert r.centers[5] == pytest.approx([5.0, 0.0])
    assert r.states[5, :2] == pytest.approx([5.0 - 1.2025, 0.0])
    assert r.states[5, 3] == pytest.approx(10.0)
    # vertex timestamps give the vertex minus the offset
    assert r.states[0, :2] == pytest.approx([-1.2025, 0.0])
    assert r.states[-1, :2] == pytest.approx([10 - 1.2025, 0.0])


def test_trim_cuts_to_shortest():
    g = WaypointGraph.build([(0, 0), (10, 0), (0, 5), (10, 5), (0, 10), (10, 10)],
                            [(0, 1), (2, 3), (4, 5)])
    vs = {i: VehicleDecision(i, [2 * k, 2 * k + 1], [k], [0.0, t])
          for k, (i, t) in enumerate([(1, 4.5), (2, 5.0), (3, 6.0)])}
    refs = decision_to_reference(DecisionSolution(vs, 0.0), g, CFG.d_b, 0.1, trim=True)
    assert {r.horizon for r in refs.values()} == {45}


def test_nonmonotone_timestamps():
    g = WaypointGraph.build([(0, 0), (10, 0), (20, 0)], [(0, 1), (1, 2)])
    with pytest.raises(NonmonotoneTimestamps):
        decision_to_reference(_decision([0, 1, 2], [0.0, 1.0, 1.0]), g, CFG.d_b)


def _straight_reference(n, v=10.0, y=0.0):
    k = np.arange(n + 1)
    return np.column_stack([v * 0.1 * k, np.full(n + 1, y), np.zeros(n + 1), np.full(n + 1, v)])


def test_feasible_reference_is_reproduced():
    ref = _straight_reference(30)
    sol = solve_ocp({1: ref}, {1: ref[0]}, CFG)
    assert sol.converged
    assert sol.cost == pytest.approx(0.0, abs=1e-6)
    assert np.abs(sol.controls[1][:-2]).max() <= 1e-3
    assert np.abs(sol.states[1] - ref).max() <= 1e-3


def test_close_references_are_pushed_apart():
    # references 2.0 m apart, starts just outside the safety distance
    a = _straight_reference(30, y=0.0)
    b = _straight_reference(30, y=2.0)
    start = b[0] + np.array([0, 0.4, 0, 0])
    sol = solve_ocp({1: a, 2: b}, {1: a[0], 2: start}, CFG)
    assert sol.converged
    rep = validate_collisions(sol.states, 2.366)
    assert rep.min_distance >= 2.366 - 1e-3
    lo = np.array([-0.6, -6.0])
    hi = np.array([0.6, 4.0])
    for U in sol.controls.values():
        assert np.all(U >= lo) and np.all(U <= hi)


def test_infeasible_start():
    a = _straight_reference(5)
    with pytest.raises(InfeasibleStart):
        solve_ocp({1: a, 2: a.copy()}, {1: a[0], 2: a[0]}, CFG)


def test_initial_state_offsets_centre():
    x = initial_state((10.0, 5.0), math.pi / 2, 7.0, 1.2025)
    assert x == pytest.approx([10.0, 5.0 - 1.2025, math.pi / 2, 7.0])


@pytest.mark.parametrize("seed", range(20))
def test_adjoint_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    n = 10
    refs, x0 = {}, {}
    for i, y in ((1, 0.0), (2, 2.8)):
        r = _straight_reference(n, v=rng.uniform(5, 15), y=y)
        r[:, :2] += rng.normal(0, 0.3, r[:, :2].shape)
        refs[i], x0[i] = r, r[0] + np.array([0, 0, rng.uniform(-0.1, 0.1), 0])
    prob = TrackingOCP(refs, x0, CFG)
    lo = np.array([b[0] for b in prob.bounds])
    hi = np.array([b[1] for b in prob.bounds])
    z = rng.uniform(lo, hi) * 0.5
    lam_c = rng.uniform(0, 5, (prob.T + 1, len(prob.pa), 2, 2))
    lam_v = rng.uniform(0, 1, (prob.T + 1, prob.V))
    assert gradient_check(prob, z, lam_c, lam_v, rho=10.0, h=1e-5) <= 1e-4
