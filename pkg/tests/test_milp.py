import re

import numpy as np
import pytest

from cavdag.errors import LimitReached, TooLarge
from cavdag.milp import (MILPData, branch_and_bound, brute_force_milp, objectives_match,
                         solve_highs, solve_milp)
from cavdag.testing import random_milp

NODE_LINE = re.compile(r"^node=(\d+) depth=(\d+) bound=(\S+) incumbent=(\S+) gap=(\S+)$")


def _toy(extra_rows=(), lb=None, ub=None):
    # min x  s.t.  x - 3 y1 - 2 y2 >= 0,  y1 + y2 >= 1,  x in [0, 10]
    rows = [[1, -3, -2], [0, 1, 1]] + [r[0] for r in extra_rows]
    senses = [">=", ">="] + [r[1] for r in extra_rows]
    rhs = [0, 1] + [r[2] for r in extra_rows]
    return MILPData(np.array([1.0, 0, 0]), np.array(rows, float), np.array(senses, dtype=object),
                    np.array(rhs, float),
                    np.array([0, 0, 0], float) if lb is None else np.array(lb, float),
                    np.array([10, 1, 1], float) if ub is None else np.array(ub, float),
                    np.array([False, True, True]))


def test_toy_optimum_by_enumeration():
    # assignments: (1,0)->3, (0,1)->2, (1,1)->5, (0,0) infeasible
    for sol in (solve_milp(_toy()), brute_force_milp(_toy()), solve_highs(_toy())):
        assert sol.ok
        assert sol.objective == pytest.approx(2.0, abs=1e-9)
        assert sol.x == pytest.approx([2.0, 0.0, 1.0], abs=1e-9)


def test_fixed_binaries_need_one_node():
    sol = solve_milp(_toy(lb=[0, 1, 0], ub=[10, 1, 0]))
    assert sol.nodes == 1
    assert sol.objective == pytest.approx(3.0)


def test_infeasible_everywhere():
    data = _toy(extra_rows=[([0, 1, 1], "<=", 0)])
    assert solve_milp(data).status == "infeasible"
    assert brute_force_milp(data).status == "infeasible"
    with pytest.raises(Exception):
        solve_milp(data).require()


def test_unbounded_relaxation():
    data = MILPData(np.array([-1.0, 0.0]), np.array([[1.0, -1.0]]), np.array([">="], dtype=object),
                    np.array([0.0]), np.array([0.0, 0.0]), np.array([np.inf, 1.0]),
                    np.array([False, True]))
    assert solve_milp(data).status == "unbounded"
    assert brute_force_milp(data).status == "unbounded"


def test_enumeration_cap():
    rng = np.random.default_rng(0)
    data = random_milp(rng, max_binaries=14)
    with pytest.raises(TooLarge):
        brute_force_milp(data, max_binaries=data.n_binaries - 1)


def test_node_limit_keeps_incumbent():
    rng = np.random.default_rng(7)
    for _ in range(50):
        data = random_milp(rng)
        full = solve_milp(data)
        if full.nodes > 3 and full.ok:
            break
    limited = branch_and_bound(data, node_limit=2)
    assert limited.status in ("gap-limit", "optimal", "infeasible")
    if limited.status == "gap-limit" and limited.x is not None:
        assert limited.bound <= limited.objective + 1e-9
        with pytest.raises(LimitReached) as info:
            limited.require()
        assert info.value.args


@pytest.mark.parametrize("seed", range(30))
def test_branch_and_bound_matches_enumeration(seed):
    data = random_milp(np.random.default_rng(1000 + seed))
    bnb = solve_milp(data)
    ref = brute_force_milp(data)
    assert bnb.status == ref.status
    if ref.status == "optimal":
        assert objectives_match(bnb.objective, ref.objective, 1e-6)
        bins = bnb.x[data.is_binary]
        assert np.all(np.minimum(np.abs(bins), np.abs(bins - 1)) <= 1e-6)
        assert data.max_violation(bnb.x) <= 1e-6
        assert bnb.objective >= bnb.bound - 1e-9
        hi = solve_highs(data)
        assert objectives_match(hi.objective, ref.objective, 1e-6)


def test_log_lines_and_monotone_bound():
    data = random_milp(np.random.default_rng(3))
    sol = solve_milp(data)
    parsed = [NODE_LINE.match(line) for line in sol.log]
    assert parsed and all(parsed)
    ids = [int(m.group(1)) for m in parsed]
    assert ids == list(range(1, len(ids) + 1))
    bounds = [float(m.group(3)) for m in parsed]
    assert all(b2 >= b1 - 1e-9 * (1 + abs(b1)) for b1, b2 in zip(bounds, bounds[1:]))


def test_deterministic_rerun():
    data = random_milp(np.random.default_rng(11))
    a, b = solve_milp(data), solve_milp(data)
    assert a.objective == b.objective
    assert a.nodes == b.nodes
    assert np.array_equal(a.x, b.x)


def test_objectives_match_floor():
    assert objectives_match(0.0, 5e-7)
    assert not objectives_match(0.0, 2e-6)
    assert objectives_match(1e6, 1e6 + 0.5)
    assert objectives_match(float("inf"), float("inf"))
