import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from cavdag.lp import (INFEASIBLE, OPTIMAL, UNBOUNDED, LPStandardForm, complementary_slackness,
                       primal_residual, solve_lp)
from lp_suite import SUITE


@pytest.mark.parametrize("case", SUITE, ids=[c.name for c in SUITE])
def test_hand_solved(case):
    sol = solve_lp(case.problem)
    assert sol.status == case.status
    if case.status != OPTIMAL:
        return
    assert sol.objective == pytest.approx(case.objective, abs=1e-8)
    if case.x is not None:
        assert sol.x == pytest.approx(case.x, abs=1e-8)
    assert primal_residual(case.problem, sol.x) <= 1e-9
    assert complementary_slackness(case.problem, sol) <= 1e-8


def test_unbounded_ray_direction():
    sol = solve_lp(next(c for c in SUITE if c.name == "unbounded_ray").problem)
    assert sol.status == UNBOUNDED and sol.objective == -np.inf


def test_inverted_bounds_are_infeasible():
    p = LPStandardForm([1.0], np.zeros((0, 1)), [], [], [2.0], [1.0])
    assert solve_lp(p).status == INFEASIBLE


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        LPStandardForm([1.0, 2.0], [[1.0]], ["<="], [1.0], [0.0], [1.0])
    with pytest.raises(ValueError):
        LPStandardForm([1.0], [[1.0]], ["<"], [1.0], [0.0], [1.0])


def _reference(p: LPStandardForm):
    le = p.senses == "<="
    ge = p.senses == ">="
    eq = p.senses == "="
    A_ub = np.vstack([p.A[le], -p.A[ge]])
    b_ub = np.concatenate([p.rhs[le], -p.rhs[ge]])
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
              for lo, hi in zip(p.lb, p.ub)]
    return linprog(p.c, A_ub=A_ub if len(b_ub) else None, b_ub=b_ub if len(b_ub) else None,
                   A_eq=p.A[eq] if eq.any() else None, b_eq=p.rhs[eq] if eq.any() else None,
                   bounds=bounds, method="highs")


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_lps_match_scipy(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 8)), int(rng.integers(1, 8))
    A = rng.integers(-4, 5, (m, n)).astype(float)
    senses = rng.choice(["<=", ">=", "="], size=m, p=[0.5, 0.3, 0.2])
    rhs = rng.integers(-5, 10, m).astype(float)
    lb = np.where(rng.random(n) < 0.8, rng.integers(-3, 1, n), -np.inf).astype(float)
    ub = np.where(rng.random(n) < 0.7, lb + rng.integers(1, 6, n), np.inf)
    ub = np.where(np.isfinite(lb), ub, np.where(rng.random(n) < 0.5, 4.0, np.inf))
    c = rng.integers(-5, 6, n).astype(float)
    p = LPStandardForm(c, A, senses, rhs, lb, ub)
    sol = solve_lp(p)
    ref = _reference(p)
    expected = {0: OPTIMAL, 2: INFEASIBLE, 3: UNBOUNDED}[ref.status]
    assert sol.status == expected
    if expected == OPTIMAL:
        assert sol.objective == pytest.approx(ref.fun, abs=1e-7 * max(1.0, abs(ref.fun)))
        assert primal_residual(p, sol.x) <= 1e-7
        assert complementary_slackness(p, sol) <= 1e-6
