"""Bounded-variable primal simplex.

Rows are ``a_i x (<=|>=|=) b_i`` and each variable carries ``lb <= x <= ub``
(either side may be infinite). Every row gets a slack so the working system
is ``[A I] z = b``; rows whose slack cannot absorb the starting point get an
artificial column driven out by a phase-one objective.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NumericalBreakdown

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-9
OPT_TOL = 1e-9
FEAS_TOL = 1e-9
BLAND_AFTER = 50
REFACTOR_EVERY = 64

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass
class LPStandardForm:
    c: np.ndarray
    A: np.ndarray
    senses: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = self.A.toarray() if sp.issparse(self.A) else np.atleast_2d(
            np.asarray(self.A, dtype=float))
        if self.A.size == 0:
            self.A = self.A.reshape(0, self.c.size)
        self.senses = np.asarray(self.senses, dtype=object)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        m, n = self.A.shape
        if not (self.c.size == n == self.lb.size == self.ub.size
                and self.rhs.size == m == self.senses.size):
            raise ValueError("inconsistent LP dimensions")
        if not (np.isfinite(self.A).all() and np.isfinite(self.c).all()
                and np.isfinite(self.rhs).all()):
            raise ValueError("LP data must be finite")
        for s in self.senses:
            if s not in ("<=", ">=", "="):
                raise ValueError(f"unknown sense {s!r}")

    @property
    def shape(self):
        return self.A.shape


@dataclass
class LPSolution:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None


class _Simplex:
    def __init__(self, A, b, lb, ub):
        self.A = A
        self.b = b
        self.lb = lb
        self.ub = ub
        self.m, self.n = A.shape
        self.iterations = 0

    def start(self, basis, x):
        self.basis = np.array(basis, dtype=int)
        self.x = x
        self.is_basic = np.zeros(self.n, dtype=bool)
        self.is_basic[self.basis] = True
        self.refactor()

    def refactor(self):
        B = self.A[:, self.basis]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise NumericalBreakdown(
                f"singular basis (cond={np.linalg.cond(B):.3g})") from exc
        nonbasic = ~self.is_basic
        self.x[self.basis] = self.Binv @ (self.b - self.A[:, nonbasic] @ self.x[nonbasic])
        self.since_refactor = 0

    def run(self, c, max_iter):
        degenerate = 0
        bland = False
        while True:
            if self.iterations >= max_iter:
                raise NumericalBreakdown(f"iteration limit {max_iter} reached")
            y = c[self.basis] @ self.Binv
            d = c - y @ self.A
            j, direction = self._entering(d, bland)
            if j < 0:
                return OPTIMAL, y, d
            alpha = self.Binv @ self.A[:, j]
            step, row, to_upper = self._ratio(j, alpha * direction, bland)
            if not np.isfinite(step):
                return UNBOUNDED, y, d
            self.iterations += 1
            self.x[self.basis] -= step * direction * alpha
            self.x[j] += step * direction
            if row >= 0:
                leaving = self.basis[row]
                self.x[leaving] = self.ub[leaving] if to_upper else self.lb[leaving]
                self._pivot(row, j, alpha)
            degenerate = degenerate + 1 if step <= FEAS_TOL else 0
            if degenerate >= BLAND_AFTER:
                bland = True
            elif degenerate == 0:
                bland = False

    def _entering(self, d, bland):
        lb, ub, x = self.lb, self.ub, self.x
        nb = ~self.is_basic & (ub > lb)
        at_lb = np.isclose(x, lb, atol=FEAS_TOL, rtol=0) & np.isfinite(lb)
        at_ub = np.isclose(x, ub, atol=FEAS_TOL, rtol=0) & np.isfinite(ub)
        free = ~at_lb & ~at_ub
        up = nb & (d < -OPT_TOL) & (at_lb | free)
        down = nb & (d > OPT_TOL) & (at_ub | free)
        cand = np.flatnonzero(up | down)
        if cand.size == 0:
            return -1, 0
        j = int(cand[0]) if bland else int(cand[np.argmax(np.abs(d[cand]))])
        return j, (1.0 if up[j] else -1.0)

    def _ratio(self, j, a, bland):
        """Largest step along the entering direction; ``a`` is the signed column."""
        step = self.ub[j] - self.lb[j]
        row, to_upper = -1, False
        xb = self.x[self.basis]
        lbb, ubb = self.lb[self.basis], self.ub[self.basis]
        best_piv = 0.0
        for r in np.flatnonzero(np.abs(a) > PIVOT_TOL):
            if a[r] > 0:
                if not np.isfinite(lbb[r]):
                    continue
                t, up = max(xb[r] - lbb[r], 0.0) / a[r], False
            else:
                if not np.isfinite(ubb[r]):
                    continue
                t, up = max(ubb[r] - xb[r], 0.0) / -a[r], True
            if t < step - 1e-12:
                step, row, to_upper, best_piv = t, r, up, abs(a[r])
            elif row >= 0 and t <= step + 1e-12:
                # tie: Bland picks the lowest variable index, otherwise the larger pivot
                if bland:
                    better = self.basis[r] < self.basis[row]
                else:
                    better = abs(a[r]) > best_piv
                if better:
                    step, row, to_upper, best_piv = min(t, step), r, up, abs(a[r])
        return step, row, to_upper

    def _pivot(self, row, j, alpha):
        leaving = self.basis[row]
        piv = alpha[row]
        if abs(piv) < PIVOT_TOL:
            raise NumericalBreakdown(f"pivot {piv:.3g} below tolerance")
        self.basis[row] = j
        self.is_basic[leaving] = False
        self.is_basic[j] = True
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self.refactor()
            return
        pivot_row = self.Binv[row].copy()
        self.Binv -= np.outer(alpha, pivot_row) / piv
        self.Binv[row] = pivot_row / piv


def solve_lp(problem: LPStandardForm, max_iter: int | None = None) -> LPSolution:
    """Minimise ``c @ x`` subject to the rows and bounds of ``problem``."""
    A0, b = problem.A, problem.rhs
    m, n = A0.shape
    lb0, ub0 = problem.lb, problem.ub
    if np.any(lb0 > ub0 + FEAS_TOL):
        return LPSolution(INFEASIBLE, None, np.inf, 0)
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000

    # slacks: a x + s = b
    slb = np.where(problem.senses == ">=", -np.inf, 0.0)
    sub = np.where(problem.senses == "<=", np.inf, 0.0)
    x = np.zeros(n + m)
    xn = np.where(np.isfinite(lb0), lb0, np.where(np.isfinite(ub0), ub0, 0.0))
    x[:n] = xn
    resid = b - A0 @ xn
    s = np.clip(resid, slb, sub)
    x[n:] = s
    need = np.abs(resid - s) > FEAS_TOL
    art_rows = np.flatnonzero(need)
    k = art_rows.size
    A = np.zeros((m, n + m + k))
    A[:, :n] = A0
    A[:, n:n + m] = np.eye(m)
    sign = np.sign(resid[art_rows] - s[art_rows])
    A[art_rows, n + m + np.arange(k)] = sign
    lb = np.concatenate([lb0, slb, np.zeros(k)])
    ub = np.concatenate([ub0, sub, np.full(k, np.inf)])
    x = np.concatenate([x, np.abs(resid[art_rows] - s[art_rows])])
    basis = np.arange(n, n + m)
    basis[art_rows] = n + m + np.arange(k)

    sx = _Simplex(A, b, lb, ub)
    sx.start(basis, x)
    if k:
        c1 = np.zeros(n + m + k)
        c1[n + m:] = 1.0
        sx.run(c1, max_iter)
        infeas = float(sx.x[n + m:].sum())
        if infeas > 1e-7 * max(1.0, np.abs(b).max(initial=0.0)):
            return LPSolution(INFEASIBLE, None, np.inf, sx.iterations)
        # artificials stay in the basis only at level zero; pin them there
        sx.ub[n + m:] = 0.0
        sx.x[n + m:] = np.clip(sx.x[n + m:], 0.0, 0.0)
    c = np.concatenate([problem.c, np.zeros(m + k)])
    status, y, d = sx.run(c, max_iter)
    xs = sx.x[:n].copy()
    if status == UNBOUNDED:
        return LPSolution(UNBOUNDED, xs, -np.inf, sx.iterations)
    return LPSolution(OPTIMAL, xs, float(problem.c @ xs), sx.iterations,
                      duals=y, reduced_costs=d[:n])


def primal_residual(problem: LPStandardForm, x: np.ndarray) -> float:
    """Largest violation of rows or bounds at ``x``."""
    ax = problem.A @ x
    viol = np.zeros_like(ax)
    le = problem.senses == "<="
    ge = problem.senses == ">="
    eq = problem.senses == "="
    viol[le] = np.maximum(ax[le] - problem.rhs[le], 0)
    viol[ge] = np.maximum(problem.rhs[ge] - ax[ge], 0)
    viol[eq] = np.abs(ax[eq] - problem.rhs[eq])
    bound = np.maximum(problem.lb - x, 0) + np.maximum(x - problem.ub, 0)
    return float(max(viol.max(initial=0.0), bound.max(initial=0.0)))


def complementary_slackness(problem: LPStandardForm, sol: LPSolution) -> float:
    """Largest |dual * slack| product over rows and bounded columns."""
    x, y, d = sol.x, sol.duals, sol.reduced_costs
    row_slack = problem.rhs - problem.A @ x
    worst = float(np.abs(y * row_slack).max(initial=0.0))
    gap_lb = np.where(np.isfinite(problem.lb), x - problem.lb, np.inf)
    gap_ub = np.where(np.isfinite(problem.ub), problem.ub - x, np.inf)
    gap = np.minimum(gap_lb, gap_ub)
    # a column without finite bounds must carry a zero reduced cost itself
    col = np.abs(d) * np.where(np.isfinite(gap), gap, 1.0)
    return max(worst, float(col.max(initial=0.0)))
