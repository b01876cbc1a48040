"""Primal heuristic for the joint decision model.

The collision disjunctions make the LP relaxation weak, so a plain MILP
search can run for a long time without finding any feasible assignment. The
heuristic first works on an elastic copy of the model in which every gated
collision row gets a heavily penalised slack column:

* each vehicle is first planned on its own, ignoring the others;
* passing orders are read off those plans and the remaining overlap becomes
  slack, which gives a feasible point of the elastic model;
* a large-neighbourhood search then frees one or two vehicles at a time and
  re-optimises them while the others keep their routes and passing orders
  (their timestamps stay free so they can still yield).

Once all slack is gone the point is feasible for the original model and the
search continues on the true objective. The result can seed an exact solver.
"""
from __future__ import annotations

import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .milp import MILPData, solve_highs

log = logging.getLogger(__name__)

# rows that order two vehicles in time; exclusivity rows stay hard
ELASTIC_TAGS = ("collision_after", "collision_before")
FEAS_TOL = 1e-6
# cost per second (or metre) of collision overlap in the elastic model
ELASTIC_PENALTY = 1.0e3
# per-neighbourhood limits: the search moves on once a sub-problem is nearly closed.
# Node limits keep single-threaded runs reproducible; the time cap is only a safety net.
SUB_NODES = 100
SOLVE_LIMIT = 60.0
SUB_GAP = 1e-4
# typical seconds per sub-solve at SUB_NODES, used to turn a time budget into a solve count
SOLVE_ESTIMATE = 8.0
# the deadline is a safety net only; reaching it makes runs timing dependent
DEADLINE_FACTOR = 4.0


@dataclass
class Ownership:
    """Which vehicle(s) each column and row of a model belongs to."""
    owner: np.ndarray          # vehicle id per column, -1 for delta columns
    pair: np.ndarray           # (n, 2) vehicle ids of delta columns, -1 elsewhere
    family: np.ndarray         # variable family per column
    row_pair: np.ndarray       # (m, 2) vehicle pair of collision rows, -1 elsewhere

    @classmethod
    def of(cls, model, data: MILPData) -> "Ownership":
        n = len(model.variables)
        owner = np.full(n, -1)
        pair = np.full((n, 2), -1)
        family = np.array([ref.family for ref in model.variables])
        for ref in model.variables:
            if ref.family == "delta":
                pair[ref.index] = sorted((ref.name[1], ref.name[3]))
            else:
                owner[ref.index] = ref.name[1]
        ids = sorted({t.id for t in model.tasks})
        width = max(ids) + 1 if ids else 1
        code = np.where(pair[:, 0] >= 0, pair[:, 0] * width + pair[:, 1] + 1, 0)
        A = sp.csr_matrix(data.A)
        marked = sp.csr_matrix((code[A.indices].astype(float), A.indices, A.indptr), shape=A.shape)
        row_code = np.asarray(marked.max(axis=1).todense()).ravel().astype(int) - 1
        row_pair = np.where(row_code[:, None] >= 0,
                            np.stack([row_code // width, row_code % width], axis=1), -1)
        return cls(owner, pair, family, row_pair)

    def fix_mask(self, fixed: set[int]) -> np.ndarray:
        """Columns pinned when the vehicles in ``fixed`` keep route and mutual order."""
        f = np.array(sorted(fixed)) if fixed else np.array([], dtype=int)
        route = (self.family == "y") & np.isin(self.owner, f)
        order = np.isin(self.pair[:, 0], f) & np.isin(self.pair[:, 1], f)
        return route | order


@dataclass
class HeuristicResult:
    x: np.ndarray | None
    objective: float
    trace: list[tuple[str, float]] = field(default_factory=list)
    solves: int = 0

    @property
    def found(self) -> bool:
        return self.x is not None


@dataclass
class Elastic:
    """The model with a penalised slack column on every gated collision row."""
    data: MILPData
    n: int                     # number of original columns
    rows: np.ndarray           # rows that received a slack column

    @classmethod
    def of(cls, model, data: MILPData, penalty: float = ELASTIC_PENALTY) -> "Elastic":
        rows = np.array([r for r, c in enumerate(model.constraints)
                         if c.tag.startswith(ELASTIC_TAGS)], dtype=int)
        n, k = data.c.size, rows.size
        sign = np.where(data.senses[rows] == "<=", -1.0, 1.0)
        S = sp.csr_matrix((sign, (rows, np.arange(k))), shape=(data.A.shape[0], k))
        A = sp.hstack([data.A, S]).tocsr()
        ext = MILPData(np.concatenate([data.c, np.full(k, penalty)]), A, data.senses, data.rhs,
                       np.concatenate([data.lb, np.zeros(k)]),
                       np.concatenate([data.ub, np.full(k, np.inf)]),
                       np.concatenate([data.is_binary, np.zeros(k, dtype=bool)]))
        return cls(ext, n, rows)

    def lift(self, x: np.ndarray) -> np.ndarray:
        """Extend an original assignment with the smallest slack that makes it feasible."""
        ax = self.data.A[self.rows, :self.n] @ x
        rhs = self.data.rhs[self.rows]
        short = np.where(self.data.senses[self.rows] == "<=", ax - rhs, rhs - ax)
        return np.concatenate([x, np.maximum(short, 0.0)])

    def slack(self, z: np.ndarray) -> float:
        return float(z[self.n:].sum())


def _pin(data: MILPData, x: np.ndarray, mask: np.ndarray):
    lb, ub = data.lb.copy(), data.ub.copy()
    vals = np.where(data.is_binary, np.round(x), x)
    lb[mask] = ub[mask] = vals[mask]
    return lb, ub


def independent_plans(model, data: MILPData, own: Ownership,
                      time_limit: float = 60.0) -> np.ndarray | None:
    """Every vehicle planned on its own; passing orders are left at zero."""
    x = np.zeros(data.c.size)
    A = sp.csr_matrix(data.A)
    owner_of_entry = own.owner[A.indices]
    for task in model.tasks:
        cols = np.flatnonzero(own.owner == task.id)
        mine = np.add.reduceat(owner_of_entry == task.id, A.indptr[:-1]) \
            if A.nnz else np.zeros(A.shape[0], dtype=int)
        rows = np.flatnonzero((mine == np.diff(A.indptr)) & (np.diff(A.indptr) > 0))
        sub = MILPData(data.c[cols], A[rows][:, cols], data.senses[rows], data.rhs[rows],
                       data.lb[cols], data.ub[cols], data.is_binary[cols])
        sol = solve_highs(sub, time_limit=time_limit)
        if sol.x is None:
            return None
        x[cols] = sol.x
    return x


def order_by_entry(model, x: np.ndarray) -> np.ndarray:
    """Set each passing-order binary from the entry times of the two edges."""
    x = x.copy()
    g = model.graph
    for p in model.coupled:
        yi = x[model.var("y", p.i, p.edge_i)] > 0.5
        yj = x[model.var("y", p.j, p.edge_j)] > 0.5
        ti = x[model.var("t", p.i, g.edges[p.edge_i].source)]
        tj = x[model.var("t", p.j, g.edges[p.edge_j].source)]
        first = yi and yj and (ti, p.i) < (tj, p.j)
        if model.has_var("delta", p.i, p.edge_i, p.j, p.edge_j):
            x[model.var("delta", p.i, p.edge_i, p.j, p.edge_j)] = float(first)
        if model.has_var("delta", p.j, p.edge_j, p.i, p.edge_i):
            x[model.var("delta", p.j, p.edge_j, p.i, p.edge_i)] = float(yi and yj and not first)
    return x


def neighbourhood_search(data: MILPData, x: np.ndarray, vehicles: list[int], own: Ownership,
                         sizes: tuple[int, ...] = (1, 2), max_solves: int | None = None,
                         node_limit: int = SUB_NODES, solve_limit: float = SOLVE_LIMIT,
                         deadline: float | None = None, stop=None,
                         gap: float = SUB_GAP) -> HeuristicResult:
    """Variable-neighbourhood descent over groups of vehicles.

    Every group of ``sizes[0]`` vehicles is re-optimised against the rest;
    when a whole pass brings no improvement the next size is tried, and any
    improvement returns to the smallest size. ``own`` must describe the
    leading columns of ``data``; extra trailing columns (elastic slack) are
    never pinned. The search ends after ``max_solves`` sub-problems, at the
    wall-clock ``deadline``, or when ``stop(x)`` holds.
    """
    best = float(data.c @ x)
    trace: list[tuple[str, float]] = []
    pad = data.c.size - own.owner.size
    level = 0
    solves = 0
    sizes = tuple(s for s in sizes if s <= len(vehicles)) or (len(vehicles),)
    while level < len(sizes):
        improved = False
        for group in itertools.combinations(vehicles, sizes[level]):
            if (max_solves is not None and solves >= max_solves) or \
                    (deadline is not None and time.perf_counter() > deadline):
                return HeuristicResult(x, best, trace, solves)
            mask = np.concatenate([own.fix_mask(set(vehicles) - set(group)),
                                   np.zeros(pad, dtype=bool)])
            lb, ub = _pin(data, x, mask)
            sub = MILPData(data.c, data.A, data.senses, data.rhs, lb, ub, data.is_binary)
            limit = solve_limit
            if deadline is not None:
                limit = max(1.0, min(limit, deadline - time.perf_counter()))
            sol = solve_highs(sub, node_limit=node_limit, time_limit=limit, start=x, gap_tol=gap)
            solves += 1
            log.debug("free %s: %s nodes=%d wall=%.1fs objective=%.6g", group, sol.status,
                      sol.nodes, sol.wall_time, sol.objective)
            if sol.x is not None and sol.objective < best - 1e-7 * (1.0 + abs(best)) \
                    and data.max_violation(sol.x) <= FEAS_TOL:
                x, best = sol.x, sol.objective
                trace.append((f"free {group}", best))
                log.info("neighbourhood %s improved objective to %.6g", group, best)
                improved = True
                if stop is not None and stop(x):
                    return HeuristicResult(x, best, trace, solves)
        level = 0 if improved and level > 0 else level + (not improved)
    return HeuristicResult(x, best, trace, solves)


def build_incumbent(model, data: MILPData | None = None,
                    time_limit: float = 300.0) -> HeuristicResult:
    """Elastic start, slack removal and neighbourhood search on the true objective.

    ``time_limit`` is converted into a fixed number of node-limited
    sub-solves so that the result does not depend on machine speed; a
    wall-clock cap of four times the budget guards against slow sub-problems.
    """
    t0 = time.perf_counter()
    deadline = t0 + DEADLINE_FACTOR * time_limit
    budget = max(1, math.ceil(time_limit / SOLVE_ESTIMATE))
    data = data or MILPData.from_model(model)
    own = Ownership.of(model, data)
    vehicles = sorted(t.id for t in model.tasks)
    x = independent_plans(model, data, own, time_limit=max(1.0, time_limit / 4))
    if x is None:
        log.info("independent plans failed")
        return HeuristicResult(None, math.inf)
    x = order_by_entry(model, x)
    trace = [("independent", float(data.c @ x))]
    solves = 0
    if data.max_violation(x) > FEAS_TOL:
        el = Elastic.of(model, data)
        z = el.lift(x)
        if el.data.max_violation(z) > FEAS_TOL:
            log.info("independent plans violate rows that have no slack")
            return HeuristicResult(None, math.inf, trace)
        log.info("elastic start: overlap %.6g", el.slack(z))
        res = neighbourhood_search(el.data, z, vehicles, own, max_solves=budget,
                                   deadline=deadline, stop=lambda z: el.slack(z) <= FEAS_TOL)
        trace += [(f"elastic {name}", value) for name, value in res.trace]
        solves = res.solves
        if el.slack(res.x) > FEAS_TOL:
            log.info("elastic search ended with overlap %.6g", el.slack(res.x))
            return HeuristicResult(None, math.inf, trace, solves)
        x = res.x[:el.n]
        if data.max_violation(x) > FEAS_TOL:
            return HeuristicResult(None, math.inf, trace, solves)
    if len(vehicles) > 1 and solves < budget:
        res = neighbourhood_search(data, x, vehicles, own, max_solves=budget - solves,
                                   deadline=deadline)
        x = res.x
        trace += res.trace
        solves += res.solves
    log.info("heuristic used %d of %d sub-solves in %.1fs", solves, budget,
             time.perf_counter() - t0)
    return HeuristicResult(x, float(data.c @ x), trace, solves)
