"""Branch-and-bound over binary variables, an enumeration oracle and a HiGHS backend."""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import highspy
from scipy.optimize import linprog

from .errors import Infeasible, LimitReached, NumericalBreakdown, TooLarge
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LPStandardForm, solve_lp

log = logging.getLogger(__name__)

INT_TOL = 1e-6
GAP_TOL = 1e-6
BRUTE_FORCE_CAP = 20

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_GAP_LIMIT = "gap-limit"
STATUS_UNBOUNDED = "unbounded"


@dataclass
class MILPData:
    """Matrix form of a binary/continuous program: ``min c x``."""
    c: np.ndarray
    A: sp.csr_matrix
    senses: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    is_binary: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.A = sp.csr_matrix(self.A, dtype=float)
        if self.A.shape[1] != self.c.size:
            self.A = sp.csr_matrix((self.A.shape[0], self.c.size))
        self.senses = np.asarray(self.senses, dtype=object)
        self.rhs = np.asarray(self.rhs, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float).copy()
        self.ub = np.asarray(self.ub, dtype=float).copy()
        self.is_binary = np.asarray(self.is_binary, dtype=bool)
        self.lb[self.is_binary] = np.maximum(self.lb[self.is_binary], 0.0)
        self.ub[self.is_binary] = np.minimum(self.ub[self.is_binary], 1.0)

    @classmethod
    def from_model(cls, model) -> "MILPData":
        return cls(*model.matrices())

    @property
    def n_binaries(self) -> int:
        return int(self.is_binary.sum())

    def lp(self, lb=None, ub=None) -> LPStandardForm:
        return LPStandardForm(self.c, self.A, self.senses, self.rhs,
                              self.lb if lb is None else lb, self.ub if ub is None else ub)

    def row_bounds(self):
        lo = np.where(self.senses == "<=", -np.inf, self.rhs)
        hi = np.where(self.senses == ">=", np.inf, self.rhs)
        return lo, hi

    def max_violation(self, x: np.ndarray) -> float:
        ax = self.A @ x
        lo, hi = self.row_bounds()
        rows = np.maximum(lo - ax, 0.0) + np.maximum(ax - hi, 0.0)
        cols = np.maximum(self.lb - x, 0.0) + np.maximum(x - self.ub, 0.0)
        return float(max(rows.max(initial=0.0), cols.max(initial=0.0)))


@dataclass
class MILPSolution:
    status: str
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    nodes: int
    wall_time: float
    log: list[str] = field(default_factory=list)
    backend: str = "bnb"

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OPTIMAL

    def require(self) -> "MILPSolution":
        """Raise unless optimal; a limited run keeps its incumbent on the error."""
        if self.status == STATUS_INFEASIBLE:
            raise Infeasible("no feasible assignment exists")
        if self.status == STATUS_GAP_LIMIT:
            raise LimitReached(f"stopped with gap {self.gap:.3g}", self)
        if self.status != STATUS_OPTIMAL:
            raise Infeasible(f"solver returned {self.status}")
        return self


def _gap(incumbent: float, bound: float) -> float:
    if not math.isfinite(incumbent):
        return math.inf
    return max(0.0, incumbent - bound)


def _beats(value: float, incumbent: float, gap_tol: float) -> bool:
    """True when ``value`` is lower than the incumbent by more than the gap tolerance."""
    if not math.isfinite(incumbent):
        return value < incumbent
    return value < incumbent - gap_tol * (1.0 + abs(incumbent))


def _closed(incumbent: float, bound: float, gap_tol: float) -> bool:
    return _gap(incumbent, bound) <= gap_tol * (1.0 + abs(incumbent))


def _lp_simplex(data: MILPData, lb, ub):
    sol = solve_lp(data.lp(lb, ub))
    if sol.status == OPTIMAL:
        return OPTIMAL, sol.x, sol.objective
    return sol.status, None, math.inf if sol.status == INFEASIBLE else -math.inf


HIGHS_LP_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def _lp_highs(data: MILPData, lb, ub):
    le = data.senses == "<="
    ge = data.senses == ">="
    eq = data.senses == "="
    A = data.A
    A_ub = sp.vstack([A[np.flatnonzero(le)], -A[np.flatnonzero(ge)]]).tocsr()
    b_ub = np.concatenate([data.rhs[le], -data.rhs[ge]])
    kw = {}
    if A_ub.shape[0]:
        kw.update(A_ub=A_ub, b_ub=b_ub)
    if eq.any():
        kw.update(A_eq=A[np.flatnonzero(eq)], b_eq=data.rhs[eq])
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b)
              for a, b in zip(lb, ub)]
    res = linprog(data.c, bounds=bounds, method="highs", options=HIGHS_LP_OPTIONS, **kw)
    if res.status == 0:
        return OPTIMAL, res.x, float(res.fun)
    if res.status == 2:
        return INFEASIBLE, None, math.inf
    if res.status == 3:
        return UNBOUNDED, None, -math.inf
    raise NumericalBreakdown(f"HiGHS LP failed: {res.message}")


LP_BACKENDS = {"simplex": _lp_simplex, "highs": _lp_highs}


def polish(data: MILPData, x: np.ndarray, lp: str = "simplex"):
    """Round the binaries of ``x`` and re-optimise the continuous part.

    Removes the small big-M leakage that integrality tolerances allow.
    Returns ``(x, objective)`` or ``None`` when the rounded assignment is infeasible.
    """
    lb, ub = data.lb.copy(), data.ub.copy()
    fixed = np.round(x[data.is_binary])
    lb[data.is_binary] = ub[data.is_binary] = fixed
    status, xs, obj = LP_BACKENDS[lp](data, lb, ub)
    if status != OPTIMAL:
        return None
    xs = xs.copy()
    xs[data.is_binary] = fixed
    return xs, float(data.c @ xs)


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    depth: int = field(compare=False)
    lb: np.ndarray = field(compare=False, repr=False)
    ub: np.ndarray = field(compare=False, repr=False)


def _most_fractional(x, is_bin, tol):
    idx = np.flatnonzero(is_bin)
    frac = np.abs(x[idx] - np.round(x[idx]))
    if frac.size == 0 or frac.max() <= tol:
        return -1
    score = np.minimum(x[idx] - np.floor(x[idx]), np.ceil(x[idx]) - x[idx])
    # argmax returns the first maximiser, i.e. the lowest variable index
    return int(idx[int(np.argmax(np.round(score, 12)))])


def branch_and_bound(data: MILPData, node_limit: int | None = None,
                     time_limit: float | None = None, gap_tol: float = GAP_TOL,
                     int_tol: float = INT_TOL, lp: str = "simplex") -> MILPSolution:
    """Best-bound branch-and-bound with a depth-first plunge to the first incumbent."""
    t0 = time.perf_counter()
    solve = LP_BACKENDS[lp]
    lines: list[str] = []
    seq = itertools.count()
    incumbent, x_best = math.inf, None
    heap: list[_Node] = []
    dive: list[_Node] = []
    root = _Node(-math.inf, next(seq), 0, data.lb.copy(), data.ub.copy())
    dive.append(root)
    nodes = 0
    global_bound = -math.inf
    limited = False

    def open_bound():
        bounds = [n.bound for n in heap] + [n.bound for n in dive]
        return min(bounds) if bounds else incumbent

    while heap or dive:
        if node_limit is not None and nodes >= node_limit or \
                time_limit is not None and time.perf_counter() - t0 > time_limit:
            limited = True
            break
        node = dive.pop() if dive else heapq.heappop(heap)
        if not _beats(node.bound, incumbent, gap_tol):
            continue
        nodes += 1
        status, x, obj = solve(data, node.lb, node.ub)
        if status == UNBOUNDED:
            return MILPSolution(STATUS_UNBOUNDED, None, -math.inf, -math.inf, math.inf,
                                nodes, time.perf_counter() - t0, lines, "bnb")
        if status == OPTIMAL:
            # the parent bound is valid for the child; clamping keeps it monotone
            obj = max(obj, node.bound)
            j = _most_fractional(x, data.is_binary, int_tol)
            if _beats(obj, incumbent, gap_tol):
                if j < 0:
                    cand = polish(data, x, lp) or (x, float(data.c @ x))
                    if cand[1] < incumbent:
                        x_best, incumbent = cand
                        # plunge finished: remaining dive nodes join the best-bound pool
                        for n in dive:
                            heapq.heappush(heap, n)
                        dive.clear()
                else:
                    children = []
                    for val in (0.0, 1.0):
                        lb, ub = node.lb.copy(), node.ub.copy()
                        lb[j] = ub[j] = val
                        children.append(_Node(obj, next(seq), node.depth + 1, lb, ub))
                    if x_best is None:
                        # dive towards the nearer rounding first
                        near = int(round(x[j]))
                        dive.append(children[1 - near])
                        dive.append(children[near])
                    else:
                        for c in children:
                            heapq.heappush(heap, c)
        bound = min(open_bound(), incumbent)
        if bound < global_bound - 1e-9 * (1 + abs(global_bound)):
            raise AssertionError(f"best bound decreased from {global_bound} to {bound}")
        global_bound = max(global_bound, bound)
        lines.append(f"node={nodes} depth={node.depth} bound={global_bound:.10g} "
                     f"incumbent={incumbent:.10g} gap={_gap(incumbent, global_bound):.3g}")
        if x_best is not None and _closed(incumbent, global_bound, gap_tol):
            heap.clear()
            dive.clear()

    wall = time.perf_counter() - t0
    if x_best is None:
        status = STATUS_GAP_LIMIT if limited else STATUS_INFEASIBLE
        return MILPSolution(status, None, math.inf, open_bound() if limited else math.inf,
                            math.inf, nodes, wall, lines, "bnb")
    bound = min(open_bound(), incumbent) if limited else incumbent
    gap = _gap(incumbent, bound)
    status = STATUS_OPTIMAL if _closed(incumbent, bound, gap_tol) else STATUS_GAP_LIMIT
    return MILPSolution(status, x_best, incumbent, bound, gap, nodes, wall, lines, "bnb")


def _highs_model(data: MILPData):
    lp = highspy.HighsLp()
    n = data.c.size
    A = data.A.tocsc()
    lo, hi = data.row_bounds()
    lp.num_col_ = n
    lp.num_row_ = A.shape[0]
    lp.col_cost_ = data.c
    lp.col_lower_ = np.where(np.isfinite(data.lb), data.lb, -highspy.kHighsInf)
    lp.col_upper_ = np.where(np.isfinite(data.ub), data.ub, highspy.kHighsInf)
    lp.row_lower_ = np.where(np.isfinite(lo), lo, -highspy.kHighsInf)
    lp.row_upper_ = np.where(np.isfinite(hi), hi, highspy.kHighsInf)
    lp.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    lp.a_matrix_.start_ = A.indptr
    lp.a_matrix_.index_ = A.indices
    lp.a_matrix_.value_ = A.data
    lp.a_matrix_.num_col_ = n
    lp.a_matrix_.num_row_ = A.shape[0]
    lp.integrality_ = [highspy.HighsVarType.kInteger if b else highspy.HighsVarType.kContinuous
                       for b in data.is_binary]
    return lp


def solve_highs(data: MILPData, node_limit: int | None = None,
                time_limit: float | None = None, gap_tol: float = GAP_TOL,
                start: np.ndarray | None = None, threads: int = 1,
                log_file: str | None = None, options: dict | None = None) -> MILPSolution:
    """Solve with HiGHS; ``start`` is an optional feasible assignment used as first incumbent.

    ``options`` are passed to HiGHS verbatim and override the defaults set here.
    """
    t0 = time.perf_counter()
    h = highspy.Highs()
    h.setOptionValue("output_flag", log_file is not None)
    if log_file is not None:
        h.setOptionValue("log_to_console", False)
        h.setOptionValue("log_file", str(log_file))
    h.setOptionValue("mip_rel_gap", gap_tol)
    h.setOptionValue("random_seed", 0)
    h.setOptionValue("threads", int(threads))
    if time_limit is not None:
        h.setOptionValue("time_limit", float(time_limit))
    if node_limit is not None:
        h.setOptionValue("mip_max_nodes", int(node_limit))
    for key, value in (options or {}).items():
        h.setOptionValue(key, value)
    h.passModel(_highs_model(data))
    if start is not None:
        sol = highspy.HighsSolution()
        sol.col_value = list(np.asarray(start, dtype=float))
        sol.value_valid = True
        h.setSolution(sol)
    h.run()
    wall = time.perf_counter() - t0
    status = h.getModelStatus()
    info = h.getInfo()
    nodes = int(info.mip_node_count)
    bound = float(info.mip_dual_bound)
    lines = [f"highs status={h.modelStatusToString(status)} nodes={nodes} bound={bound:.10g}"]
    has_x = info.primal_solution_status == 2
    if status == highspy.HighsModelStatus.kInfeasible or not has_x:
        st = (STATUS_INFEASIBLE if status == highspy.HighsModelStatus.kInfeasible
              else STATUS_UNBOUNDED if status == highspy.HighsModelStatus.kUnbounded
              else STATUS_GAP_LIMIT)
        return MILPSolution(st, None, math.inf, bound, math.inf, nodes, wall, lines, "highs")
    x = np.array(h.getSolution().col_value)
    cand = polish(data, x, "highs")
    x, obj = cand if cand is not None else (x, float(data.c @ x))
    if not np.isfinite(bound):
        bound = obj
    bound = min(bound, obj)
    gap = _gap(obj, bound)
    optimal = status == highspy.HighsModelStatus.kOptimal or _closed(obj, bound, gap_tol)
    lines.append(f"polished objective={obj:.10g} gap={gap:.3g}")
    return MILPSolution(STATUS_OPTIMAL if optimal else STATUS_GAP_LIMIT, x, obj, bound, gap,
                        nodes, wall, lines, "highs")


# share of the time limit spent on the primal heuristic before the exact HiGHS run
HEURISTIC_SHARE = 0.6
HEURISTIC_DEFAULT = 180.0


def solve_milp(model, node_limit: int | None = None, time_limit: float | None = None,
               gap_tol: float = GAP_TOL, backend: str = "bnb", threads: int = 1,
               log_file: str | None = None, heuristic: float | None = None) -> MILPSolution:
    """Solve a ModelIR (or MILPData) to optimality within ``gap_tol``.

    ``backend`` is ``"bnb"`` for the built-in branch-and-bound, ``"highs"``
    for HiGHS, or ``"auto"`` which picks HiGHS above 40 binaries.

    With HiGHS and a multi-vehicle ModelIR, the neighbourhood heuristic of
    :mod:`cavdag.incumbent` first builds an incumbent for ``heuristic``
    seconds (default: a share of ``time_limit``; 0 disables it) and HiGHS
    starts from it. HiGHS gets the remaining time, or the whole of
    ``time_limit`` as a safety cap when ``node_limit`` is set.
    """
    data = model if isinstance(model, MILPData) else MILPData.from_model(model)
    if backend == "auto":
        backend = "bnb" if data.n_binaries <= 40 else "highs"
    if backend == "bnb":
        sol = branch_and_bound(data, node_limit, time_limit, gap_tol)
    elif backend == "highs":
        sol = _solve_highs_seeded(model, data, node_limit, time_limit, gap_tol, threads,
                                  log_file, heuristic)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    for line in sol.log:
        log.debug(line)
    log.info("milp %s: status=%s objective=%.10g nodes=%d wall=%.2fs", sol.backend,
             sol.status, sol.objective, sol.nodes, sol.wall_time)
    return sol


def _solve_highs_seeded(model, data, node_limit, time_limit, gap_tol, threads, log_file,
                        heuristic) -> MILPSolution:
    t0 = time.perf_counter()
    tasks = getattr(model, "tasks", ())
    if heuristic is None:
        heuristic = HEURISTIC_SHARE * time_limit if time_limit is not None else HEURISTIC_DEFAULT
    seed = None
    lines = []
    if len(tasks) > 1 and heuristic > 0:
        from .incumbent import build_incumbent  # imports this module
        res = build_incumbent(model, data, time_limit=heuristic)
        lines.append(f"heuristic objective={res.objective:.10g} "
                     f"steps={len(res.trace)} wall={time.perf_counter() - t0:.1f}s")
        seed = res.x
    # a node limit makes the stopping point reproducible; the clock is then only a safety cap
    if node_limit is not None or time_limit is None:
        remaining = time_limit
    else:
        remaining = max(1.0, time_limit - (time.perf_counter() - t0))
    sol = solve_highs(data, node_limit, remaining, gap_tol, start=seed, threads=threads,
                      log_file=log_file)
    if seed is not None and (sol.x is None or sol.objective > float(data.c @ seed)):
        # HiGHS rejected or lost the seed; the heuristic point is still feasible
        sol = MILPSolution(STATUS_GAP_LIMIT, seed, float(data.c @ seed), sol.bound,
                           _gap(float(data.c @ seed), sol.bound), sol.nodes, sol.wall_time,
                           sol.log, "highs")
    sol.log[:0] = lines
    sol.wall_time = time.perf_counter() - t0
    return sol


def brute_force_milp(model, max_binaries: int = BRUTE_FORCE_CAP,
                     lp: str = "highs") -> MILPSolution:
    """Enumerate every binary assignment and solve the remaining LP for each.

    Rows touching only binaries are screened in bulk before any LP is solved.
    """
    t0 = time.perf_counter()
    data = model if isinstance(model, MILPData) else MILPData.from_model(model)
    bins = np.flatnonzero(data.is_binary)
    nb = bins.size
    if nb > max_binaries:
        raise TooLarge(f"{nb} binaries exceed the enumeration cap of {max_binaries}")
    A = data.A.tocsc()
    cont = np.flatnonzero(~data.is_binary)
    touches_cont = np.asarray(abs(A[:, cont]).sum(axis=1)).ravel() > 0 if cont.size else \
        np.zeros(A.shape[0], dtype=bool)
    pure = np.flatnonzero(~touches_cont)
    Ab = A[pure][:, bins].toarray()
    lo, hi = data.row_bounds()
    lo, hi = lo[pure], hi[pure]

    fixed_lb, fixed_ub = data.lb[bins], data.ub[bins]
    solve = LP_BACKENDS[lp]
    best, x_best, evaluated = math.inf, None, 0
    chunk = 1 << 16
    total = 1 << nb
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        assign = ((idx[:, None] >> np.arange(nb)[None, :]) & 1).astype(float)
        ok = np.all((assign >= fixed_lb - 1e-12) & (assign <= fixed_ub + 1e-12), axis=1)
        if pure.size:
            act = assign @ Ab.T
            ok &= np.all((act >= lo - 1e-9) & (act <= hi + 1e-9), axis=1)
        for row in assign[ok]:
            lb, ub = data.lb.copy(), data.ub.copy()
            lb[bins] = ub[bins] = row
            status, x, obj = solve(data, lb, ub)
            evaluated += 1
            if status == UNBOUNDED:
                return MILPSolution(STATUS_UNBOUNDED, None, -math.inf, -math.inf, math.inf,
                                    evaluated, time.perf_counter() - t0, [], "brute-force")
            if status == OPTIMAL and obj < best:
                best, x_best = obj, x.copy()
                x_best[bins] = row
    wall = time.perf_counter() - t0
    lines = [f"enumerated={total} lp_solves={evaluated}"]
    if x_best is None:
        return MILPSolution(STATUS_INFEASIBLE, None, math.inf, math.inf, math.inf,
                            evaluated, wall, lines, "brute-force")
    return MILPSolution(STATUS_OPTIMAL, x_best, best, best, 0.0, evaluated, wall, lines,
                        "brute-force")


def objectives_match(a: float, b: float, rel: float = 1e-6) -> bool:
    """Relative comparison with unit floor so zero optima compare absolutely."""
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= rel * max(1.0, abs(a), abs(b))
