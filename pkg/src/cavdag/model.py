"""Assembly of the cooperative path-and-timing mixed-integer linear program.

Variables are registered with structured names; every constraint is linear
and optionally *gated*: ``expr (<=|>=|=) rhs`` holds only when the gate
expression (an affine function of binaries, e.g. ``1 - y``) evaluates to 0.
The big-M multiplier is applied when the model is finalised so it can be
sized from the constraint data.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyOutgoing
from .geometry import CriticalEdgePair, Footprint, angle_between, find_critical_pairs
from .graph import (VehicleSubgraph, WaypointGraph, check_acyclic, extract_subgraph,
                    longest_path_length, path_length_bounds)

log = logging.getLogger(__name__)

BINARY = "binary"
CONTINUOUS = "continuous"
LE, GE, EQ = "<=", ">=", "="

DEFAULT_WEIGHTS = (0.1, 1.0, 0.5, 0.5)  # travel time, velocity, acceleration, steering
GAMMA_MAX = 3.0
GAMMA_MIN = -4.5
ETA_MAX = 3.0
SLOW_FACTOR = 0.6
FAST_FACTOR = 1.3

# variable families whose deactivated value is zero
SLACK_FAMILIES = frozenset({"s_up", "s_lo", "g_up", "g_lo", "eta"})

# symbol -> (variable family or constant name, meaning)
SYMBOL_TABLE = {
    "y[i,e]": ("y", "vehicle i traverses edge e"),
    "t[i,v]": ("t", "time the centre of vehicle i reaches vertex v"),
    "s_up[i,e]": ("s_up", "excess of edge length over reference-speed travel"),
    "s_lo[i,e]": ("s_lo", "shortfall of edge length under reference-speed travel"),
    "m[i,k,v,a,b]": ("m", "speed region k selected for transition a->b at v"),
    "g_up[i,k,v,a,b]": ("g_up", "linearised acceleration slack"),
    "g_lo[i,k,v,a,b]": ("g_lo", "linearised deceleration slack"),
    "eta[i,k,v,a,b]": ("eta", "steering effort slack"),
    "delta[i,ei,j,ej]": ("delta", "vehicle i clears its critical region before j"),
    "l_e": ("const:edge_length", "edge length"),
    "V_r": ("const:v_ref", "reference speed"),
    "V_slow,V_fast": ("const:speed_bounds", "admissible speed range"),
    "V_k": ("const:regions", "speed region bounds and linearisation speed"),
    "V_init": ("const:v_init", "initial speed"),
    "gamma_max,gamma_min": ("const:accel_caps", "acceleration caps"),
    "eta_max": ("const:eta_max", "lateral acceleration cap"),
    "theta": ("const:turn_angle", "turn angle between consecutive edges"),
    "theta/s/D": ("const:critical_pairs", "critical-pair geometry"),
    "alpha_t,alpha_V,alpha_a,alpha_theta": ("const:weights", "objective weights"),
    "M": ("const:big_m", "big-M multiplier"),
}


@dataclass(frozen=True)
class VarRef:
    index: int
    name: tuple
    kind: str
    lb: float
    ub: float

    @property
    def family(self) -> str:
        return self.name[0]

    def label(self) -> str:
        parts = ["start" if p is None else str(p) for p in self.name[1:]]
        return f"{self.name[0]}_{'_'.join(parts)}" if parts else self.name[0]


class LinExpr:
    """Sparse affine expression ``sum coef[var] * var + constant``."""

    __slots__ = ("terms", "constant")

    def __init__(self, terms: Mapping[int, float] | Iterable[tuple[int, float]] = (),
                 constant: float = 0.0):
        self.terms: dict[int, float] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for k, v in items:
            self.terms[k] = self.terms.get(k, 0.0) + float(v)
        self.terms = {k: v for k, v in self.terms.items() if v != 0.0}
        self.constant = float(constant)

    def __add__(self, other: "LinExpr") -> "LinExpr":
        out = LinExpr(self.terms, self.constant + other.constant)
        for k, v in other.terms.items():
            out.terms[k] = out.terms.get(k, 0.0) + v
        out.terms = {k: v for k, v in out.terms.items() if v != 0.0}
        return out

    def scale(self, a: float) -> "LinExpr":
        return LinExpr({k: a * v for k, v in self.terms.items()}, a * self.constant)

    def __sub__(self, other: "LinExpr") -> "LinExpr":
        return self + other.scale(-1.0)

    def value(self, x: np.ndarray) -> float:
        return self.constant + sum(v * x[k] for k, v in self.terms.items())

    def __repr__(self):
        return f"LinExpr({self.terms}, {self.constant})"


def lin(*pairs: tuple[int, float], constant: float = 0.0) -> LinExpr:
    return LinExpr(pairs, constant)


@dataclass
class LinConstraint:
    """``expr sense rhs`` where ``expr`` already contains any big-M term.

    ``base`` and ``gate`` keep the ungated expression and the gate so the
    big-M sizing can be audited after the fact.
    """
    expr: LinExpr
    sense: str
    rhs: float
    tag: str
    base: LinExpr | None = None
    base_rhs: float | None = None
    gate: LinExpr | None = None
    big_m: float | None = None


@dataclass(frozen=True)
class VelocityRegions:
    slow: tuple[float, ...]
    fast: tuple[float, ...]
    ref: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.slow) == len(self.fast) == len(self.ref) >= 1):
            raise ValueError("region arrays must have equal positive length")
        for k, (a, b, r) in enumerate(zip(self.slow, self.fast, self.ref)):
            if not (0 < a < b):
                raise ValueError(f"region {k} must satisfy 0 < slow < fast")
            if not (a <= r <= b):
                raise ValueError(f"region {k} reference {r} outside [{a}, {b}]")
        for k in range(1, len(self.slow)):
            if not math.isclose(self.slow[k], self.fast[k - 1], rel_tol=1e-12):
                raise ValueError("regions must be contiguous and ordered")

    @property
    def v_slow(self) -> float:
        return self.slow[0]

    @property
    def v_fast(self) -> float:
        return self.fast[-1]

    def __len__(self):
        return len(self.slow)

    @classmethod
    def default(cls, v_ref: float, slow_factor: float = SLOW_FACTOR,
                fast_factor: float = FAST_FACTOR, k: int = 3) -> "VelocityRegions":
        """Partition ``[slow*V_r, fast*V_r]`` into ``k`` speed regions.

        For ``k == 3`` the interior breakpoints sit at 0.85 and 1.15 of the
        reference when those lie inside the range; the middle region linearises at
        the reference speed and the outer ones at their midpoints. Other
        ``k`` use an even split with midpoint references.
        """
        lo, hi = slow_factor * v_ref, fast_factor * v_ref
        if k == 1:
            return cls((lo,), (hi,), (min(max(v_ref, lo), hi),))
        if k == 3 and slow_factor < 0.85 and fast_factor > 1.15:
            bps = [lo, 0.85 * v_ref, 1.15 * v_ref, hi]
            refs = (0.5 * (bps[0] + bps[1]), v_ref, 0.5 * (bps[2] + bps[3]))
            return cls(tuple(bps[:-1]), tuple(bps[1:]), refs)
        bps = list(np.linspace(lo, hi, k + 1))
        return cls(tuple(bps[:-1]), tuple(bps[1:]),
                   tuple(0.5 * (a + b) for a, b in zip(bps[:-1], bps[1:])))


@dataclass(frozen=True)
class VehicleTask:
    id: int
    footprint: Footprint
    start: int
    destinations: tuple[int, ...]
    v_init: float
    v_ref: float
    heading: float
    regions: VelocityRegions


@dataclass(frozen=True)
class MILPParams:
    weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS
    gamma_max: float = GAMMA_MAX
    gamma_min: float = GAMMA_MIN
    eta_max: float = ETA_MAX
    big_m: float | None = None
    t_max: float | None = None


@dataclass
class DecisionProblem:
    graph: WaypointGraph
    tasks: Sequence[VehicleTask]
    params: MILPParams = field(default_factory=MILPParams)


@dataclass
class ModelIR:
    variables: list[VarRef] = field(default_factory=list)
    constraints: list[LinConstraint] = field(default_factory=list)
    objective: LinExpr = field(default_factory=LinExpr)
    weights: tuple[float, float, float, float] = DEFAULT_WEIGHTS
    big_m: float = 0.0
    t_max: float = 0.0
    # problem context, used to decode solutions
    graph: WaypointGraph | None = None
    tasks: Sequence[VehicleTask] = ()
    subgraphs: list[VehicleSubgraph] = field(default_factory=list)
    pairs: list[CriticalEdgePair] = field(default_factory=list)
    coupled: list[CriticalEdgePair] = field(default_factory=list)
    params: MILPParams = field(default_factory=MILPParams)
    _index: dict = field(default_factory=dict, repr=False)

    # -- registry ---------------------------------------------------------
    def add_var(self, name: tuple, kind: str = CONTINUOUS, lb: float = 0.0,
                ub: float = math.inf) -> int:
        if name in self._index:
            raise KeyError(f"duplicate variable {name}")
        if kind == BINARY:
            lb, ub = 0.0, 1.0
        if lb > ub:
            raise ValueError(f"bounds of {name} are inverted: [{lb}, {ub}]")
        ref = VarRef(len(self.variables), name, kind, float(lb), float(ub))
        self.variables.append(ref)
        self._index[name] = ref.index
        return ref.index

    def var(self, *name) -> int:
        return self._index[tuple(name)]

    def has_var(self, *name) -> bool:
        return tuple(name) in self._index

    def add(self, expr: LinExpr, sense: str, rhs: float, tag: str,
            gate: LinExpr | None = None) -> None:
        """Add ``expr sense rhs``, relaxed by big-M whenever ``gate`` >= 1."""
        if not math.isfinite(rhs):
            raise ValueError(f"non-finite rhs in {tag}")
        self.constraints.append(LinConstraint(expr, sense, float(rhs), tag, gate=gate))

    @property
    def n_binaries(self) -> int:
        return sum(v.kind == BINARY for v in self.variables)

    def stats(self) -> dict:
        fams: dict[str, int] = {}
        for v in self.variables:
            fams[v.family] = fams.get(v.family, 0) + 1
        tags: dict[str, int] = {}
        for c in self.constraints:
            tags[c.tag] = tags.get(c.tag, 0) + 1
        return {"variables": len(self.variables), "binaries": self.n_binaries,
                "constraints": len(self.constraints), "big_m": self.big_m,
                "t_max": self.t_max, "families": fams, "tags": tags,
                "critical_pairs": len(self.pairs), "coupled_pairs": len(self.coupled)}

    # -- big-M -------------------------------------------------------------
    def finalize(self, big_m: float | None = None) -> None:
        """Fold ``M * gate`` into every gated row.

        With ``big_m=None`` each row gets its own M, sized by interval
        arithmetic so the row is slack whenever its gate is at least one.
        """
        largest = 0.0
        for c in self.constraints:
            if c.gate is None or c.base is not None:
                continue
            if big_m is None:
                need = row_big_m(self, c)
                m = math.ceil((1.05 * need + 1e-3) * 1000.0) / 1000.0
            else:
                m = float(big_m)
            c.base, c.base_rhs, c.big_m = c.expr, c.rhs, m
            largest = max(largest, m)
            if c.sense == LE:
                c.expr = c.expr - c.gate.scale(m)
            elif c.sense == GE:
                c.expr = c.expr + c.gate.scale(m)
            else:
                raise ValueError("equality constraints cannot be gated")
            # constant parts of the gate move to the rhs
            c.rhs -= c.expr.constant
            c.expr = LinExpr(c.expr.terms)
        self.big_m = largest

    # -- matrix form -------------------------------------------------------
    def matrices(self):
        """Return ``(c, A, senses, rhs, lb, ub, is_binary)`` with CSR ``A``."""
        n = len(self.variables)
        rows, cols, vals = [], [], []
        rhs = np.empty(len(self.constraints))
        senses = np.empty(len(self.constraints), dtype=object)
        for r, c in enumerate(self.constraints):
            for k, v in c.expr.terms.items():
                rows.append(r)
                cols.append(k)
                vals.append(v)
            rhs[r] = c.rhs - c.expr.constant
            senses[r] = c.sense
        A = sp.csr_matrix((vals, (rows, cols)), shape=(len(self.constraints), n))
        cvec = np.zeros(n)
        for k, v in self.objective.terms.items():
            cvec[k] = v
        lb = np.array([v.lb for v in self.variables])
        ub = np.array([v.ub for v in self.variables])
        is_bin = np.array([v.kind == BINARY for v in self.variables])
        return cvec, A, senses, rhs, lb, ub, is_bin

    def objective_value(self, x: np.ndarray) -> float:
        return self.objective.value(x)


# ---------------------------------------------------------------------------
# emitters


def _t(model, i, v):
    return model.var("t", i, v)


def _y(model, i, e):
    return model.var("y", i, e)


def _transitions(graph, sub):
    """(v, alpha, beta) for every intermediate vertex of a subgraph."""
    for v in sub.intermediate:
        for a in sub.in_edges(graph, v):
            for b in sub.out_edges(graph, v):
                yield v, a, b


def time_windows(graph: WaypointGraph, task, sub, t_max: float) -> dict[int, tuple[float, float]]:
    """Earliest and latest arrival at each vertex implied by the speed range."""
    short, long = path_length_bounds(graph, sub)
    reg = task.regions
    return {v: (short[v] / reg.v_fast, min(t_max, long[v] / reg.v_slow)) for v in sub.vertices}


def register_variables(model: ModelIR, graph: WaypointGraph, tasks, subgraphs,
                       pairs, t_max: float) -> None:
    for task, sub in zip(tasks, subgraphs):
        i = task.id
        windows = time_windows(graph, task, sub, t_max)
        for e in sub.edges:
            model.add_var(("y", i, e), BINARY)
        for v in sorted(sub.vertices):
            lo, hi = windows[v]
            model.add_var(("t", i, v), CONTINUOUS, lo, hi)
        for e in sub.edges:
            model.add_var(("s_up", i, e))
            model.add_var(("s_lo", i, e))
        K = len(task.regions)
        blocks = [(v, a, b) for v, a, b in _transitions(graph, sub)]
        blocks += [(sub.start, None, b) for b in sub.out_edges(graph, sub.start)]
        for v, a, b in blocks:
            for k in range(K):
                model.add_var(("m", i, k, v, a, b), BINARY)
            for k in range(K):
                model.add_var(("g_up", i, k, v, a, b))
                model.add_var(("g_lo", i, k, v, a, b))
                model.add_var(("eta", i, k, v, a, b))
    for p in pairs:
        if not model.has_var("delta", p.i, p.edge_i, p.j, p.edge_j):
            model.add_var(("delta", p.i, p.edge_i, p.j, p.edge_j), BINARY)


def emit_path_constraints(model: ModelIR, graph: WaypointGraph, tasks, subgraphs) -> int:
    n0 = len(model.constraints)
    for task, sub in zip(tasks, subgraphs):
        i = task.id
        out = sub.out_edges(graph, sub.start)
        if not out:
            raise EmptyOutgoing(f"vehicle {i}: start vertex {sub.start} has no outgoing edge")
        model.add(lin(*[(_y(model, i, e), 1.0) for e in out]), EQ, 1.0, "path_start")
        incoming = [e for d in sorted(sub.destinations) for e in sub.in_edges(graph, d)]
        model.add(lin(*[(_y(model, i, e), 1.0) for e in incoming]), EQ, 1.0, "path_destination")
        for v in sub.intermediate:
            terms = [(_y(model, i, e), 1.0) for e in sub.in_edges(graph, v)]
            terms += [(_y(model, i, e), -1.0) for e in sub.out_edges(graph, v)]
            model.add(lin(*terms), EQ, 0.0, "path_continuity")
    return len(model.constraints) - n0


def emit_velocity_constraints(model: ModelIR, graph: WaypointGraph, tasks, subgraphs) -> int:
    n0 = len(model.constraints)
    for task, sub in zip(tasks, subgraphs):
        i, reg = task.id, task.regions
        vr, vs, vf = task.v_ref, reg.v_slow, reg.v_fast
        for e in sub.edges:
            edge = graph.edges[e]
            t1, t2 = _t(model, i, edge.source), _t(model, i, edge.target)
            y = _y(model, i, e)
            su, sl = model.var("s_up", i, e), model.var("s_lo", i, e)
            gate = lin((y, -1.0), constant=1.0)
            # l - V_r (t2 - t1) <= s_up ; >= -s_lo
            model.add(lin((t2, -vr), (t1, vr), (su, -1.0)), LE, -edge.length, "velocity_up", gate)
            model.add(lin((t2, -vr), (t1, vr), (sl, 1.0)), GE, -edge.length, "velocity_lo", gate)
            model.add(lin((su, 1.0), (t2, -(vf - vr)), (t1, vf - vr)), LE, 0.0, "velocity_cap_up", gate)
            model.add(lin((sl, 1.0), (t2, -(vr - vs)), (t1, vr - vs)), LE, 0.0, "velocity_cap_lo", gate)
    return len(model.constraints) - n0


def emit_region_constraints(model: ModelIR, graph: WaypointGraph, tasks, subgraphs) -> int:
    n0 = len(model.constraints)
    for task, sub in zip(tasks, subgraphs):
        i, reg = task.id, task.regions
        K = len(reg)
        for v, a, b in _transitions(graph, sub):
            ea, eb = graph.edges[a], graph.edges[b]
            la_lb = ea.length + eb.length
            ms = [model.var("m", i, k, v, a, b) for k in range(K)]
            t_a1, t_b2 = _t(model, i, ea.source), _t(model, i, eb.target)
            gate = lin((_y(model, i, a), -1.0), (_y(model, i, b), -1.0), constant=2.0)
            model.add(lin(*[(m, 1.0) for m in ms]), EQ, 1.0, "region_onehot")
            slow = [(m, la_lb / reg.slow[k]) for k, m in enumerate(ms)]
            fast = [(m, la_lb / reg.fast[k]) for k, m in enumerate(ms)]
            model.add(lin(*slow, (t_b2, -1.0), (t_a1, 1.0)), GE, 0.0, "region_slow", gate)
            model.add(lin(*fast, (t_b2, -1.0), (t_a1, 1.0)), LE, 0.0, "region_fast", gate)
        for b in sub.out_edges(graph, sub.start):
            eb = graph.edges[b]
            ms = [model.var("m", i, k, sub.start, None, b) for k in range(K)]
            t_s, t_b2 = _t(model, i, sub.start), _t(model, i, eb.target)
            gate = lin((_y(model, i, b), -1.0), constant=1.0)
            model.add(lin(*[(m, 1.0) for m in ms]), EQ, 1.0, "region_onehot_start")
            slow = [(m, eb.length / reg.slow[k]) for k, m in enumerate(ms)]
            fast = [(m, eb.length / reg.fast[k]) for k, m in enumerate(ms)]
            model.add(lin(*slow, (t_b2, -1.0), (t_s, 1.0)), GE, 0.0, "region_slow_start", gate)
            model.add(lin(*fast, (t_b2, -1.0), (t_s, 1.0)), LE, 0.0, "region_fast_start", gate)
    return len(model.constraints) - n0


def emit_acceleration_constraints(model: ModelIR, graph: WaypointGraph, tasks, subgraphs,
                                  gamma_max: float = GAMMA_MAX,
                                  gamma_min: float = GAMMA_MIN) -> int:
    n0 = len(model.constraints)
    for task, sub in zip(tasks, subgraphs):
        i, reg = task.id, task.regions
        for v, a, b in _transitions(graph, sub):
            ea, eb = graph.edges[a], graph.edges[b]
            t_a1, t_v, t_b2 = _t(model, i, ea.source), _t(model, i, v), _t(model, i, eb.target)
            ya, yb = _y(model, i, a), _y(model, i, b)
            # (t_v - t_a1)/l_a - (t_b2 - t_v)/l_b
            xi = [(t_v, 1.0 / ea.length + 1.0 / eb.length), (t_a1, -1.0 / ea.length),
                  (t_b2, -1.0 / eb.length)]
            for k, vk in enumerate(reg.ref):
                m = model.var("m", i, k, v, a, b)
                gu, gl = model.var("g_up", i, k, v, a, b), model.var("g_lo", i, k, v, a, b)
                gate = lin((ya, -1.0), (yb, -1.0), (m, -1.0), constant=3.0)
                _accel_rows(model, xi, 0.0, gu, gl, t_b2, t_a1, vk, gamma_max, gamma_min,
                            gate, "accel")
        for b in sub.out_edges(graph, sub.start):
            eb = graph.edges[b]
            t_s, t_b2 = _t(model, i, sub.start), _t(model, i, eb.target)
            yb = _y(model, i, b)
            for k, vk in enumerate(reg.ref):
                m = model.var("m", i, k, sub.start, None, b)
                gu = model.var("g_up", i, k, sub.start, None, b)
                gl = model.var("g_lo", i, k, sub.start, None, b)
                # (2 V_k - V_init)/V_k^2 - (t_b2 - t_s)/l_b
                xi = [(t_b2, -1.0 / eb.length), (t_s, 1.0 / eb.length)]
                const = (2.0 * vk - task.v_init) / vk ** 2
                gate = lin((yb, -1.0), (m, -1.0), constant=2.0)
                _accel_rows(model, xi, const, gu, gl, t_b2, t_s, vk, gamma_max, gamma_min,
                            gate, "accel_start")
    return len(model.constraints) - n0


def _accel_rows(model, xi, const, gu, gl, t_end, t_begin, vk, gamma_max, gamma_min, gate, tag):
    model.add(lin(*xi, (gu, -1.0)), LE, -const, tag + "_up", gate)
    model.add(lin(*xi, (gl, 1.0)), GE, -const, tag + "_lo", gate)
    cu = gamma_max / (2.0 * vk ** 2)
    cl = -gamma_min / (2.0 * vk ** 2)
    model.add(lin((gu, 1.0), (t_end, -cu), (t_begin, cu)), LE, 0.0, tag + "_cap_up", gate)
    model.add(lin((gl, 1.0), (t_end, -cl), (t_begin, cl)), LE, 0.0, tag + "_cap_lo", gate)


def turn_angle(graph: WaypointGraph, a: int, b: int) -> float:
    return angle_between(graph.edge_vector(a), graph.edge_vector(b))


def start_angle(graph: WaypointGraph, heading: float, b: int) -> float:
    return angle_between((math.cos(heading), math.sin(heading)), graph.edge_vector(b))


def emit_steering_constraints(model: ModelIR, graph: WaypointGraph, tasks, subgraphs,
                              eta_max: float = ETA_MAX) -> int:
    n0 = len(model.constraints)
    for task, sub in zip(tasks, subgraphs):
        i, reg = task.id, task.regions
        for v, a, b in _transitions(graph, sub):
            ea, eb = graph.edges[a], graph.edges[b]
            t_a1, t_b2 = _t(model, i, ea.source), _t(model, i, eb.target)
            ya, yb = _y(model, i, a), _y(model, i, b)
            theta = turn_angle(graph, a, b)
            for k, vk in enumerate(reg.ref):
                m = model.var("m", i, k, v, a, b)
                eta = model.var("eta", i, k, v, a, b)
                gate = lin((ya, -1.0), (yb, -1.0), (m, -1.0), constant=3.0)
                model.add(lin((eta, -1.0)), LE, -vk * theta, "steer", gate)
                model.add(lin((eta, 1.0), (t_b2, -eta_max), (t_a1, eta_max)), LE, 0.0,
                          "steer_cap", gate)
        for b in sub.out_edges(graph, sub.start):
            eb = graph.edges[b]
            t_s, t_b2 = _t(model, i, sub.start), _t(model, i, eb.target)
            yb = _y(model, i, b)
            theta = start_angle(graph, task.heading, b)
            for k, vk in enumerate(reg.ref):
                m = model.var("m", i, k, sub.start, None, b)
                eta = model.var("eta", i, k, sub.start, None, b)
                gate = lin((yb, -1.0), (m, -1.0), constant=2.0)
                model.add(lin((eta, -1.0)), LE, -vk * theta, "steer_start", gate)
                model.add(lin((eta, 1.0), (t_b2, -eta_max), (t_s, eta_max)), LE, 0.0,
                          "steer_cap_start", gate)
    return len(model.constraints) - n0


def _interp(model, graph, vehicle, edge, theta):
    """Interpolated time at fraction ``theta`` of ``edge`` as (var, coef) pairs."""
    e = graph.edges[edge]
    return [(_t(model, vehicle, e.source), 1.0 - theta), (_t(model, vehicle, e.target), theta)]


def _scaled(pairs, a):
    return [(k, a * v) for k, v in pairs]


DEGENERATE_EPS = 1e-6


def collision_branches(p: CriticalEdgePair) -> tuple[bool, bool]:
    """Which orders use the two-row parallelogram form: (i after j, i before j).

    The parallelogram rows need the acute-angle case and non-degenerate
    critical regions; otherwise the single precedence row is used.
    """
    if not p.same_direction:
        return False, False
    d = p.safety_distance
    proper = p.s_hat2 - p.s_hat1 > DEGENERATE_EPS and p.s2 - p.s1 > DEGENERATE_EPS
    return proper and p.s1 < p.s_hat2 - d, proper and p.s2 > p.s_hat1 + d


def _ratio(num, den):
    # clipping only ever moves the interpolated time in the conservative direction
    return min(1.0, max(0.0, num / den))


def emit_collision_constraints(model: ModelIR, graph: WaypointGraph,
                               pairs: Sequence[CriticalEdgePair]) -> int:
    n0 = len(model.constraints)
    done = set()
    for p in pairs:
        d_ij = model.var("delta", *_delta_key(p.i, p.edge_i, p.j, p.edge_j))
        d_ji = model.var("delta", *_delta_key(p.j, p.edge_j, p.i, p.edge_i))
        unordered = frozenset([(p.i, p.edge_i), (p.j, p.edge_j)])
        if unordered not in done:
            done.add(unordered)
            yi, yj = _y(model, p.i, p.edge_i), _y(model, p.j, p.edge_j)
            model.add(lin((yi, 1.0), (yj, 1.0)), LE, 1.0, "collision_exclusive",
                      lin((d_ij, 1.0), (d_ji, 1.0)))
            model.add(lin((d_ij, 1.0), (d_ji, 1.0)), LE, 1.0, "collision_order")

        ti1 = _interp(model, graph, p.i, p.edge_i, p.theta_i[0])
        ti2 = _interp(model, graph, p.i, p.edge_i, p.theta_i[1])
        tj1 = _interp(model, graph, p.j, p.edge_j, p.theta_j[0])
        tj2 = _interp(model, graph, p.j, p.edge_j, p.theta_j[1])
        after, before = collision_branches(p)
        D = p.safety_distance

        gate = lin((d_ji, -1.0), constant=1.0)  # i passes after j
        if after:
            r1 = _ratio(p.s1 - (p.s_hat1 - D), p.s_hat2 - p.s_hat1)
            model.add(lin(*ti1, *_scaled(tj2, -r1), *_scaled(tj1, -(1 - r1))), GE, 0.0,
                      "collision_after_entry", gate)
            r2 = _ratio((p.s_hat2 - D) - p.s1, p.s2 - p.s1)
            model.add(lin(*tj2, *_scaled(ti2, -r2), *_scaled(ti1, -(1 - r2))), LE, 0.0,
                      "collision_after_exit", gate)
        else:
            model.add(lin(*ti1, *_scaled(tj2, -1.0)), GE, 0.0, "collision_after", gate)

        gate = lin((d_ij, -1.0), constant=1.0)  # i passes before j
        if before:
            r3 = _ratio(p.s2 - (p.s_hat1 + D), p.s_hat2 - p.s_hat1)
            model.add(lin(*ti2, *_scaled(tj2, -r3), *_scaled(tj1, -(1 - r3))), LE, 0.0,
                      "collision_before_exit", gate)
            r4 = _ratio((p.s_hat1 + D) - p.s1, p.s2 - p.s1)
            model.add(lin(*tj1, *_scaled(ti2, -r4), *_scaled(ti1, -(1 - r4))), GE, 0.0,
                      "collision_before_entry", gate)
        else:
            model.add(lin(*ti2, *_scaled(tj1, -1.0)), LE, 0.0, "collision_before", gate)
    return len(model.constraints) - n0


def _delta_key(i, ei, j, ej):
    return (i, ei, j, ej)


def emit_objective(model: ModelIR, graph: WaypointGraph, tasks, subgraphs,
                   weights=DEFAULT_WEIGHTS) -> LinExpr:
    w_t, w_v, w_a, w_th = weights
    terms = []
    for task, sub in zip(tasks, subgraphs):
        i = task.id
        for d in sorted(sub.destinations):
            terms.append((_t(model, i, d), w_t))
        for e in sub.edges:
            terms.append((model.var("s_up", i, e), w_v))
            terms.append((model.var("s_lo", i, e), w_v))
    for ref in model.variables:
        if ref.family in ("g_up", "g_lo"):
            task = next(t for t in tasks if t.id == ref.name[1])
            vk = task.regions.ref[ref.name[2]]
            terms.append((ref.index, w_a * vk ** 2))
        elif ref.family == "eta":
            terms.append((ref.index, w_th))
    model.objective = LinExpr(terms)
    model.weights = tuple(weights)
    return model.objective


# ---------------------------------------------------------------------------
# big-M sizing and audits


def _interval(expr: LinExpr, variables: Sequence[VarRef], t_max: float) -> tuple[float, float]:
    lo = hi = expr.constant
    for k, c in expr.terms.items():
        ref = variables[k]
        if ref.family in SLACK_FAMILIES:
            a = b = 0.0
        elif ref.family == "t":
            a, b = ref.lb, min(ref.ub, t_max)
        else:
            a, b = ref.lb, ref.ub
        lo += min(c * a, c * b)
        hi += max(c * a, c * b)
    return lo, hi


def row_big_m(model: ModelIR, c: LinConstraint) -> float:
    """M needed to switch off one gated row over the variable box."""
    expr = c.base if c.base is not None else c.expr
    rhs = c.base_rhs if c.base is not None else c.rhs
    lo, hi = _interval(expr, model.variables, model.t_max)
    return max(0.0, hi - rhs if c.sense == LE else rhs - lo)


def required_big_m(model: ModelIR) -> float:
    """Largest per-row M over all gated rows."""
    return max((row_big_m(model, c) for c in model.constraints if c.gate is not None),
               default=0.0)


def check_big_m(model: ModelIR, tol: float = 1e-9) -> list[str]:
    """Verify every finalised gated row is slack whenever its gate is >= 1.

    Gate binaries are enumerated over the assignments that switch the row
    off; every other variable ranges over its box (slack families at zero).
    Returns descriptions of offending rows.
    """
    bad = []
    for r, c in enumerate(model.constraints):
        if c.gate is None:
            continue
        keys = sorted(c.gate.terms)
        rest = LinExpr({k: v for k, v in c.expr.terms.items() if k not in c.gate.terms})
        lo, hi = _interval(rest, model.variables, model.t_max)
        for bits in range(1 << len(keys)):
            vals = {k: float((bits >> n) & 1) for n, k in enumerate(keys)}
            if c.gate.constant + sum(c.gate.terms[k] * vals[k] for k in keys) < 1 - 1e-12:
                continue
            fixed = sum(c.expr.terms.get(k, 0.0) * vals[k] for k in keys)
            if c.sense == LE and fixed + hi > c.rhs + tol:
                bad.append(f"row {r} [{c.tag}] exceeds rhs by {fixed + hi - c.rhs:.6g}")
            elif c.sense == GE and fixed + lo < c.rhs - tol:
                bad.append(f"row {r} [{c.tag}] falls short by {c.rhs - fixed - lo:.6g}")
    return bad


def linearity_audit(model: ModelIR) -> list[str]:
    """Structural scan: every row and the objective are finite affine forms."""
    problems = []
    n = len(model.variables)

    def scan(expr, where):
        if not isinstance(expr, LinExpr):
            problems.append(f"{where}: not an affine expression")
            return
        for k, v in expr.terms.items():
            if not isinstance(k, (int, np.integer)) or not 0 <= k < n:
                problems.append(f"{where}: unknown variable {k!r}")
            if not isinstance(v, float) or not math.isfinite(v):
                problems.append(f"{where}: coefficient {v!r} is not a finite scalar")
            if v == 0.0:
                problems.append(f"{where}: explicit zero coefficient")

    for r, c in enumerate(model.constraints):
        scan(c.expr, f"row {r} [{c.tag}]")
        if c.sense not in (LE, GE, EQ):
            problems.append(f"row {r}: bad sense {c.sense!r}")
        if not math.isfinite(c.rhs):
            problems.append(f"row {r}: non-finite rhs")
    scan(model.objective, "objective")
    for ref in model.variables:
        if ref.family in SLACK_FAMILIES and model.objective.terms.get(ref.index, 0.0) < 0:
            problems.append(f"objective: negative weight on slack {ref.name}")
    return problems


# ---------------------------------------------------------------------------


def horizon_bound(graph: WaypointGraph, tasks, subgraphs) -> float:
    longest = max(longest_path_length(graph, s) for s in subgraphs)
    slowest = min(t.regions.v_slow for t in tasks)
    return float(math.ceil(longest / slowest))


def build_subgraphs(problem: DecisionProblem) -> list[VehicleSubgraph]:
    check_acyclic(problem.graph)
    return [extract_subgraph(problem.graph, t.start, t.destinations, vehicle=t.id)
            for t in problem.tasks]


def _presence(model: ModelIR, task, vehicle: int, edge: int, theta) -> tuple[float, float]:
    """Earliest entry into and latest exit from a critical region."""
    e = model.graph.edges[edge]
    src, tgt = model.variables[model.var("t", vehicle, e.source)], \
        model.variables[model.var("t", vehicle, e.target)]
    quickest = e.length / task.regions.v_fast
    return src.lb + theta[0] * quickest, tgt.ub - (1.0 - theta[1]) * quickest


def separated_by_windows(model: ModelIR, p: CriticalEdgePair) -> bool:
    """True when one vehicle always leaves its critical region before the other enters."""
    tasks = {t.id: t for t in model.tasks}
    in_i, out_i = _presence(model, tasks[p.i], p.i, p.edge_i, p.theta_i)
    in_j, out_j = _presence(model, tasks[p.j], p.j, p.edge_j, p.theta_j)
    return out_i <= in_j or out_j <= in_i


def assemble(problem: DecisionProblem, pairs: Sequence[CriticalEdgePair] | None = None,
             prune_pairs: bool = True) -> ModelIR:
    """Build the complete mixed-integer program for a decision problem."""
    graph, tasks, params = problem.graph, list(problem.tasks), problem.params
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise ValueError("vehicle ids must be unique")
    subgraphs = build_subgraphs(problem)
    if pairs is None:
        pairs = find_critical_pairs(graph, subgraphs, {t.id: t.footprint for t in tasks})
    t_max = params.t_max if params.t_max is not None else horizon_bound(graph, tasks, subgraphs)

    model = ModelIR(graph=graph, tasks=tasks, subgraphs=subgraphs, pairs=list(pairs),
                    params=params, t_max=t_max)
    register_variables(model, graph, tasks, subgraphs, [], t_max)
    # pairs whose time windows cannot overlap never need an ordering decision
    model.coupled = [p for p in pairs if not (prune_pairs and separated_by_windows(model, p))]
    for p in model.coupled:
        model.add_var(("delta", p.i, p.edge_i, p.j, p.edge_j), BINARY)
    emit_path_constraints(model, graph, tasks, subgraphs)
    emit_velocity_constraints(model, graph, tasks, subgraphs)
    emit_region_constraints(model, graph, tasks, subgraphs)
    emit_acceleration_constraints(model, graph, tasks, subgraphs, params.gamma_max, params.gamma_min)
    emit_steering_constraints(model, graph, tasks, subgraphs, params.eta_max)
    emit_collision_constraints(model, graph, model.coupled)
    emit_objective(model, graph, tasks, subgraphs, params.weights)

    model.finalize(params.big_m)
    log.info("assembled model: %s", {k: v for k, v in model.stats().items()
                                      if k not in ("families", "tags")})
    return model


# ---------------------------------------------------------------------------
# text dump


def _lp_terms(expr: LinExpr, names: list[str]) -> str:
    if not expr.terms:
        return "0 " + names[0] if names else "0"
    out = []
    for k in sorted(expr.terms):
        v = expr.terms[k]
        sign = "-" if v < 0 else "+"
        out.append(f"{sign} {abs(v):.12g} {names[k]}")
    text = " ".join(out)
    return text[2:] if text.startswith("+ ") else text


def write_lp(model: ModelIR, path, title: str = "cavdag") -> None:
    """Write the finalised model in CPLEX LP format; rows are named ``<tag>_<index>``."""
    names = [v.label() for v in model.variables]
    senses = {LE: "<=", GE: ">=", EQ: "="}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"\\ {title}: {len(model.variables)} columns, {model.n_binaries} binaries, "
                 f"{len(model.constraints)} rows, largest big-M {model.big_m:.6g}\n")
        fh.write("Minimize\n")
        fh.write(f" obj: {_lp_terms(model.objective, names)}\n")
        fh.write("Subject To\n")
        for r, c in enumerate(model.constraints):
            rhs = c.rhs - c.expr.constant
            fh.write(f" {c.tag}_{r}: {_lp_terms(c.expr, names)} {senses[c.sense]} {rhs:.12g}\n")
        fh.write("Bounds\n")
        for ref, name in zip(model.variables, names):
            if ref.kind == BINARY:
                continue
            hi = "+inf" if math.isinf(ref.ub) else f"{ref.ub:.12g}"
            fh.write(f" {ref.lb:.12g} <= {name} <= {hi}\n")
        fh.write("Binaries\n")
        for ref, name in zip(model.variables, names):
            if ref.kind == BINARY:
                fh.write(f" {name}\n")
        fh.write("End\n")
