"""Decoding solver output into per-vehicle paths and checking it against the model semantics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelIR

ACTIVE = 0.5


@dataclass
class VehicleDecision:
    vehicle: int
    vertices: list[int]
    edges: list[int]
    times: list[float]
    # (vertex, incoming edge or None at the start, outgoing edge, region index)
    regions: list[tuple[int, int | None, int, int]] = field(default_factory=list)

    @property
    def arrival(self) -> float:
        return self.times[-1]


@dataclass
class DecisionSolution:
    vehicles: dict[int, VehicleDecision]
    objective: float
    x: np.ndarray | None = None

    def arrival_order(self) -> list[int]:
        return sorted(self.vehicles, key=lambda i: (self.vehicles[i].arrival, i))


def _active_edges(model: ModelIR, x, sub):
    i = sub.vehicle
    return [e for e in sub.edges if x[model.var("y", i, e)] > ACTIVE]


def decode(model: ModelIR, x: np.ndarray, objective: float = math.nan) -> DecisionSolution:
    """Follow the active edges from each start vertex."""
    graph = model.graph
    out = {}
    for task, sub in zip(model.tasks, model.subgraphs):
        i = task.id
        active = set(_active_edges(model, x, sub))
        v = sub.start
        verts, edges = [v], []
        while v not in sub.destinations or any(e in active for e in sub.out_edges(graph, v)):
            nxt = [e for e in sub.out_edges(graph, v) if e in active]
            if not nxt:
                break
            e = nxt[0]
            edges.append(e)
            v = graph.edges[e].target
            verts.append(v)
            if len(edges) > len(sub.edges):
                break
        times = [float(x[model.var("t", i, u)]) for u in verts]
        regions = []
        for n, e in enumerate(edges):
            a = edges[n - 1] if n else None
            vtx = graph.edges[e].source
            ks = [k for k in range(len(task.regions))
                  if x[model.var("m", i, k, vtx, a, e)] > ACTIVE]
            regions.append((vtx, a, e, ks[0] if ks else -1))
        out[i] = VehicleDecision(i, verts, edges, times, regions)
    return DecisionSolution(out, objective, x)


# ---------------------------------------------------------------------------
# validators; each returns a list of human-readable violations


def check_paths(model: ModelIR, x: np.ndarray) -> list[str]:
    """Active edges must form one simple path from the start to exactly one destination."""
    graph = model.graph
    bad = []
    for sub in model.subgraphs:
        i = sub.vehicle
        active = _active_edges(model, x, sub)
        indeg: dict[int, int] = {}
        outdeg: dict[int, int] = {}
        for e in active:
            edge = graph.edges[e]
            outdeg[edge.source] = outdeg.get(edge.source, 0) + 1
            indeg[edge.target] = indeg.get(edge.target, 0) + 1
        if outdeg.get(sub.start, 0) != 1 or indeg.get(sub.start, 0) != 0:
            bad.append(f"vehicle {i}: start {sub.start} has in/out degree "
                       f"{indeg.get(sub.start, 0)}/{outdeg.get(sub.start, 0)}")
        ends = [v for v in indeg if outdeg.get(v, 0) == 0]
        if len(ends) != 1 or ends[0] not in sub.destinations:
            bad.append(f"vehicle {i}: path ends at {sorted(ends)}, destinations "
                       f"{sorted(sub.destinations)}")
        reached = [d for d in sub.destinations if indeg.get(d, 0) > 0]
        if len(reached) != 1:
            bad.append(f"vehicle {i}: reaches {len(reached)} destinations")
        for v in set(indeg) | set(outdeg):
            if v == sub.start or v in ends:
                continue
            if indeg.get(v, 0) != 1 or outdeg.get(v, 0) != 1:
                bad.append(f"vehicle {i}: vertex {v} has in/out degree "
                           f"{indeg.get(v, 0)}/{outdeg.get(v, 0)}")
        # connectivity: walking from the start must consume every active edge
        walked, v, seen = 0, sub.start, {sub.start}
        while True:
            nxt = [e for e in active if graph.edges[e].source == v]
            if len(nxt) != 1:
                break
            walked += 1
            v = graph.edges[nxt[0]].target
            if v in seen:
                bad.append(f"vehicle {i}: path revisits vertex {v}")
                break
            seen.add(v)
        if walked != len(active):
            bad.append(f"vehicle {i}: {len(active) - walked} active edges off the path")
    return bad


def edge_speed(model: ModelIR, x, i: int, e: int) -> float:
    edge = model.graph.edges[e]
    dt = x[model.var("t", i, edge.target)] - x[model.var("t", i, edge.source)]
    return edge.length / dt if dt > 0 else math.inf


def check_velocity(model: ModelIR, x: np.ndarray, tol: float = 1e-6) -> list[str]:
    """Average speed on every traversed edge lies in the vehicle's admissible range."""
    bad = []
    for task, sub in zip(model.tasks, model.subgraphs):
        i, reg = task.id, task.regions
        for e in _active_edges(model, x, sub):
            v = edge_speed(model, x, i, e)
            if not (reg.v_slow - tol <= v <= reg.v_fast + tol):
                bad.append(f"vehicle {i} edge {e}: speed {v:.9g} outside "
                           f"[{reg.v_slow:.9g}, {reg.v_fast:.9g}]")
    return bad


def check_regions(model: ModelIR, x: np.ndarray, tol: float = 1e-6) -> list[str]:
    """The selected speed region contains the two-edge (or start-edge) average speed."""
    graph = model.graph
    bad = []
    for task, sub in zip(model.tasks, model.subgraphs):
        i, reg = task.id, task.regions
        active = set(_active_edges(model, x, sub))
        blocks = []
        for b in active:
            eb = graph.edges[b]
            if eb.source == sub.start:
                blocks.append((eb.source, None, b))
            for a in sub.in_edges(graph, eb.source):
                if a in active:
                    blocks.append((eb.source, a, b))
        for v, a, b in sorted(blocks, key=lambda blk: (blk[0], -1 if blk[1] is None else blk[1], blk[2])):
            eb = graph.edges[b]
            first = sub.start if a is None else graph.edges[a].source
            length = eb.length + (0.0 if a is None else graph.edges[a].length)
            dt = x[model.var("t", i, eb.target)] - x[model.var("t", i, first)]
            speed = length / dt if dt > 0 else math.inf
            ks = [k for k in range(len(reg)) if x[model.var("m", i, k, v, a, b)] > ACTIVE]
            if len(ks) != 1:
                bad.append(f"vehicle {i} at {v}: {len(ks)} regions selected")
                continue
            k = ks[0]
            if not (reg.slow[k] - tol <= speed <= reg.fast[k] + tol):
                bad.append(f"vehicle {i} at {v} ({a}->{b}): speed {speed:.9g} outside region "
                           f"{k} [{reg.slow[k]:.9g}, {reg.fast[k]:.9g}]")
    return bad


def _edge_times(model, x, i, e):
    edge = model.graph.edges[e]
    return x[model.var("t", i, edge.source)], x[model.var("t", i, edge.target)]


def _replay(model: ModelIR, x: np.ndarray, dt: float):
    """Yield ``(pair, sample times, projected gaps)`` for every active critical pair
    while both vehicles are inside their critical regions."""
    graph = model.graph
    for p in model.pairs:
        if x[model.var("y", p.i, p.edge_i)] < ACTIVE or x[model.var("y", p.j, p.edge_j)] < ACTIVE:
            continue
        a_i, b_i = _edge_times(model, x, p.i, p.edge_i)
        a_j, b_j = _edge_times(model, x, p.j, p.edge_j)
        ti = [a_i + th * (b_i - a_i) for th in p.theta_i]
        tj = [a_j + th * (b_j - a_j) for th in p.theta_j]
        lo, hi = max(ti[0], tj[0]), min(ti[1], tj[1])
        if hi <= lo:
            continue
        k0 = math.floor(lo / dt) + 1
        k1 = math.ceil(hi / dt) - 1
        if k1 < k0:
            continue
        ts = np.arange(k0, k1 + 1) * dt
        ts = ts[(ts > lo) & (ts < hi)]
        if not ts.size:
            continue
        ei, ej = graph.edges[p.edge_i], graph.edges[p.edge_j]
        pi1 = graph.position(ei.source)
        u = graph.edge_vector(p.edge_i) / ei.length
        pj1, pj2 = graph.position(ej.source), graph.position(ej.target)
        s_i = (ts - a_i) / (b_i - a_i) * ei.length
        th_j = (ts - a_j) / (b_j - a_j)
        s_hat = ((1 - th_j)[:, None] * pj1 + th_j[:, None] * pj2 - pi1) @ u
        yield p, ts, np.abs(s_i - s_hat)


def replay_separation(model: ModelIR, x: np.ndarray, dt: float = 0.01,
                      tol: float = 1e-6) -> list[str]:
    """Sample uniform edge motion wherever both vehicles of a critical pair are inside
    their critical regions and check the projected gap against the safety distance."""
    bad = []
    for p, ts, gap in _replay(model, x, dt):
        worst = int(np.argmin(gap))
        if gap[worst] < p.safety_distance - tol:
            bad.append(f"pair {p.key}: gap {gap[worst]:.6g} < D {p.safety_distance:.6g} "
                       f"at t={ts[worst]:.2f}s (step {int(round(ts[worst] / dt))})")
    return bad


def decision_margins(model: ModelIR, x: np.ndarray, dt: float = 0.01) -> dict[str, float]:
    """Smallest slack of each decision-level check; negative means violated.

    ``velocity`` and ``regions`` are in m/s, ``separation`` in metres. A
    check with nothing to sample reports ``inf``.
    """
    graph = model.graph
    vel = reg_margin = sep = math.inf
    for task, sub in zip(model.tasks, model.subgraphs):
        i, reg = task.id, task.regions
        active = _active_edges(model, x, sub)
        for e in active:
            v = edge_speed(model, x, i, e)
            vel = min(vel, v - reg.v_slow, reg.v_fast - v)
        on = set(active)
        for b in active:
            eb = graph.edges[b]
            preds = [None] if eb.source == sub.start else \
                [a for a in sub.in_edges(graph, eb.source) if a in on]
            for a in preds:
                first = sub.start if a is None else graph.edges[a].source
                length = eb.length + (0.0 if a is None else graph.edges[a].length)
                span = x[model.var("t", i, eb.target)] - x[model.var("t", i, first)]
                speed = length / span if span > 0 else math.inf
                for k in range(len(reg)):
                    if x[model.var("m", i, k, eb.source, a, b)] > ACTIVE:
                        reg_margin = min(reg_margin, speed - reg.slow[k], reg.fast[k] - speed)
    for p, _, gap in _replay(model, x, dt):
        sep = min(sep, float(gap.min()) - p.safety_distance)
    return {"velocity": float(vel), "regions": float(reg_margin), "separation": float(sep)}


def validate_decision(model: ModelIR, x: np.ndarray) -> dict[str, list[str]]:
    return {"paths": check_paths(model, x), "velocity": check_velocity(model, x),
            "regions": check_regions(model, x), "separation": replay_separation(model, x)}


def write_decision(path, decision: DecisionSolution, graph) -> None:
    """Per vehicle: the visited vertex ids, positions and timestamps."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("vehicle_id,order,vertex_id,x_m,y_m,time_s\n")
        for i in sorted(decision.vehicles):
            d = decision.vehicles[i]
            for n, (v, t) in enumerate(zip(d.vertices, d.times)):
                px, py = graph.vertices[v].position
                fh.write(f"{i},{n},{v},{px:.6f},{py:.6f},{t:.6f}\n")


def read_decision(path) -> dict[int, list[tuple[int, float]]]:
    out: dict[int, list[tuple[int, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            i, _, v, _, _, t = line.strip().split(",")
            out.setdefault(int(i), []).append((int(v), float(t)))
    return out


def encode(model: ModelIR, records: dict[int, list[tuple[int, float]]]) -> np.ndarray:
    """Column vector for paths given as ``(vertex, time)`` lists, e.g. from :func:`read_decision`.

    Edges of consecutive vertices become active, visited vertices get their
    times and each transition selects the first speed region containing its
    average speed. Columns a decision file cannot determine stay at their
    lower bound, which is enough for the validators above.
    """
    graph = model.graph
    x = np.array([0.0 if not math.isfinite(v.lb) else v.lb for v in model.variables])
    by_pair = {(e.source, e.target): e.id for e in graph.edges}
    for task, sub in zip(model.tasks, model.subgraphs):
        i, reg = task.id, task.regions
        rec = records.get(i, [])
        edges = []
        for (u, tu), (v, tv) in zip(rec, rec[1:]):
            e = by_pair.get((u, v))
            if e is None or not model.has_var("y", i, e):
                raise KeyError(f"vehicle {i}: no edge {u}->{v} in its subgraph")
            edges.append(e)
            x[model.var("y", i, e)] = 1.0
        for v, t in rec:
            x[model.var("t", i, v)] = t
        for n, b in enumerate(edges):
            a = edges[n - 1] if n else None
            eb = graph.edges[b]
            first = eb.source if a is None else graph.edges[a].source
            length = eb.length + (0.0 if a is None else graph.edges[a].length)
            span = x[model.var("t", i, eb.target)] - x[model.var("t", i, first)]
            speed = length / span if span > 0 else math.inf
            ks = [k for k in range(len(reg)) if reg.slow[k] <= speed <= reg.fast[k]]
            k = ks[0] if ks else (0 if speed < reg.slow[0] else len(reg) - 1)
            x[model.var("m", i, k, eb.source, a, b)] = 1.0
    return x
