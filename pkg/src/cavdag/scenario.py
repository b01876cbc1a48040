"""Scenario files: lane generators, vehicles and solver settings.

A scenario is a YAML mapping with the sections ``graph``, ``vehicles`` and the
optional ``milp``, ``solver`` and ``ocp``. See ``docs/scenario-format.md``.
Vertex references are either global integer ids or ``"lane:index"`` strings
(negative indices count from the lane end).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .errors import GeometryError, SchemaError
from .geometry import Footprint
from .graph import WaypointGraph, check_acyclic, extend_with_start
from .model import (DecisionProblem, MILPParams, VehicleTask, VelocityRegions,
                    DEFAULT_WEIGHTS, ETA_MAX, GAMMA_MAX, GAMMA_MIN)

# vehicle parameters used when a scenario does not override them
VEHICLE_LENGTH = 3.826
VEHICLE_WIDTH = 1.673
MERGE_TOL = 1e-6


@dataclass(frozen=True)
class OCPSettings:
    tau_s: float = 0.1
    wheelbase: float = 2.405
    d_f: float = 2.279
    d_r: float = 0.126
    d_safe: float = 2.366
    Q: tuple[float, float, float, float] = (20.0, 20.0, 0.0, 0.0)
    R: tuple[float, float] = (20.0, 0.1)
    delta_max: float = 0.6
    a_min: float = -6.0
    a_max: float = 4.0
    max_iter: int = 400
    trim: bool = False

    @property
    def d_b(self) -> float:
        return 0.5 * (self.d_f + self.d_r)


@dataclass(frozen=True)
class SolverSettings:
    backend: str = "auto"
    time_limit: float | None = 600.0
    node_limit: int | None = None
    gap: float = 1e-6
    threads: int = 1


@dataclass(frozen=True)
class VehicleSpec:
    id: int
    footprint: Footprint
    position: tuple[float, float]
    heading: float
    v_init: float
    v_ref: float
    slow_factor: float
    fast_factor: float
    destinations: tuple[int, ...]
    start_edges: int = 3
    start_vertex: int = -1


@dataclass
class ScenarioSpec:
    name: str
    graph: WaypointGraph
    lanes: dict[str, list[int]]
    vehicles: list[VehicleSpec]
    params: MILPParams = field(default_factory=MILPParams)
    regions: int = 3
    solver: SolverSettings = field(default_factory=SolverSettings)
    ocp: OCPSettings = field(default_factory=OCPSettings)
    description: str = ""
    source: str | None = None

    def tasks(self) -> list[VehicleTask]:
        return [VehicleTask(v.id, v.footprint, v.start_vertex, v.destinations, v.v_init,
                            v.v_ref, v.heading,
                            VelocityRegions.default(v.v_ref, v.slow_factor, v.fast_factor,
                                                    self.regions))
                for v in self.vehicles]

    def problem(self) -> DecisionProblem:
        return DecisionProblem(self.graph, self.tasks(), self.params)

    @property
    def n_lane_vertices(self) -> int:
        return self.graph.n_vertices - len(self.vehicles)


# ---------------------------------------------------------------------------
# field helpers


def _get(node: dict, key: str, path: str, kind=None, default: Any = ..., ):
    if not isinstance(node, dict):
        raise SchemaError(path, "expected a mapping")
    if key not in node or node[key] is None:
        if default is ...:
            raise SchemaError(f"{path}.{key}", "required field is missing")
        return default
    value = node[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise SchemaError(f"{path}.{key}", f"expected a finite number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(f"{path}.{key}", f"expected an integer, got {value!r}")
        return value
    if kind is str and not isinstance(value, str):
        raise SchemaError(f"{path}.{key}", f"expected a string, got {value!r}")
    if kind is list and not isinstance(value, list):
        raise SchemaError(f"{path}.{key}", f"expected a list, got {value!r}")
    if kind is dict and not isinstance(value, dict):
        raise SchemaError(f"{path}.{key}", f"expected a mapping, got {value!r}")
    if kind is bool and not isinstance(value, bool):
        raise SchemaError(f"{path}.{key}", f"expected true/false, got {value!r}")
    return value


def _point(value, path: str) -> tuple[float, float]:
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in value)):
        raise SchemaError(path, f"expected a 2-D point [x, y], got {value!r}")
    return float(value[0]), float(value[1])


def _numbers(value, n: int, path: str) -> tuple[float, ...]:
    if (not isinstance(value, (list, tuple)) or len(value) != n
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in value)):
        raise SchemaError(path, f"expected {n} numbers, got {value!r}")
    return tuple(float(c) for c in value)


# ---------------------------------------------------------------------------
# lane generators


def straight_points(start, end, interval: float) -> list[tuple[float, float]]:
    """Points every ``interval`` metres from ``start``; the end point is always kept."""
    p0, p1 = np.asarray(start, float), np.asarray(end, float)
    length = float(np.hypot(*(p1 - p0)))
    if length <= 0:
        raise GeometryError(f"straight lane from {start} to {end} has zero length")
    if interval <= 0:
        raise GeometryError("sampling interval must be positive")
    n = int(math.floor(length / interval + 1e-9))
    ts = [k * interval / length for k in range(n + 1)]
    if length - n * interval > 1e-9:
        ts.append(1.0)
    return [tuple(p0 + t * (p1 - p0)) for t in ts]


def arc_points(center, radius: float, start_deg: float, end_deg: float,
               step_deg: float) -> list[tuple[float, float]]:
    """Points at a fixed angular interval; direction follows ``start_deg -> end_deg``.

    The count is ``floor(|range| / step) + 1``.
    """
    span = end_deg - start_deg
    if radius <= 0 or span == 0:
        raise GeometryError("arc lane needs a positive radius and a non-empty angle range")
    if step_deg <= 0:
        raise GeometryError("arc step must be positive")
    n = int(math.floor(abs(span) / step_deg + 1e-9))
    sign = 1.0 if span > 0 else -1.0
    cx, cy = center
    out = []
    for k in range(n + 1):
        a = math.radians(start_deg + sign * k * step_deg)
        out.append((cx + radius * math.cos(a), cy + radius * math.sin(a)))
    return out


class _Builder:
    def __init__(self):
        self.positions: list[tuple[float, float]] = []
        self.tags: list[str | None] = []
        self.lanes: dict[str, list[int]] = {}
        self.edges: list[tuple[int, int]] = []

    def vertex(self, p, tag) -> int:
        for k, q in enumerate(self.positions):
            if abs(q[0] - p[0]) <= MERGE_TOL and abs(q[1] - p[1]) <= MERGE_TOL:
                return k
        self.positions.append((float(p[0]), float(p[1])))
        self.tags.append(tag)
        return len(self.positions) - 1

    def ref(self, value, path: str) -> int:
        if isinstance(value, bool):
            raise SchemaError(path, f"bad vertex reference {value!r}")
        if isinstance(value, int):
            if not 0 <= value < len(self.positions):
                raise SchemaError(path, f"vertex id {value} does not exist")
            return value
        if isinstance(value, str) and ":" in value:
            lane, idx = value.rsplit(":", 1)
            if lane not in self.lanes:
                raise SchemaError(path, f"unknown lane {lane!r}")
            try:
                k = int(idx)
                return self.lanes[lane][k]
            except (ValueError, IndexError):
                raise SchemaError(path, f"bad lane index in {value!r}") from None
        raise SchemaError(path, f"bad vertex reference {value!r}")


def _build_graph(node: dict) -> tuple[WaypointGraph, dict[str, list[int]], _Builder]:
    b = _Builder()
    for n, lane in enumerate(_get(node, "lanes", "graph", list, [])):
        path = f"graph.lanes[{n}]"
        lid = _get(lane, "id", path, str)
        if lid in b.lanes:
            raise SchemaError(f"{path}.id", f"duplicate lane id {lid!r}")
        kind = _get(lane, "kind", path, str, "straight")
        if kind == "straight":
            pts = straight_points(_point(_get(lane, "start", path), f"{path}.start"),
                                  _point(_get(lane, "end", path), f"{path}.end"),
                                  _get(lane, "interval", path, float))
        elif kind == "arc":
            pts = arc_points(_point(_get(lane, "center", path), f"{path}.center"),
                             _get(lane, "radius", path, float),
                             _get(lane, "start_deg", path, float),
                             _get(lane, "end_deg", path, float),
                             _get(lane, "step_deg", path, float))
        else:
            raise SchemaError(f"{path}.kind", f"unknown lane kind {kind!r}")
        _get(lane, "width", path, float, 3.75)
        ids = [b.vertex(p, lid) for p in pts]
        b.lanes[lid] = ids
        if _get(lane, "connect", path, bool, True):
            b.edges += list(zip(ids[:-1], ids[1:]))

    start_extra = len(b.positions)
    extra = _get(node, "vertices", "graph", list, [])
    for n, p in enumerate(extra):
        b.vertex(_point(p, f"graph.vertices[{n}]"), None)
    b.lanes["extra"] = list(range(start_extra, len(b.positions)))

    for n, rule in enumerate(_get(node, "lane_changes", "graph", list, [])):
        path = f"graph.lane_changes[{n}]"
        src, dst = _get(rule, "from", path, str), _get(rule, "to", path, str)
        for key, lane in (("from", src), ("to", dst)):
            if lane not in b.lanes:
                raise SchemaError(f"{path}.{key}", f"unknown lane {lane!r}")
        offset = _get(rule, "offset", path, int, 1)
        a, c = b.lanes[src], b.lanes[dst]
        first = _get(rule, "first", path, int, 0)
        last = _get(rule, "last", path, int, len(a) - 1)
        for k in range(first, last + 1):
            if 0 <= k < len(a) and 0 <= k + offset < len(c):
                b.edges.append((a[k], c[k + offset]))

    for n, pair in enumerate(_get(node, "edges", "graph", list, [])):
        path = f"graph.edges[{n}]"
        if not isinstance(pair, list) or len(pair) != 2:
            raise SchemaError(path, "expected [source, target]")
        b.edges.append((b.ref(pair[0], f"{path}[0]"), b.ref(pair[1], f"{path}[1]")))

    if not b.positions:
        raise SchemaError("graph", "no vertices defined")
    try:
        graph = WaypointGraph.build(b.positions, b.edges, b.tags)
    except ValueError as exc:
        raise GeometryError(str(exc)) from exc
    check_acyclic(graph)
    return graph, b.lanes, b


def _vehicle(node, n: int, builder: _Builder) -> VehicleSpec:
    path = f"vehicles[{n}]"
    vid = _get(node, "id", path, int)
    length = _get(node, "length", path, float, VEHICLE_LENGTH)
    width = _get(node, "width", path, float, VEHICLE_WIDTH)
    try:
        fp = Footprint(length, width)
    except ValueError as exc:
        raise SchemaError(path, str(exc)) from None
    pose = _numbers(_get(node, "pose", path), 3, f"{path}.pose")
    v_init = _get(node, "v_init", path, float)
    v_ref = _get(node, "v_ref", path, float, v_init)
    slow = _get(node, "slow_factor", path, float, 0.6)
    fast = _get(node, "fast_factor", path, float, 1.3)
    if not 0 < slow < 1 < fast:
        raise SchemaError(path, f"need 0 < slow_factor < 1 < fast_factor, got {slow}, {fast}")
    if v_ref <= 0 or v_init < 0:
        raise SchemaError(path, "velocities must be positive")
    dests = _get(node, "destinations", path, list)
    if not dests:
        raise SchemaError(f"{path}.destinations", "at least one destination is required")
    ids = tuple(sorted({builder.ref(d, f"{path}.destinations[{k}]") for k, d in enumerate(dests)}))
    return VehicleSpec(vid, fp, (pose[0], pose[1]), math.radians(pose[2]), v_init, v_ref,
                       slow, fast, ids, _get(node, "start_edges", path, int, 3))


def parse_scenario_dict(data: dict, source: str | None = None) -> ScenarioSpec:
    if not isinstance(data, dict):
        raise SchemaError("<root>", "scenario must be a mapping")
    name = _get(data, "name", "<root>", str, Path(source).stem if source else "scenario")
    graph, lanes, builder = _build_graph(_get(data, "graph", "<root>", dict))

    vehicles = [_vehicle(v, n, builder) for n, v in enumerate(_get(data, "vehicles", "<root>", list))]
    if not vehicles:
        raise SchemaError("vehicles", "at least one vehicle is required")
    if len({v.id for v in vehicles}) != len(vehicles):
        raise SchemaError("vehicles", "vehicle ids must be unique")

    # start vertices are appended in vehicle order
    placed = []
    road = range(graph.n_vertices)
    for v in vehicles:
        try:
            graph, sid = extend_with_start(graph, v.position, v.heading, v.start_edges,
                                           lane_tag=f"start:{v.id}", candidates=road)
        except ValueError as exc:
            raise GeometryError(f"vehicle {v.id}: {exc}") from exc
        placed.append(VehicleSpec(**{**v.__dict__, "start_vertex": sid}))

    m = _get(data, "milp", "<root>", dict, {})
    w = _get(m, "weights", "milp", dict, {})
    weights = tuple(_get(w, k, "milp.weights", float, d) for k, d in
                    zip(("time", "velocity", "acceleration", "steering"), DEFAULT_WEIGHTS))
    if any(x < 0 for x in weights):
        raise SchemaError("milp.weights", "weights must be nonnegative")
    params = MILPParams(weights=weights,
                        gamma_max=_get(m, "gamma_max", "milp", float, GAMMA_MAX),
                        gamma_min=_get(m, "gamma_min", "milp", float, GAMMA_MIN),
                        eta_max=_get(m, "eta_max", "milp", float, ETA_MAX),
                        big_m=_get(m, "big_m", "milp", float, None),
                        t_max=_get(m, "t_max", "milp", float, None))
    regions = _get(m, "regions", "milp", int, 3)
    if regions < 1:
        raise SchemaError("milp.regions", "must be >= 1")

    s = _get(data, "solver", "<root>", dict, {})
    backend = _get(s, "backend", "solver", str, "auto")
    if backend not in ("auto", "bnb", "highs"):
        raise SchemaError("solver.backend", f"unknown backend {backend!r}")
    solver = SolverSettings(backend, _get(s, "time_limit", "solver", float, 600.0),
                            _get(s, "node_limit", "solver", int, None),
                            _get(s, "gap", "solver", float, 1e-6),
                            _get(s, "threads", "solver", int, 1))

    o = _get(data, "ocp", "<root>", dict, {})
    d = OCPSettings()
    ocp = OCPSettings(
        tau_s=_get(o, "tau_s", "ocp", float, d.tau_s),
        wheelbase=_get(o, "wheelbase", "ocp", float, d.wheelbase),
        d_f=_get(o, "d_f", "ocp", float, d.d_f),
        d_r=_get(o, "d_r", "ocp", float, d.d_r),
        d_safe=_get(o, "d_safe", "ocp", float, d.d_safe),
        Q=_numbers(_get(o, "Q", "ocp", None, list(d.Q)), 4, "ocp.Q"),
        R=_numbers(_get(o, "R", "ocp", None, list(d.R)), 2, "ocp.R"),
        delta_max=_get(o, "delta_max", "ocp", float, d.delta_max),
        a_min=_get(o, "a_min", "ocp", float, d.a_min),
        a_max=_get(o, "a_max", "ocp", float, d.a_max),
        max_iter=_get(o, "max_iter", "ocp", int, d.max_iter),
        trim=_get(o, "trim", "ocp", bool, d.trim),
    )
    return ScenarioSpec(name, graph, lanes, placed, params, regions, solver, ocp,
                        _get(data, "description", "<root>", str, ""), source)


def parse_scenario(path) -> ScenarioSpec:
    """Read and validate a scenario file; bundled names resolve without a path."""
    p = Path(path)
    if not p.exists():
        bundled = bundled_path(str(path))
        if bundled is None:
            raise FileNotFoundError(path)
        p = bundled
    with open(p, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise SchemaError(str(p), f"invalid YAML: {exc}") from None
    return parse_scenario_dict(data, str(p))


def bundled_scenarios() -> list[str]:
    root = resources.files("cavdag") / "scenarios"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".yaml"))


def bundled_path(name: str) -> Path | None:
    root = resources.files("cavdag") / "scenarios"
    stem = name[:-5] if name.endswith(".yaml") else name
    f = root / f"{stem}.yaml"
    return Path(str(f)) if f.is_file() else None
