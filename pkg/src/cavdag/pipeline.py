"""End-to-end runs: graph, decision model, MILP, trajectory optimisation, validation.

Every phase writes plain-text artefacts into the output directory:

==================  ==========================================================
``graph.csv``       vertices and edges of the waypoint graph
``model.lp``        the finalised decision model in CPLEX LP format
``solver.log``      solver log (HiGHS output plus a summary)
``decision.csv``    per vehicle: visited vertex ids and timestamps
``trajectory.csv``  per step and vehicle: state and control
``collisions.csv``  per step: distance of every circle pair of every vehicle pair
``plot_data.csv``   per step and vehicle: speed, acceleration and steering angle
``report.json``     the :class:`RunReport`
==================  ==========================================================
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .decision import DecisionSolution, decision_margins, decode, validate_decision, write_decision
from .errors import CavDagError
from .milp import MILPSolution, brute_force_milp, solve_milp
from .model import ModelIR, assemble, check_big_m, linearity_audit, write_lp
from .scenario import ScenarioSpec, parse_scenario
from .trajectory import (TrajectorySolution, plan_trajectories, validate_collisions)

log = logging.getLogger(__name__)

ORACLE_REL_TOL = 1e-6
COLLISION_TOL = 1e-3
LIMIT_TOL = 1e-9


@dataclass
class Verdict:
    name: str
    passed: bool
    margin: float
    detail: list[str] = field(default_factory=list)

    def line(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return f"{state} {self.name}: margin {self.margin:.6g}" + \
            (f" ({len(self.detail)} issues)" if self.detail else "")


@dataclass
class RunReport:
    scenario: str
    model_stats: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    decision: dict = field(default_factory=dict)
    arrival_order: list[int] = field(default_factory=list)
    trajectory: dict = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)
    verdicts: list[Verdict] = field(default_factory=list)
    wall_times: dict[str, float] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    # in-memory results for library callers; never serialised
    model: ModelIR | None = field(default=None, repr=False, compare=False)
    x: np.ndarray | None = field(default=None, repr=False, compare=False)
    trajectories: TrajectorySolution | None = field(default=None, repr=False, compare=False)

    @property
    def passed(self) -> bool:
        return not self.errors and bool(self.verdicts) and all(v.passed for v in self.verdicts)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1

    def to_json(self) -> str:
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in _IN_MEMORY}
        data["verdicts"] = [asdict(v) for v in self.verdicts]
        return json.dumps(data, indent=2, default=_jsonable)


_IN_MEMORY = ("model", "x", "trajectories")


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


# ---------------------------------------------------------------------------
# verification


def verify_decision(model: ModelIR, x: np.ndarray) -> list[Verdict]:
    """Structural path check plus velocity, region and replayed-separation margins."""
    issues = validate_decision(model, x)
    margins = decision_margins(model, x)
    out = [Verdict("paths", not issues["paths"], 0.0, issues["paths"])]
    for name in ("velocity", "regions", "separation"):
        out.append(Verdict(name, not issues[name], margins[name], issues[name]))
    return out


def control_margin(sol: TrajectorySolution, settings) -> float:
    """Smallest distance of any control to its box bound (negative when outside)."""
    m = math.inf
    for u in sol.controls.values():
        if len(u):
            m = min(m, float(np.min(settings.delta_max - np.abs(u[:, 0]))),
                    float(np.min(u[:, 1] - settings.a_min)), float(np.min(settings.a_max - u[:, 1])))
    return m


def verify_trajectories(sol: TrajectorySolution, settings) -> list[Verdict]:
    report = validate_collisions(sol.states, settings.d_safe, settings.d_f, settings.d_r)
    detail = [] if report.first_violation is None else [f"first violation {report.first_violation}"]
    margin = control_margin(sol, settings)
    return [
        Verdict("trajectory_separation", report.min_margin >= -COLLISION_TOL,
                report.min_margin, detail),
        Verdict("control_limits", margin >= -LIMIT_TOL, margin),
        Verdict("ocp_converged", sol.converged, -sol.max_violation,
                [] if sol.converged else [sol.message]),
    ]


def verify(target, mode: str = "validate", x: np.ndarray | None = None,
           trajectories: TrajectorySolution | None = None, settings=None) -> list[Verdict]:
    """``oracle``: compare ``solve_milp`` with enumeration on a small model.
    ``validate``: decision-level checks on ``x`` and, if given, trajectory checks."""
    if mode == "oracle":
        sol = solve_milp(target, backend="bnb")
        ref = brute_force_milp(target)
        if not (math.isfinite(sol.objective) and math.isfinite(ref.objective)):
            same = sol.status == ref.status
            return [Verdict("oracle", same, 0.0 if same else -math.inf,
                            [] if same else [f"{sol.status} vs {ref.status}"])]
        err = abs(sol.objective - ref.objective) / max(1.0, abs(ref.objective))
        return [Verdict("oracle", err <= ORACLE_REL_TOL, ORACLE_REL_TOL - err,
                        [] if err <= ORACLE_REL_TOL else
                        [f"solve {sol.objective:.12g} vs enumeration {ref.objective:.12g}"])]
    if mode != "validate":
        raise ValueError(f"unknown mode {mode!r}")
    out = verify_decision(target, x) if x is not None else []
    if trajectories is not None:
        out += verify_trajectories(trajectories, settings)
    return out


# ---------------------------------------------------------------------------
# writers


def write_graph(path, graph) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "id", "x_m", "y_m", "source", "target", "length_m", "tag"])
        for v in graph.vertices:
            w.writerow(["vertex", v.id, f"{v.position[0]:.6f}", f"{v.position[1]:.6f}", "", "",
                        "", v.lane_tag or ""])
        for e in graph.edges:
            w.writerow(["edge", e.id, "", "", e.source, e.target, f"{e.length:.6f}", ""])


def write_trajectories(path, sol: TrajectorySolution, tau_s: float) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time_s", "vehicle_id", "x_m", "y_m", "theta_rad", "v_mps",
                    "delta_rad", "a_mps2"])
        for i in sol.vehicles:
            X, U = sol.states[i], sol.controls[i]
            for k in range(len(X)):
                d, a = (U[k] if k < len(U) else (math.nan, math.nan))
                w.writerow([k, f"{k * tau_s:.3f}", i, *(f"{c:.6f}" for c in X[k]),
                            "" if math.isnan(d) else f"{d:.6f}", "" if math.isnan(a) else f"{a:.6f}"])


def write_collisions(path, sol: TrajectorySolution, settings) -> None:
    report = validate_collisions(sol.states, settings.d_safe, settings.d_f, settings.d_r,
                                 keep_rows=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "id_a", "id_b", "circle_a", "circle_b", "distance_m"])
        for step, a, b, ca, cb, dist in report.rows:
            w.writerow([step, a, b, ca, cb, f"{dist:.6f}"])


def write_plot_data(path, sol: TrajectorySolution, tau_s: float) -> None:
    """Per-step speed, acceleration and steering angle of every vehicle."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "vehicle_id", "v_mps", "a_mps2", "delta_rad"])
        for i in sol.vehicles:
            X, U = sol.states[i], sol.controls[i]
            for k in range(len(U)):
                w.writerow([f"{k * tau_s:.3f}", i, f"{X[k, 3]:.6f}", f"{U[k, 1]:.6f}",
                            f"{U[k, 0]:.6f}"])


# ---------------------------------------------------------------------------
# phases


def build_model(spec: ScenarioSpec) -> ModelIR:
    return assemble(spec.problem())


def solve_decision(spec: ScenarioSpec, model: ModelIR, time_limit: float | None = None,
                   node_limit: int | None = None, threads: int | None = None,
                   backend: str | None = None, log_file=None) -> tuple[MILPSolution, DecisionSolution | None]:
    cfg = spec.solver
    sol = solve_milp(model, node_limit=node_limit if node_limit is not None else cfg.node_limit,
                     time_limit=time_limit if time_limit is not None else cfg.time_limit,
                     gap_tol=cfg.gap, backend=backend or cfg.backend,
                     threads=threads or cfg.threads, log_file=log_file)
    if sol.x is None:
        return sol, None
    return sol, decode(model, sol.x, sol.objective)


def run_pipeline(spec: ScenarioSpec | str | Path, output_dir, decision_only: bool = False,
                 time_limit: float | None = None, node_limit: int | None = None,
                 threads: int | None = None, backend: str | None = None) -> RunReport:
    """Run every phase, write the artefacts and return the report; failures are recorded."""
    if not isinstance(spec, ScenarioSpec):
        spec = parse_scenario(spec)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = RunReport(spec.name)

    def timed(name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            rep.wall_times[name] = round(time.perf_counter() - t0, 3)

    def artefact(key, name):
        path = out / name
        rep.files[key] = str(path)
        return path

    try:
        write_graph(artefact("graph", "graph.csv"), spec.graph)
        model = timed("assemble", build_model, spec)
        rep.model_stats = model.stats()
        rep.model = model
        write_lp(model, artefact("model", "model.lp"), spec.name)
        audit = linearity_audit(model)
        big_m = check_big_m(model)
        rep.verdicts.append(Verdict("linearity", not audit, 0.0, audit))
        rep.verdicts.append(Verdict("big_m", not big_m, 0.0, big_m))

        log_path = artefact("solver_log", "solver.log")
        log_path.write_text("")
        sol, decision = timed("milp", solve_decision, spec, model, time_limit, node_limit,
                              threads, backend, str(log_path))
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write("\n".join(["", "# summary", *sol.log,
                                f"status={sol.status} objective={sol.objective:.10g} "
                                f"bound={sol.bound:.10g} nodes={sol.nodes} "
                                f"wall={sol.wall_time:.2f}s"]) + "\n")
        rep.solver = {"backend": sol.backend, "status": sol.status, "objective": sol.objective,
                      "bound": sol.bound, "gap": sol.gap, "nodes": sol.nodes}
        if decision is None:
            rep.errors.append(f"milp: {sol.status}, no feasible decision")
            return _finish(rep, out)
        rep.x = sol.x
        write_decision(artefact("decision", "decision.csv"), decision, spec.graph)
        rep.decision = {i: {"vertices": d.vertices, "times": [round(t, 9) for t in d.times]}
                        for i, d in decision.vehicles.items()}
        rep.arrival_order = decision.arrival_order()
        rep.verdicts += timed("validate_decision", verify_decision, model, sol.x)

        if decision_only:
            return _finish(rep, out)
        cfg = spec.ocp
        _, traj = timed("ocp", plan_trajectories, decision, spec, cfg)
        rep.trajectories = traj
        write_trajectories(artefact("trajectory", "trajectory.csv"), traj, cfg.tau_s)
        write_collisions(artefact("collisions", "collisions.csv"), traj, cfg)
        write_plot_data(artefact("plot_data", "plot_data.csv"), traj, cfg.tau_s)
        rep.trajectory = {"cost": traj.cost, "converged": traj.converged,
                          "max_violation": traj.max_violation,
                          "outer_iterations": traj.outer_iterations,
                          "min_circle_distance": traj.report.min_distance,
                          "steps": {i: len(u) for i, u in traj.controls.items()}}
        rep.verdicts += verify_trajectories(traj, cfg)
    except CavDagError as exc:
        log.error("pipeline failed: %s", exc)
        rep.errors.append(f"{type(exc).__name__}: {exc}")
    return _finish(rep, out)


def _finish(rep: RunReport, out: Path) -> RunReport:
    rep.files["report"] = str(out / "report.json")
    (out / "report.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    for v in rep.verdicts:
        log.info(v.line())
    return rep
