"""Command line interface.

Log verbosity comes from the ``CAVDAG_LOG_LEVEL`` environment variable
(``DEBUG``, ``INFO``, ``WARNING``; default ``WARNING``).
"""
from __future__ import annotations

import csv
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import pipeline
from .decision import decode, encode, read_decision
from .errors import CavDagError
from .scenario import bundled_scenarios, parse_scenario
from .trajectory import TrajectorySolution, plan_trajectories, validate_collisions

log = logging.getLogger("cavdag")


def _setup_logging() -> None:
    level = os.environ.get("CAVDAG_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _load(scenario: str):
    try:
        return parse_scenario(scenario)
    except FileNotFoundError:
        raise click.BadParameter(f"no scenario file or bundled scenario named {scenario!r} "
                                 f"(bundled: {', '.join(bundled_scenarios())})")


def _echo_verdicts(verdicts) -> bool:
    for v in verdicts:
        click.echo(v.line())
        for d in v.detail[:10]:
            click.echo(f"    {d}")
    return all(v.passed for v in verdicts)


scenario_arg = click.argument("scenario")
output_opt = click.option("--output-dir", "-o", type=click.Path(file_okay=False), default="out",
                          show_default=True, help="Directory for the run artefacts.")


def solver_options(fn):
    fn = click.option("--time-limit", type=float, default=None,
                      help="MILP wall-clock limit in seconds (default: scenario setting).")(fn)
    fn = click.option("--node-limit", type=int, default=None, help="MILP node limit.")(fn)
    fn = click.option("--threads", type=int, default=None, help="HiGHS thread count.")(fn)
    fn = click.option("--backend", type=click.Choice(["auto", "bnb", "highs"]), default=None,
                      help="MILP backend (default: scenario setting).")(fn)
    return fn


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Cooperative decision making and trajectory planning on waypoint graphs."""
    _setup_logging()


@main.command("build-graph")
@scenario_arg
@output_opt
def build_graph(scenario, output_dir):
    """Generate the waypoint graph of SCENARIO and write graph.csv."""
    spec = _load(scenario)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_graph(out / "graph.csv", spec.graph)
    click.echo(f"{spec.name}: {spec.graph.n_vertices} vertices, {len(spec.graph.edges)} edges, "
               f"{len(spec.vehicles)} vehicles -> {out / 'graph.csv'}")


@main.command("solve-decision")
@scenario_arg
@output_opt
@solver_options
def solve_decision(scenario, output_dir, time_limit, node_limit, threads, backend):
    """Assemble and solve the decision model; write model.lp, solver.log and decision.csv."""
    report = pipeline.run_pipeline(_load(scenario), output_dir, decision_only=True,
                                   time_limit=time_limit, node_limit=node_limit,
                                   threads=threads, backend=backend)
    _summary(report)
    sys.exit(report.exit_code)


@main.command("plan-trajectory")
@scenario_arg
@click.option("--decision", "decision_file", type=click.Path(exists=True, dir_okay=False),
              required=True, help="decision.csv written by solve-decision.")
@output_opt
def plan_trajectory(scenario, decision_file, output_dir):
    """Solve the tracking OCP for a stored decision; write trajectory and collision CSVs."""
    spec = _load(scenario)
    model = pipeline.build_model(spec)
    x = encode(model, read_decision(decision_file))
    decision = decode(model, x)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = spec.ocp
    try:
        _, sol = plan_trajectories(decision, spec, cfg)
    except CavDagError as exc:
        click.echo(f"trajectory planning failed: {exc}", err=True)
        sys.exit(1)
    pipeline.write_trajectories(out / "trajectory.csv", sol, cfg.tau_s)
    pipeline.write_collisions(out / "collisions.csv", sol, cfg)
    pipeline.write_plot_data(out / "plot_data.csv", sol, cfg.tau_s)
    ok = _echo_verdicts(pipeline.verify_trajectories(sol, cfg))
    sys.exit(0 if ok else 1)


def _read_trajectories(path) -> TrajectorySolution:
    rows: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["vehicle_id"]), []).append(r)
    states, controls = {}, {}
    for i, rs in rows.items():
        rs.sort(key=lambda r: int(r["step"]))
        states[i] = np.array([[float(r[k]) for k in ("x_m", "y_m", "theta_rad", "v_mps")]
                              for r in rs])
        controls[i] = np.array([[float(r["delta_rad"]), float(r["a_mps2"])]
                                for r in rs if r["delta_rad"] != ""]).reshape(-1, 2)
    return TrajectorySolution(sorted(states), states, controls, {}, float("nan"),
                              validate_collisions(states, 0.0), True, 0.0, 0.0, 0)


@main.command("validate")
@scenario_arg
@click.option("--decision", "decision_file", type=click.Path(exists=True, dir_okay=False),
              default=None, help="decision.csv to replay at 0.01 s.")
@click.option("--trajectory", "trajectory_file", type=click.Path(exists=True, dir_okay=False),
              default=None, help="trajectory.csv to check against d_safe and control limits.")
@click.option("--oracle", is_flag=True,
              help="Compare the MILP solver with exhaustive enumeration (at most 20 binaries).")
def validate(scenario, decision_file, trajectory_file, oracle):
    """Check stored results of SCENARIO; exit code 0 iff every check passes."""
    spec = _load(scenario)
    model = pipeline.build_model(spec)
    verdicts = []
    if oracle:
        try:
            verdicts += pipeline.verify(model, "oracle")
        except CavDagError as exc:
            click.echo(f"oracle: {exc}", err=True)
            sys.exit(1)
    if decision_file:
        verdicts += pipeline.verify_decision(model, encode(model, read_decision(decision_file)))
    if trajectory_file:
        sol = _read_trajectories(trajectory_file)
        verdicts += [v for v in pipeline.verify_trajectories(sol, spec.ocp)
                     if v.name != "ocp_converged"]
    if not verdicts:
        raise click.UsageError("nothing to validate: pass --decision, --trajectory or --oracle")
    sys.exit(0 if _echo_verdicts(verdicts) else 1)


@main.command("run")
@scenario_arg
@output_opt
@solver_options
@click.option("--decision-only", is_flag=True, help="Stop after the decision phase.")
def run(scenario, output_dir, time_limit, node_limit, threads, backend, decision_only):
    """Full pipeline: graph, decision MILP, trajectory OCP and validation."""
    report = pipeline.run_pipeline(_load(scenario), output_dir, decision_only=decision_only,
                                   time_limit=time_limit, node_limit=node_limit,
                                   threads=threads, backend=backend)
    _summary(report)
    sys.exit(report.exit_code)


def _summary(report: pipeline.RunReport) -> None:
    s = report.model_stats
    if s:
        click.echo(f"model: {s['variables']} variables ({s['binaries']} binary), "
                   f"{s['constraints']} rows, {s['critical_pairs']} critical pairs")
    if report.solver:
        click.echo(f"milp: {report.solver['status']} objective {report.solver['objective']:.6g} "
                   f"bound {report.solver['bound']:.6g}")
    if report.arrival_order:
        click.echo(f"arrival order: {' '.join(map(str, report.arrival_order))}")
    _echo_verdicts(report.verdicts)
    for err in report.errors:
        click.echo(f"ERROR {err}")
    times = ", ".join(f"{k} {v:.1f}s" for k, v in report.wall_times.items())
    click.echo(f"wall time: {times}")
    click.echo(f"{'PASS' if report.passed else 'FAIL'} -> {report.files.get('report', '')}")


if __name__ == "__main__":
    main()
