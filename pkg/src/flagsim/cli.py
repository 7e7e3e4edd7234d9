"""Command-line interface: simulate, sweep, characterize, calibrate, plan.

Every command writes its outputs plus a manifest.json into --out, recording
the exact inputs (with content hashes), tool version, and durations so runs
can be reproduced.  Exit codes: 0 success, 2 input/parse error, 3 solver or
fitting failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import itertools
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis, planner
from .config import ConfigError, RobotConfig, config_to_text, load_config
from .dynamics import (
    ActuationSchedule, ModelBreakError, ScheduleError, SolverError, simulate,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_SOLVER = 3

log = logging.getLogger("flagsim")

SWEEP_PARAMETERS = ("C_t", "C_r", "C_yr", "l_over_R", "L_over_R",
                    "l_over_r0", "omega_bar", "N")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# manifest


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(out_dir: Path, command: str, inputs: dict, outputs,
                   wall_seconds, simulated_seconds):
    """inputs maps a label to the exact input file text."""
    manifest = {
        "tool": "flagsim",
        "version": __version__,
        "command": command,
        "inputs": {name: {"text": text, "sha256": _sha256(text)}
                   for name, text in inputs.items()},
        "outputs": sorted(os.path.basename(str(p)) for p in outputs),
        "wall_seconds": round(float(wall_seconds), 3),
        "simulated_seconds": float(simulated_seconds),
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(out_dir: Path) -> dict:
    with open(Path(out_dir) / "manifest.json") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# shared helpers


def _load_config(path) -> RobotConfig:
    try:
        return load_config(path)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}", EXIT_PARSE)
    except ConfigError as exc:
        raise CliError(f"config error in {path}: {exc}", EXIT_PARSE)


def _load_schedule(path) -> ActuationSchedule:
    try:
        return ActuationSchedule.from_csv(path)
    except FileNotFoundError:
        raise CliError(f"schedule file not found: {path}", EXIT_PARSE)
    except (ScheduleError, ValueError) as exc:
        raise CliError(f"schedule error in {path}: {exc}", EXIT_PARSE)


def _read_text(path) -> str:
    with open(path) as fh:
        return fh.read()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_head_path(traj, path):
    """Plot-data file: horizontal projection of the head path."""
    with open(path, "w") as fh:
        fh.write("t,x,z\n")
        for t, p in zip(traj.times, traj.head_pos):
            fh.write(f"{t:.12g},{p[0]:.12g},{p[2]:.12g}\n")


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    config = _load_config(args.config)
    schedule = _load_schedule(args.schedule)
    out = _out_dir(args)
    t0 = time.perf_counter()
    try:
        traj = simulate(config, schedule)
    except (SolverError, ModelBreakError) as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_SOLVER)
    traj_path = out / "trajectory.csv"
    traj.to_csv(traj_path)
    plot_path = out / "head_path.csv"
    _write_head_path(traj, plot_path)
    write_manifest(out, "simulate",
                   {"config": _read_text(args.config),
                    "schedule": _read_text(args.schedule)},
                   [traj_path, plot_path],
                   time.perf_counter() - t0, schedule.duration)
    log.info("simulate: wrote %s", traj_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def parse_sweep_spec(text: str):
    """-> (grid axes as ordered {name: values}, run settings dict)."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise CliError(f"sweep spec parse error: {exc}", EXIT_PARSE)
    if not parser.has_section("sweep"):
        raise CliError("sweep spec must have a [sweep] section", EXIT_PARSE)
    axes = {}
    for name, raw in parser.items("sweep"):
        if name not in SWEEP_PARAMETERS:
            raise CliError(
                f"unknown sweep parameter {name!r}; expected one of "
                f"{', '.join(SWEEP_PARAMETERS)}", EXIT_PARSE)
        try:
            values = [float(v) for v in raw.split()]
        except ValueError as exc:
            raise CliError(f"bad values for {name}: {exc}", EXIT_PARSE)
        if not values:
            raise CliError(f"empty value grid for {name}", EXIT_PARSE)
        axes[name] = values
    if not axes:
        raise CliError("sweep spec lists no parameters", EXIT_PARSE)
    run = {"duration_scale": 12.0, "window_frac": 0.5, "omega_bar": 10.0}
    if parser.has_section("run"):
        for key in run:
            if parser.has_option("run", key):
                run[key] = parser.getfloat("run", key)
    return axes, run


def sweep_config(base: RobotConfig, assignment: dict) -> RobotConfig:
    """Apply one grid point's parameter values to the base config."""
    kwargs = {}
    l = base.l
    if "l_over_R" in assignment:
        l = assignment["l_over_R"] * base.R
        kwargs["l"] = l
    if "L_over_R" in assignment:
        kwargs["L_head"] = assignment["L_over_R"] * base.R
    if "l_over_r0" in assignment:
        kwargs["r0"] = l / assignment["l_over_r0"]
    if "N" in assignment:
        kwargs["N"] = int(round(assignment["N"]))
    for name in ("C_t", "C_r", "C_yr"):
        if name in assignment:
            kwargs[name] = assignment[name]
    cfg = base.replace(dt=None, **kwargs)
    # keep the base's relative time resolution across rescaled geometries
    cfg = cfg.replace(dt=base.dt / base.time_scale() * cfg.time_scale())
    return cfg


def _sweep_point(task):
    """Worker: one grid point -> normalized steady-state row."""
    config, omega_bar, duration_scale, window_frac = task
    ts = config.time_scale()
    duration = duration_scale * ts
    schedule = ActuationSchedule.constant(omega_bar / ts, duration)
    try:
        traj = simulate(config, schedule)
        s = analysis.summarize_steady(
            traj, window=((1.0 - window_frac) * duration, duration))
    except (analysis.AnalysisError, SolverError, ModelBreakError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return (s.omega_h * ts, s.omega_yr * ts, s.R_yr / config.l,
            s.theta_heading), None


def cmd_sweep(args) -> int:
    base = _load_config(args.config)
    spec_text = _read_text(args.sweep_spec)
    axes, run = parse_sweep_spec(spec_text)
    out = _out_dir(args)
    t0 = time.perf_counter()

    names = list(axes)
    points = list(itertools.product(*(axes[n] for n in names)))
    tasks = []
    for point in points:
        assignment = dict(zip(names, point))
        omega_bar = assignment.get("omega_bar", run["omega_bar"])
        try:
            cfg = sweep_config(base, assignment)
        except ConfigError as exc:
            raise CliError(f"invalid grid point {assignment}: {exc}",
                           EXIT_PARSE)
        tasks.append((cfg, omega_bar, run["duration_scale"],
                      run["window_frac"]))

    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_sweep_point, tasks, chunksize=1))
    else:
        results = [_sweep_point(t) for t in tasks]

    summary_path = out / "sweep_summary.csv"
    sim_total = 0.0
    with open(summary_path, "w") as fh:
        fh.write(",".join(names)
                 + ",omega_bar_h,omega_bar_yr,R_yr_over_l,theta_heading_rad,"
                   "error\n")
        for point, task, (row, err) in zip(points, tasks, results):
            sim_total += task[2] * task[0].time_scale()
            cells = [f"{v:.12g}" for v in point]
            if row is None:
                cells += ["nan"] * 4 + [err.replace(",", ";")]
            else:
                cells += [f"{v:.12g}" for v in row] + [""]
            fh.write(",".join(cells) + "\n")
    write_manifest(out, "sweep",
                   {"config": _read_text(args.config), "sweep": spec_text},
                   [summary_path], time.perf_counter() - t0, sim_total)
    log.info("sweep: %d grid points -> %s", len(points), summary_path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# characterize


def _primitive_report(primitive) -> str:
    lines = [
        f"omega_H_rad_s: {primitive.omega_H:.12g}",
        f"omega_bar_H: {primitive.omega_bar_H:.12g}",
        f"omega_yr_rad_s: {primitive.omega_yr:.12g}",
        f"R_yr_m: {primitive.R_yr:.12g}",
        f"theta_heading_rad: {primitive.theta_heading:.12g}",
        f"tangent_offset_rad: {primitive.tangent_offset:.12g}",
    ]
    return "\n".join(lines) + "\n"


def cmd_characterize(args) -> int:
    config = _load_config(args.config)
    if args.omega_bar == 0.0:
        raise CliError("omega_bar = 0 produces no motion primitive",
                       EXIT_PARSE)
    out = _out_dir(args)
    ts = config.time_scale()
    t0 = time.perf_counter()
    try:
        primitive = planner.characterize(config, args.omega_bar / ts,
                                         duration_scale=args.duration_scale)
    except planner.PlannerError as exc:
        raise CliError(str(exc), EXIT_PARSE)
    except (analysis.AnalysisError, SolverError, ModelBreakError) as exc:
        raise CliError(f"characterization failed: {exc}", EXIT_SOLVER)
    prim_path = out / "primitive.txt"
    with open(prim_path, "w") as fh:
        fh.write(_primitive_report(primitive))
    write_manifest(out, "characterize",
                   {"config": _read_text(args.config)}, [prim_path],
                   time.perf_counter() - t0, args.duration_scale * ts)
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate


def cmd_calibrate(args) -> int:
    config = _load_config(args.config)
    try:
        measurements = analysis.load_measurements(args.measurements)
    except FileNotFoundError:
        raise CliError(f"measurement file not found: {args.measurements}",
                       EXIT_PARSE)
    except analysis.AnalysisError as exc:
        raise CliError(f"measurement file error: {exc}", EXIT_PARSE)
    out = _out_dir(args)
    opts = analysis.CalibrationOptions(jobs=args.jobs,
                                       grid_points=args.seed_grid)
    t0 = time.perf_counter()
    try:
        result = analysis.calibrate(measurements, config, opts)
    except analysis.CalibrationError as exc:
        raise CliError(f"calibration failed: {exc}", EXIT_SOLVER)

    report_path = out / "calibration.txt"
    with open(report_path, "w") as fh:
        fh.write(f"C_t: {result.C_t:.12g}\n")
        fh.write(f"C_r: {result.C_r:.12g}\n")
        fh.write(f"C_yr: {result.C_yr:.12g}\n")
        fh.write(f"fit_error: {result.fit_error:.12g}\n")
        fh.write(f"evaluations: {result.evaluations}\n")
        fh.write("\nN,l_m,omega_motor_rad_s,"
                 "omega_h_meas,omega_h_sim,omega_yr_meas,omega_yr_sim\n")
        for r in result.residuals:
            fh.write(f"{r['N']},{r['l']:.12g},{r['omega_motor']:.12g},"
                     f"{r['omega_h_meas']:.12g},{r['omega_h_sim']:.12g},"
                     f"{r['omega_yr_meas']:.12g},{r['omega_yr_sim']:.12g}\n")
    sim_total = (result.evaluations * len(measurements)
                 * opts.duration_scale * config.time_scale())
    write_manifest(out, "calibrate",
                   {"config": _read_text(args.config),
                    "measurements": _read_text(args.measurements)},
                   [report_path], time.perf_counter() - t0, sim_total)
    return EXIT_OK


# ---------------------------------------------------------------------------
# plan


def _plan_verification(spec, primitive, traj):
    """Compare an executed trajectory against its target path."""
    p = np.asarray(traj.head_pos)[:, [0, 2]]
    p = p - p[0]
    report = {}
    if spec.variant == "line":
        direction = np.array([1.0, 0.0])
        net = p[-1]
        report["target_length_m"] = spec.length
        report["achieved_length_m"] = float(np.linalg.norm(net))
        report["lateral_deviation_m"] = float(
            np.max(np.abs(p @ np.array([-direction[1], direction[0]]))))
    elif spec.variant == "circle":
        center, radius, residual = analysis.fit_circle(p)
        report["target_radius_m"] = spec.radius
        report["fitted_radius_m"] = radius
        report["rms_radial_deviation_m"] = float(np.sqrt(np.mean(
            (np.linalg.norm(p - center, axis=1) - spec.radius) ** 2)))
    else:
        report["closure_error_m"] = float(np.linalg.norm(p[-1] - p[0]))
        side = float(np.min(np.linalg.norm(
            np.diff(spec.vertices, axis=0), axis=1)))
        report["shortest_edge_m"] = side
    return report


def cmd_plan(args) -> int:
    config = _load_config(args.config)
    try:
        spec = planner.load_path_spec(args.path_spec)
    except FileNotFoundError:
        raise CliError(f"path spec not found: {args.path_spec}", EXIT_PARSE)
    except planner.PlannerError as exc:
        raise CliError(f"path spec error: {exc}", EXIT_PARSE)
    if args.omega_bar == 0.0:
        raise CliError("omega_bar = 0 produces no motion primitive",
                       EXIT_PARSE)
    out = _out_dir(args)
    ts = config.time_scale()
    t0 = time.perf_counter()
    try:
        primitive = planner.characterize(config, args.omega_bar / ts,
                                         duration_scale=args.duration_scale)
        schedule = planner.plan(primitive, spec)
    except planner.InfeasiblePathError as exc:
        raise CliError(f"infeasible path: {exc}", EXIT_PARSE)
    except planner.PlannerError as exc:
        raise CliError(str(exc), EXIT_PARSE)
    except (analysis.AnalysisError, SolverError, ModelBreakError) as exc:
        raise CliError(f"characterization failed: {exc}", EXIT_SOLVER)

    sched_path = out / "schedule.csv"
    schedule.to_csv(sched_path)
    prim_path = out / "primitive.txt"
    with open(prim_path, "w") as fh:
        fh.write(_primitive_report(primitive))
    outputs = [sched_path, prim_path]
    simulated = args.duration_scale * ts

    if args.verify:
        try:
            yaw = planner.drift_yaw(primitive)
            traj = planner.execute(primitive, schedule, initial_yaw=yaw)
        except (SolverError, ModelBreakError) as exc:
            raise CliError(f"verification run failed: {exc}", EXIT_SOLVER)
        verify_path = out / "verification.csv"
        traj.to_csv(verify_path)
        report = _plan_verification(spec, primitive, traj)
        report_path = out / "verification.txt"
        with open(report_path, "w") as fh:
            for key, value in report.items():
                fh.write(f"{key}: {value:.12g}\n")
        outputs += [verify_path, report_path]
        simulated += schedule.duration

    write_manifest(out, "plan",
                   {"config": _read_text(args.config),
                    "path_spec": _read_text(args.path_spec)},
                   outputs, time.perf_counter() - t0, simulated)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flagsim",
        description="Flagellated soft-robot swimmer: simulate, calibrate, plan.")
    parser.add_argument("--version", action="version",
                        version=f"flagsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one actuation schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="grid sweep of physical parameters")
    p.add_argument("--config", required=True)
    p.add_argument("--sweep-spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("characterize",
                       help="measure the steady turning primitive")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--omega-bar", type=float, default=10.0)
    p.add_argument("--duration-scale", type=float, default=20.0)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("calibrate", help="fit C_t, C_r, C_yr to measurements")
    p.add_argument("--config", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed-grid", type=int, default=5,
                   help="per-axis resolution of the seed grid")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("plan", help="plan a binary schedule for a 2D path")
    p.add_argument("--config", required=True)
    p.add_argument("--path-spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--omega-bar", type=float, default=10.0)
    p.add_argument("--duration-scale", type=float, default=20.0)
    p.add_argument("--verify", action="store_true",
                   help="execute the plan in simulation and report deviation")
    p.set_defaults(func=cmd_plan)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("FLAGSIM_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"flagsim: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
