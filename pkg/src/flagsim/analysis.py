"""Trajectory descriptors, nondimensionalization, and drag-coefficient fits.

All descriptors live in the horizontal (x, z) plane; y is vertical.  The
robot sweeps a circle about the vertical axis, so steady runs reduce to a
circle fit plus angular rates, and switching runs to per-period chords.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .config import RobotConfig
from .dynamics import (
    ActuationSchedule, SimOptions, SolverError, ModelBreakError, Trajectory,
    simulate,
)


class AnalysisError(ValueError):
    """Base class for trajectory-analysis failures."""


class DegenerateFitError(AnalysisError):
    """Circle fit attempted on (near-)collinear points."""


class NotSteadyError(AnalysisError):
    """Trajectory window has not converged to a steady circular sweep."""


class NonPeriodicError(AnalysisError):
    """Switching summary requested on a non-periodic trajectory."""


class CalibrationError(AnalysisError):
    """Drag-coefficient calibration could not produce a fit."""


# ---------------------------------------------------------------------------
# circle fitting


def fit_circle(points):
    """Least-squares circle through 2D points -> (center, radius, residual).

    Algebraic (Kasa) solution refined by Gauss-Newton on the geometric
    objective sum(|p - c| - r)^2; residual is the RMS radial error.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise DegenerateFitError("circle fit needs >= 3 planar points")
    mean = pts.mean(axis=0)
    q = pts - mean
    sv = np.linalg.svd(q, compute_uv=False)
    if sv[0] < 1.0e-30 or sv[0] / max(sv[1], 1.0e-300) > 1.0e10:
        raise DegenerateFitError("points are collinear; circle fit is degenerate")

    A = np.column_stack([2.0 * q, np.ones(len(q))])
    b = np.sum(q ** 2, axis=1)
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    c = sol[:2]
    r = math.sqrt(max(sol[2] + c @ c, 0.0))

    for _ in range(60):
        d = q - c
        dist = np.linalg.norm(d, axis=1)
        dist = np.maximum(dist, 1.0e-300)
        res = dist - r
        J = np.column_stack([-d[:, 0] / dist, -d[:, 1] / dist,
                             -np.ones(len(q))])
        step = np.linalg.lstsq(J, -res, rcond=None)[0]
        c = c + step[:2]
        r = r + step[2]
        if np.linalg.norm(step) < 1.0e-14 * max(abs(r), 1.0):
            break
    dist = np.linalg.norm(q - c, axis=1)
    residual = float(np.sqrt(np.mean((dist - r) ** 2)))
    return c + mean, float(r), residual


# ---------------------------------------------------------------------------
# steady-state and switching summaries


@dataclass
class SteadyStateSummary:
    omega_h: float          # head spin rate [rad/s]
    omega_t: float          # tail-disc spin rate [rad/s]
    omega_yr: float         # yaw rate of the circular sweep [rad/s]
    R_yr: float             # sweep radius [m]
    theta_heading: float    # angle between long axis and path tangent [rad]
    circle_center: np.ndarray   # (x, z) of the fitted center [m]
    fit_residual: float     # RMS radial error of the circle fit [m]
    tangent_offset: float = 0.0   # signed long-axis -> tangent angle [rad]


@dataclass
class SwitchingSummary:
    theta_heading: float    # mean long-axis vs travel-direction angle [rad]
    v: float                # net straight-line speed [m/s]
    T: float                # half-period of the square wave [s]
    direction: np.ndarray   # unit travel direction in (x, z)
    period_scatter: float   # worst per-period deviation / mean chord


def _steady_window(t, window):
    if window is None:
        t0 = t[0] + 0.25 * (t[-1] - t[0])
        t1 = t[-1]
    else:
        t0, t1 = window
    mask = (t >= t0) & (t <= t1)
    if int(np.sum(mask)) < 3:
        raise AnalysisError("analysis window contains fewer than 3 samples")
    return mask


def summarize_steady(traj: Trajectory, window=None) -> SteadyStateSummary:
    """Circle-fit the horizontal head path and extract angular rates.

    `window` is a (t0, t1) range; by default the first 25% of the run is
    discarded as transient.  omega_yr is the angular rate about the vertical
    +y axis (right-handed).
    """
    t = np.asarray(traj.times, dtype=float)
    mask = _steady_window(t, window)
    pts = np.asarray(traj.head_pos, dtype=float)[mask][:, [0, 2]]
    center, radius, residual = fit_circle(pts)
    if residual > 0.05 * radius:
        raise NotSteadyError(
            f"circle-fit residual {residual:.3g} m exceeds 5% of radius "
            f"{radius:.3g} m; trajectory window is not steady")

    rel = pts - center
    phi = np.unwrap(np.arctan2(rel[:, 1], rel[:, 0]))
    slope = float(np.polyfit(t[mask], phi, 1)[0])
    # phi = atan2(z, x) grows for rotation taking +x toward +z, which is a
    # negative rotation about +y
    omega_yr = -slope

    axis = np.asarray(traj.head_axis, dtype=float)[mask][:, [0, 2]]
    norms = np.linalg.norm(axis, axis=1)
    if np.any(norms < 1.0e-12):
        raise AnalysisError("head axis is vertical inside the analysis window")
    axis = axis / norms[:, None]
    tangent = math.copysign(1.0, slope) * np.column_stack(
        [-np.sin(phi), np.cos(phi)])
    cross = axis[:, 0] * tangent[:, 1] - axis[:, 1] * tangent[:, 0]
    dots = np.clip(np.sum(axis * tangent, axis=1), -1.0, 1.0)
    signed = np.arctan2(cross, dots)
    theta = float(np.mean(np.abs(signed)))

    wh = float(np.mean(np.asarray(traj.omega_h)[mask]))
    wt = float(np.mean(np.asarray(traj.omega_t)[mask]))
    return SteadyStateSummary(omega_h=wh, omega_t=wt, omega_yr=omega_yr,
                              R_yr=radius, theta_heading=theta,
                              circle_center=center, fit_residual=residual,
                              tangent_offset=float(np.mean(signed)))


def summarize_switching(traj: Trajectory, T: float) -> SwitchingSummary:
    """Net-drift summary of a square-wave run with half-period T.

    Positions are sampled at integer multiples of the full period 2T; the
    first period is discarded as transient.  Per-period chords must agree
    (scatter below 20%) for the trajectory to count as periodic.
    """
    t = np.asarray(traj.times, dtype=float)
    pos = np.asarray(traj.head_pos, dtype=float)[:, [0, 2]]
    period = 2.0 * T
    n_per = int(math.floor((t[-1] - t[0]) / period + 1.0e-9))
    if n_per < 3:
        raise AnalysisError("switching summary needs >= 3 full periods")
    samples = t[0] + period * np.arange(n_per + 1)
    p = np.column_stack([np.interp(samples, t, pos[:, 0]),
                         np.interp(samples, t, pos[:, 1])])
    chords = np.diff(p, axis=0)[1:]         # skip the first (transient) period
    mean_chord = chords.mean(axis=0)
    scale = np.linalg.norm(mean_chord)
    scatter = float(np.max(np.linalg.norm(chords - mean_chord, axis=1))
                    / max(scale, 1.0e-300))
    if scale < 1.0e-300 or scatter > 0.20:
        raise NonPeriodicError(
            f"per-period displacement scatter {scatter:.3g} exceeds 20%; "
            "trajectory is not periodic")

    net = p[-1] - p[1]
    v = float(np.linalg.norm(net) / (samples[-1] - samples[1]))
    direction = net / np.linalg.norm(net)

    mask = t >= samples[1]
    axis = np.asarray(traj.head_axis, dtype=float)[mask][:, [0, 2]]
    norms = np.linalg.norm(axis, axis=1)
    axis = axis / np.maximum(norms, 1.0e-300)[:, None]
    theta = float(np.mean(np.arccos(
        np.clip(axis @ direction, -1.0, 1.0))))
    return SwitchingSummary(theta_heading=theta, v=v, T=T,
                            direction=direction, period_scatter=scatter)


# ---------------------------------------------------------------------------
# nondimensionalization


@dataclass
class NondimScale:
    time_scale: float   # mu0 l^4 / EI [s]

    def omega_bar(self, omega):
        return np.asarray(omega) * self.time_scale

    def t_bar(self, t):
        return np.asarray(t) / self.time_scale


def nondimensionalize(config: RobotConfig) -> NondimScale:
    return NondimScale(time_scale=config.time_scale())


# ---------------------------------------------------------------------------
# measurements and calibration


@dataclass
class Measurement:
    N: int                  # number of tails
    l: float                # tail length [m]
    omega_motor: float      # motor rate [rad/s]
    omega_h: float          # measured head spin rate [rad/s]
    omega_yr: float         # measured yaw rate [rad/s]


MEASUREMENT_HEADER = "N,l_m,omega_motor_rad_s,omega_h_rad_s,omega_yr_rad_s"


def save_measurements(measurements, path):
    with open(path, "w") as fh:
        fh.write(MEASUREMENT_HEADER + "\n")
        for m in measurements:
            fh.write(f"{m.N},{m.l:.12g},{m.omega_motor:.12g},"
                     f"{m.omega_h:.12g},{m.omega_yr:.12g}\n")


def load_measurements(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != MEASUREMENT_HEADER:
            raise AnalysisError(
                f"bad measurement header {header!r}; expected {MEASUREMENT_HEADER!r}")
        out = []
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise AnalysisError(f"line {line_no}: expected 5 fields")
            try:
                out.append(Measurement(int(parts[0]), *map(float, parts[1:])))
            except ValueError as exc:
                raise AnalysisError(f"line {line_no}: {exc}") from exc
    return out


@dataclass
class CalibrationOptions:
    jobs: int = 1
    grid_points: int = 5            # per-axis seed grid resolution
    bounds: tuple = (0.5, 10.0)
    duration_scale: float = 8.0     # run length in intrinsic time scales
    window_frac: float = 0.5        # trailing fraction used as steady window
    max_iter: int = 80              # Nelder-Mead iteration budget
    tol_scale: float = 1.0e-6       # Newton tolerance for the forward sims


@dataclass
class CalibrationResult:
    C_t: float
    C_r: float
    C_yr: float
    fit_error: float                # mean relative error at the fitted triple
    residuals: list = field(default_factory=list)  # per-measurement dicts
    evaluations: int = 0


def measurement_config(config_base: RobotConfig, m: Measurement,
                       triple) -> RobotConfig:
    """Base config adapted to one measurement's (N, l) and a drag triple.

    The time step is rescaled with the intrinsic time scale so that a coarse
    base resolution stays coarse across tail lengths.
    """
    dt = config_base.dt * (m.l / config_base.l) ** 4
    return config_base.replace(N=m.N, l=m.l, dt=dt, C_t=triple[0],
                               C_r=triple[1], C_yr=triple[2])


def predict_measurement(args):
    """Worker: simulate one measurement config -> ((omega_h, omega_yr), err)."""
    config, omega_motor, duration_scale, window_frac, tol_scale = args
    ts = config.time_scale()
    duration = duration_scale * ts
    schedule = ActuationSchedule.constant(omega_motor, duration)
    try:
        traj = simulate(config, schedule, opts=SimOptions(tol_scale=tol_scale))
        window = ((1.0 - window_frac) * duration, duration)
        s = summarize_steady(traj, window=window)
    except (AnalysisError, SolverError, ModelBreakError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    return (s.omega_h, s.omega_yr), None


def _mean_relative_error(predictions, measurements):
    errs = []
    for (wh, wyr), m in zip(predictions, measurements):
        errs.append(abs(wh - m.omega_h) / max(abs(m.omega_h), 1.0e-300))
        errs.append(abs(wyr - m.omega_yr) / max(abs(m.omega_yr), 1.0e-300))
    return float(np.mean(errs))


def calibrate(measurements, config_base: RobotConfig,
              options: CalibrationOptions = None) -> CalibrationResult:
    """Fit (C_t, C_r, C_yr) to measured head-spin and yaw rates.

    Seeds a Nelder-Mead refinement with the best point of a coarse grid over
    the bounds box.  The objective is the mean relative error over all
    measurements of both omega_h and omega_yr (equal weights); normalization
    cancels since simulation and measurement share a time scale.
    """
    opts = options or CalibrationOptions()
    if len(measurements) < 4:
        raise CalibrationError("calibration needs >= 4 measurements")
    if len({(m.N, round(m.l, 12)) for m in measurements}) < 2:
        raise CalibrationError(
            "measurements must span >= 2 distinct (N, l) settings")
    lo, hi = opts.bounds

    executor = ProcessPoolExecutor(opts.jobs) if opts.jobs > 1 else None
    evaluations = 0
    cache = {}

    def run_batch(arg_list):
        if executor is None:
            return [predict_measurement(a) for a in arg_list]
        return list(executor.map(predict_measurement, arg_list, chunksize=1))

    def evaluate(triples, subset=None, tag=""):
        """Mean relative error for each triple; (errors, failure messages)."""
        nonlocal evaluations
        ms = subset if subset is not None else measurements
        todo = [tr for tr in triples if (tag, tr) not in cache]
        args = [(measurement_config(config_base, m, tr), m.omega_motor,
                 opts.duration_scale, opts.window_frac, opts.tol_scale)
                for tr in todo for m in ms]
        results = run_batch(args)
        evaluations += len(todo)
        k = len(ms)
        for i, tr in enumerate(todo):
            chunk = results[i * k:(i + 1) * k]
            fails = [msg for _, msg in chunk if msg is not None]
            if fails:
                cache[tag, tr] = (math.inf, fails[0])
            else:
                preds = [p for p, _ in chunk]
                cache[tag, tr] = (_mean_relative_error(preds, ms), None)
        return ([cache[tag, tr][0] for tr in triples],
                [cache[tag, tr][1] for tr in triples])

    try:
        axis = np.linspace(lo, hi, opts.grid_points)
        grid = [(float(a), float(b), float(c))
                for a in axis for b in axis for c in axis]
        # the seed grid only has to land in the right basin, so it is
        # screened on two spanning measurements rather than the full set
        screen = ([measurements[0], measurements[-1]]
                  if len(measurements) > 2 else list(measurements))
        errors, fails = evaluate(grid, subset=screen, tag="screen")
        best = int(np.argmin(errors))
        if not math.isfinite(errors[best]):
            detail = "; ".join(sorted({f for f in fails if f})[:5])
            raise CalibrationError(
                f"no seed candidate reached steady state: {detail}")

        def residual_vec(x):
            # relative residuals of both observables per measurement; the
            # fit is zero-residual at a consistent triple, where a
            # Gauss-Newton type solver converges fast along the shallow
            # (C_t, C_yr) valley that defeats direct-search methods
            nonlocal evaluations
            tr = tuple(float(v) for v in np.clip(x, lo, hi))
            args = [(measurement_config(config_base, m, tr), m.omega_motor,
                     opts.duration_scale, opts.window_frac, opts.tol_scale)
                    for m in measurements]
            evaluations += 1
            out = []
            for m, (pred, msg) in zip(measurements, run_batch(args)):
                if pred is None:
                    out += [10.0, 10.0]
                else:
                    out += [pred[0] / m.omega_h - 1.0,
                            pred[1] / m.omega_yr - 1.0]
            return np.asarray(out)

        res = least_squares(residual_vec, np.array(grid[best]),
                            bounds=(lo, hi), method="trf", diff_step=1e-2,
                            xtol=1e-6, ftol=1e-10, gtol=1e-12,
                            max_nfev=opts.max_iter)
        triple = tuple(float(v) for v in np.clip(res.x, lo, hi))
        fit_error = evaluate([triple])[0][0]
        if not math.isfinite(fit_error):
            triple = grid[best]
            fit_error = evaluate([triple])[0][0]

        residuals = []
        args = [(measurement_config(config_base, m, triple), m.omega_motor,
                 opts.duration_scale, opts.window_frac, opts.tol_scale) for m in measurements]
        for m, (pred, msg) in zip(measurements, run_batch(args)):
            wh, wyr = pred if pred is not None else (math.nan, math.nan)
            residuals.append({
                "N": m.N, "l": m.l, "omega_motor": m.omega_motor,
                "omega_h_meas": m.omega_h, "omega_h_sim": wh,
                "omega_yr_meas": m.omega_yr, "omega_yr_sim": wyr,
            })
    finally:
        if executor is not None:
            executor.shutdown()

    return CalibrationResult(C_t=triple[0], C_r=triple[1], C_yr=triple[2],
                             fit_error=fit_error, residuals=residuals,
                             evaluations=evaluations)


def validation_error(measurements, config_base: RobotConfig, triple,
                     options: CalibrationOptions = None) -> float:
    """Exact calibration objective of a fixed triple on a measurement set."""
    opts = options or CalibrationOptions()
    preds = []
    args = [(measurement_config(config_base, m, triple), m.omega_motor,
             opts.duration_scale, opts.window_frac, opts.tol_scale) for m in measurements]
    if opts.jobs > 1:
        with ProcessPoolExecutor(opts.jobs) as ex:
            results = list(ex.map(predict_measurement, args, chunksize=1))
    else:
        results = [predict_measurement(a) for a in args]
    for pred, msg in results:
        if pred is None:
            raise CalibrationError(f"validation run failed: {msg}")
        preds.append(pred)
    return _mean_relative_error(preds, measurements)
