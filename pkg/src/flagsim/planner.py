"""Open-loop path planning with a binary motor signal.

The robot's only input is a motor velocity restricted to +/-omega_H.  At
constant omega it sweeps a circle of radius R_yr at yaw rate omega_yr, so
paths are assembled from circular arcs: zig-zag chords for straight lines,
asymmetric arc pairs for large circles, and held turns at polygon corners.

Planner geometry lives in the horizontal plane with coordinates (x, z) and
positive angles measured from +x toward +z (the direction of increasing
atan2(z, x)); a motor sign that yields omega_yr > 0 about vertical +y turns
the path toward negative plane angles.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass

import numpy as np

from .config import RobotConfig
from .dynamics import ActuationSchedule, SimOptions, simulate
from .rod import build_robot
from .analysis import summarize_steady


class PlannerError(ValueError):
    """Base class for planning failures."""


class InfeasiblePathError(PlannerError):
    """Requested path cannot be realized with the robot's turning radius."""


@dataclass
class MotionPrimitiveMap:
    """Steady-turn characterization at motor speed +omega_H."""

    omega_H: float          # characterized motor rate [rad/s], signed
    omega_bar_H: float      # normalized motor rate
    omega_yr: float         # yaw rate about vertical +y at omega_H [rad/s]
    R_yr: float             # turning radius [m]
    theta_heading: float    # long-axis vs path-tangent angle [rad]
    config: RobotConfig = None
    snapshot: tuple = None  # (state, topology) steady pose for execution
    # signed plane angle from the long axis to the path tangent at +omega_H;
    # mirrors with the motor sign.  None falls back to +theta_heading.
    tangent_offset: float = None

    def offset_for(self, omega):
        """Signed long-axis -> tangent angle for a motor of given sign."""
        off = (self.tangent_offset if self.tangent_offset is not None
               else self.theta_heading)
        return off if omega * self.omega_H > 0 else -off

    def advance_ratio(self):
        """Net advance per zig-zag chord, |cos(tangent offset)|."""
        off = (self.tangent_offset if self.tangent_offset is not None
               else self.theta_heading)
        return abs(math.cos(off))

    def turn_rate(self, motor_sign):
        """Plane-angle rate of the path tangent for a motor of given sign."""
        rel = ((1.0 if motor_sign > 0 else -1.0)
               * math.copysign(1.0, self.omega_H))
        return -self.omega_yr * rel

    def motor_for(self, turn_sign):
        """Motor value that turns the plane heading in the given direction."""
        return abs(self.omega_H) * (
            1.0 if self.turn_rate(+1) * turn_sign > 0 else -1.0)


def characterize(config: RobotConfig, omega_H, duration_scale=20.0,
                 window_frac=0.5, opts: SimOptions = None) -> MotionPrimitiveMap:
    """Constant-omega run -> motion primitive map with a steady snapshot."""
    if omega_H == 0.0:
        raise PlannerError("omega_H = 0 produces no motion primitive")
    ts = config.time_scale()
    duration = duration_scale * ts
    schedule = ActuationSchedule.constant(omega_H, duration)
    opts = opts or SimOptions()
    traj = simulate(config, schedule, opts=opts)
    summary = summarize_steady(
        traj, window=((1.0 - window_frac) * duration, duration))
    _, topo = build_robot(config)
    return MotionPrimitiveMap(
        omega_H=omega_H,
        omega_bar_H=omega_H * ts,
        omega_yr=summary.omega_yr,
        R_yr=summary.R_yr,
        theta_heading=summary.theta_heading,
        config=config,
        snapshot=(traj.final_state, topo),
        tangent_offset=summary.tangent_offset,
    )


# ---------------------------------------------------------------------------
# arc geometry


def arc_chain(primitive: MotionPrimitiveMap, segments, start=(0.0, 0.0),
              heading=0.0):
    """Steady-arc prediction of a schedule: endpoint positions per segment.

    segments are (duration, omega) pairs; returns (points, headings) with
    points[0] = start.  This is the planner's forward model and the oracle
    for plan-execute consistency.  headings track the robot's long axis; the
    path tangent leads it by the signed offset `primitive.offset_for(omega)`,
    which mirrors with the motor sign, so the tangent jumps by twice the
    offset at each reversal and a symmetric period nets only
    2 chord |cos(offset)| of advance.
    """
    p = np.array(start, dtype=float)
    psi = float(heading)
    points = [p.copy()]
    headings = [psi]
    R = primitive.R_yr
    for dur, omega in segments:
        rate = primitive.turn_rate(omega)
        off = primitive.offset_for(omega)
        delta = rate * dur
        if abs(delta) < 1.0e-12:
            ang = psi + off
            p = p + R * abs(primitive.omega_yr) * dur * np.array(
                [math.cos(ang), math.sin(ang)])
        else:
            chord = 2.0 * R * math.sin(abs(delta) / 2.0)
            ang = psi + delta / 2.0 + off
            p = p + chord * np.array([math.cos(ang), math.sin(ang)])
            psi += delta
        points.append(p.copy())
        headings.append(psi)
    return np.array(points), np.array(headings)


def _net_cycle_chord(primitive, theta_arc, delta_theta):
    """Net displacement length of one (+theta_arc, -(theta_arc-delta)) cycle."""
    wyr = abs(primitive.omega_yr)
    segments = [(theta_arc / wyr, primitive.motor_for(+1))]
    if theta_arc - delta_theta > 0.0:
        segments.append(((theta_arc - delta_theta) / wyr,
                         primitive.motor_for(-1)))
    points, _ = arc_chain(primitive, segments)
    return float(np.linalg.norm(points[-1] - points[0]))


def _bisect(f, a, b, tol=1.0e-8, max_iter=200):
    fa, fb = f(a), f(b)
    if fa == 0.0:
        return a
    if fb == 0.0:
        return b
    if fa * fb > 0.0:
        return None
    for _ in range(max_iter):
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0.0 or (b - a) < tol:
            return m
        if fa * fm < 0.0:
            b, fb = m, fm
        else:
            a, fa = m, fm
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# planning operations


def default_half_period(primitive: MotionPrimitiveMap) -> float:
    """Half-period making each zig-zag chord one tail length long."""
    l = primitive.config.l if primitive.config is not None else primitive.R_yr
    ratio = min(l / (2.0 * primitive.R_yr), math.sin(math.pi / 4.0))
    return 2.0 * math.asin(ratio) / abs(primitive.omega_yr)


def plan_line(primitive: MotionPrimitiveMap, length, T=None,
              first_sign=+1) -> ActuationSchedule:
    """Symmetric square wave advancing `length` along a straight line.

    The schedule opens and closes with half-duration segments so the zig-zag
    is centered on the line and the final heading matches the initial one;
    segment count is chosen so the predicted net advance covers `length`.
    """
    if length <= 0:
        raise PlannerError("line length must be positive")
    if T is None:
        T = default_half_period(primitive)
    wyr = abs(primitive.omega_yr)
    theta = wyr * T
    if theta >= math.pi:
        raise PlannerError(
            f"T|omega_yr| = {theta:.3g} must stay below pi (half circle)")
    ratio = primitive.advance_ratio()
    if ratio < 1.0e-3:
        raise PlannerError(
            "tangent offset is a right angle: switching yields no net "
            "advance for this primitive")
    chord = 2.0 * primitive.R_yr * math.sin(theta / 2.0) * ratio
    w = primitive.motor_for(+1) * (1.0 if first_sign > 0 else -1.0)

    if 2.0 * chord >= length:
        # single full period covering the whole length exactly
        half = length / (4.0 * primitive.R_yr * ratio)
        t_cover = 2.0 * math.asin(min(half, 1.0)) / wyr
        return ActuationSchedule.from_segments(
            [(t_cover, w), (t_cover, -w)])

    # half + k full + half segments advance (k+1) chords along the line;
    # k must be odd for the heading to close
    k = int(math.ceil(length / chord)) - 1
    if k % 2 == 0:
        k += 1
    segments = [(T / 2.0, w)]
    sign = -1.0
    for _ in range(k):
        segments.append((T, sign * w))
        sign = -sign
    segments.append((T / 2.0, sign * w))
    return ActuationSchedule.from_segments(segments)


def _solve_circle(primitive, radius, theta_arc=None, delta_theta=None):
    """Arc-pair cycle (theta_arc, delta_theta, n_cycles) tracking `radius`."""
    if radius <= primitive.R_yr:
        raise InfeasiblePathError(
            f"radius {radius:.3g} m must exceed the turning radius "
            f"R_yr = {primitive.R_yr:.3g} m")
    if theta_arc is not None and delta_theta is not None:
        raise PlannerError("give at most one of theta_arc / delta_theta")
    if theta_arc is None and delta_theta is None:
        theta_arc = 1.0

    eps = 1.0e-9
    if theta_arc is not None:
        def f(delta):
            return (_net_cycle_chord(primitive, theta_arc, delta)
                    - 2.0 * radius * math.sin(delta / 2.0))
        delta_theta = _bisect(f, eps, theta_arc - eps)
        if delta_theta is None:
            raise InfeasiblePathError(
                f"no delta_theta in (0, {theta_arc:.3g}) matches radius "
                f"{radius:.3g} m")
    # snap the cycle count per turn to an integer and re-solve theta_arc so
    # the chord polygon closes exactly
    n_cycles = max(3, int(round(2.0 * math.pi / delta_theta)))
    delta_theta = 2.0 * math.pi / n_cycles

    def g(theta):
        return (_net_cycle_chord(primitive, theta, delta_theta)
                - 2.0 * radius * math.sin(delta_theta / 2.0))
    theta_arc = _bisect(g, delta_theta + eps, math.pi - eps)
    if theta_arc is None:
        raise InfeasiblePathError(
            f"no theta_arc below pi tracks radius {radius:.3g} m with "
            f"delta_theta = {delta_theta:.3g}")
    return theta_arc, delta_theta, n_cycles


def _cycle_schedule(primitive, t_a, t_b, total_cycles,
                    direction=+1) -> ActuationSchedule:
    w_fwd = primitive.motor_for(+1 if direction > 0 else -1)
    segments = []
    for _ in range(total_cycles):
        segments.append((t_a, w_fwd))
        segments.append((t_b, -w_fwd))
    return ActuationSchedule.from_segments(segments)


def plan_circle(primitive: MotionPrimitiveMap, radius, turns=1.0,
                theta_arc=None, delta_theta=None,
                direction=+1) -> ActuationSchedule:
    """Track a circle of given radius by asymmetric arc pairs.

    Each cycle holds the motor for theta_arc of yaw, then reverses for
    theta_arc - delta_theta, leaving a net heading change delta_theta; the
    net chords form a polygon inscribed in the target circle.  Exactly one
    of theta_arc / delta_theta may be prescribed; the other is solved by
    bisection so the chord condition chord = 2 radius sin(delta/2) holds.
    """
    if turns <= 0:
        raise PlannerError("turns must be positive")
    theta_arc, delta_theta, n_cycles = _solve_circle(
        primitive, radius, theta_arc, delta_theta)
    wyr = abs(primitive.omega_yr)
    t_a = theta_arc / wyr
    t_b = (theta_arc - delta_theta) / wyr
    total_cycles = max(1, int(round(n_cycles * turns)))
    return _cycle_schedule(primitive, t_a, t_b, total_cycles, direction)


def _turn_angles(vertices, closed):
    """Signed plane turn angle at each visited corner."""
    v = np.asarray(vertices, dtype=float)
    edges = np.diff(np.vstack([v, v[:1]]) if closed else v, axis=0)
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths < 1.0e-12):
        raise PlannerError("polygon has a zero-length edge")
    dirs = edges / lengths[:, None]
    pairs = (list(zip(dirs, np.roll(dirs, -1, axis=0))) if closed
             else list(zip(dirs[:-1], dirs[1:])))
    angles = []
    for a, b in pairs:
        ang = math.atan2(a[0] * b[1] - a[1] * b[0], float(a @ b))
        angles.append(ang)
    return edges, lengths, angles


def plan_polygon(primitive: MotionPrimitiveMap, vertices, T=None,
                 closed=True) -> ActuationSchedule:
    """Chain zig-zag edges with held turns at the corners.

    Corner turns are constant-omega arcs of radius R_yr tangent to both
    edges (a fillet), so each adjacent edge is shortened by R_yr tan(|a|/2).
    """
    v = np.asarray(vertices, dtype=float)
    if len(v) < (3 if closed else 2):
        raise PlannerError("polygon needs >= 3 vertices (>= 2 if open)")
    edges, lengths, angles = _turn_angles(v, closed)
    for i, a in enumerate(angles):
        if not 0.0 < abs(a) < math.pi:
            raise InfeasiblePathError(
                f"turn angle {a:.3g} rad at corner {i} must lie in (0, pi)")

    trims = np.zeros(len(edges))   # per-edge total shortening
    wyr = abs(primitive.omega_yr)
    n_corners = len(angles)
    for i, a in enumerate(angles):
        cut = primitive.R_yr * math.tan(abs(a) / 2.0)
        trims[i] += cut
        trims[(i + 1) % len(edges)] += cut
    for i, (ln, tr) in enumerate(zip(lengths, trims)):
        if ln - tr <= 0.0:
            raise InfeasiblePathError(
                f"edge {i} (length {ln:.3g} m) is shorter than its corner "
                f"trims ({tr:.3g} m)")

    segments = []
    for i in range(len(edges)):
        line = plan_line(primitive, float(lengths[i] - trims[i]), T=T)
        t_prev = 0.0
        for (t_sw, om), nxt in zip(line.switches,
                                   line.switches[1:] + [(line.duration, 0.0)]):
            segments.append((nxt[0] - t_sw, om))
        if i < n_corners:
            a = angles[i]
            segments.append((abs(a) / wyr,
                             primitive.motor_for(1.0 if a > 0 else -1.0)))
    return ActuationSchedule.from_segments(segments)


# ---------------------------------------------------------------------------
# path specification files


@dataclass
class PathSpec:
    variant: str                 # 'line' | 'circle' | 'polygon'
    length: float = None         # line [m]
    radius: float = None         # circle [m]
    turns: float = 1.0
    theta_arc: float = None      # circle cycle arc [rad]
    vertices: np.ndarray = None  # polygon (k, 2) [m]
    closed: bool = True
    T: float = None              # zig-zag half period [s]


def parse_path_spec(text: str) -> PathSpec:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise PlannerError(f"path spec parse error: {exc}") from exc
    if not parser.has_section("path"):
        raise PlannerError("path spec must have a [path] section")
    sec = parser["path"]
    variant = sec.get("variant", "").strip()
    try:
        if variant == "line":
            spec = PathSpec("line", length=sec.getfloat("length_m"))
        elif variant == "circle":
            spec = PathSpec("circle", radius=sec.getfloat("radius_m"),
                            turns=sec.getfloat("turns", fallback=1.0),
                            theta_arc=sec.getfloat("theta_arc_rad",
                                                   fallback=None))
        elif variant == "polygon":
            rows = [r for r in sec.get("vertices_m", "").split(";") if r.strip()]
            verts = np.array([[float(c) for c in row.split(",")]
                              for row in rows])
            if verts.ndim != 2 or verts.shape[1] != 2:
                raise PlannerError("vertices_m must be 'x,z; x,z; ...' pairs")
            spec = PathSpec("polygon", vertices=verts,
                            closed=sec.getboolean("closed", fallback=True))
        else:
            raise PlannerError(
                f"unknown path variant {variant!r} "
                "(expected line, circle, or polygon)")
        spec.T = sec.getfloat("half_period_s", fallback=None)
    except (ValueError, TypeError) as exc:
        raise PlannerError(f"bad path spec value: {exc}") from exc
    if spec.variant == "line" and spec.length is None:
        raise PlannerError("path spec missing length_m")
    if spec.variant == "circle" and spec.radius is None:
        raise PlannerError("path spec missing radius_m")
    if spec.variant == "polygon" and (spec.vertices is None
                                      or spec.vertices.size == 0):
        raise PlannerError("path spec missing vertices_m")
    return spec


def load_path_spec(path) -> PathSpec:
    with open(path) as fh:
        return parse_path_spec(fh.read())


def plan(primitive: MotionPrimitiveMap, spec: PathSpec) -> ActuationSchedule:
    if spec.variant == "line":
        return plan_line(primitive, spec.length, T=spec.T)
    if spec.variant == "circle":
        return plan_circle(primitive, spec.radius, turns=spec.turns,
                           theta_arc=spec.theta_arc)
    if spec.variant == "polygon":
        return plan_polygon(primitive, spec.vertices, T=spec.T,
                            closed=spec.closed)
    raise PlannerError(f"unknown path variant {spec.variant!r}")


# ---------------------------------------------------------------------------
# execution


def execute(primitive: MotionPrimitiveMap, schedule: ActuationSchedule,
            initial_yaw=0.0, opts: SimOptions = None):
    """Run a schedule from the primitive's steady snapshot."""
    if primitive.snapshot is None or primitive.config is None:
        raise PlannerError("primitive map carries no snapshot to execute from")
    return simulate(primitive.config, schedule, initial=primitive.snapshot,
                    initial_yaw=initial_yaw, opts=opts)


def probe_switching(primitive: MotionPrimitiveMap, T=None, periods=3,
                    opts: SimOptions = None, refine=True):
    """Execute a centered square wave; return (drift_yaw, advance_ratio).

    drift_yaw is the plane angle of the net drift at yaw = 0: executing a
    plan with initial_yaw = drift_yaw - target_angle rotates the robot so
    its first straight leg advances along target_angle.  advance_ratio is
    the measured net advance per half period over the ideal
    2 R_yr sin(|omega_yr| T / 2) chord; with refine=True the primitive's
    tangent offset is re-fitted so |cos(offset)| matches it, folding the
    small reversal-transient loss into the forward model.
    """
    if T is None:
        T = default_half_period(primitive)
    w = primitive.motor_for(+1)
    segments = [(T / 2.0, w)]
    sign = -1.0
    for _ in range(2 * periods - 1):
        segments.append((T, sign * w))
        sign = -sign
    segments.append((T / 2.0, sign * w))
    schedule = ActuationSchedule.from_segments(segments)
    traj = execute(primitive, schedule, opts=opts)
    p = np.asarray(traj.head_pos)
    net = p[-1] - p[0]
    chord = 2.0 * primitive.R_yr * math.sin(
        abs(primitive.omega_yr) * T / 2.0)
    ratio = min(math.hypot(net[0], net[2]) / (2.0 * periods) / chord, 1.0)
    if refine:
        off0 = primitive.offset_for(primitive.omega_H)
        mag = (math.acos(-ratio) if abs(off0) > math.pi / 2.0
               else math.acos(ratio))
        primitive.tangent_offset = math.copysign(mag, off0)
    return math.atan2(net[2], net[0]), ratio


def drift_yaw(primitive: MotionPrimitiveMap, T=None, periods=3,
              opts: SimOptions = None):
    """Plane angle of the net drift of a centered square wave (yaw = 0)."""
    return probe_switching(primitive, T, periods, opts)[0]


def probe_cycle(primitive: MotionPrimitiveMap, t_a, t_b, cycles=4,
                direction=+1, opts: SimOptions = None, discard=1):
    """Execute asymmetric arc-pair cycles; return per-cycle (turn, chord).

    Runs `cycles` (t_a forward, t_b reverse) pairs and reads head positions
    at the cycle boundaries; the first `discard` cycles are dropped as
    startup transient, the rest form the chord polygon the big circle is
    built from.  turn is the signed plane angle between successive chords,
    chord the mean chord length.
    """
    if cycles < discard + 2:
        raise PlannerError("need at least discard + 2 probe cycles")
    schedule = _cycle_schedule(primitive, t_a, t_b, cycles, direction)
    traj = execute(primitive, schedule, opts=opts)
    period = t_a + t_b
    bounds = period * np.arange(discard, cycles + 1)
    px = np.interp(bounds, traj.times, traj.head_pos[:, 0])
    pz = np.interp(bounds, traj.times, traj.head_pos[:, 2])
    chords = np.diff(np.column_stack([px, pz]), axis=0)
    lengths = np.linalg.norm(chords, axis=1)
    angles = np.arctan2(chords[:, 1], chords[:, 0])
    turn = np.diff(angles)
    turn = (turn + math.pi) % (2.0 * math.pi) - math.pi
    return float(np.mean(turn)), float(np.mean(lengths))


def plan_circle_probed(primitive: MotionPrimitiveMap, radius, turns=1.0,
                       theta_arc=None, direction=+1, opts: SimOptions = None,
                       cycles=4, discard=1, max_probes=5,
                       rel_tol=0.015) -> ActuationSchedule:
    """plan_circle with the reverse arc trimmed against executed cycles.

    With the tangent offset near a right angle the two chords of an
    arc-pair cycle nearly cancel, so the analytic net chord -- and with it
    the tracked radius -- amplifies sub-degree offset errors into ~10%
    radius errors.  This variant measures the realized per-cycle turn and
    chord with probe_cycle and secant-iterates the reverse-arc duration
    until the realized circumscribed radius matches `radius`, then sets the
    cycle count from the measured turn angle.
    """
    if turns <= 0:
        raise PlannerError("turns must be positive")
    theta_a, delta_theta, _ = _solve_circle(primitive, radius, theta_arc)
    wyr = abs(primitive.omega_yr)
    t_a = theta_a / wyr

    def realized(tb):
        dth, chord = probe_cycle(primitive, t_a, tb, cycles=cycles,
                                 direction=direction, opts=opts,
                                 discard=discard)
        return dth, chord / (2.0 * math.sin(abs(dth) / 2.0))

    def model_radius(tb):
        dth = theta_a - wyr * tb
        return (_net_cycle_chord(primitive, theta_a, dth)
                / (2.0 * math.sin(dth / 2.0)))

    t_cur = (theta_a - delta_theta) / wyr
    dth, R_cur = realized(t_cur)
    t_prev = R_prev = None
    for _ in range(max_probes - 1):
        if abs(R_cur - radius) / radius <= rel_tol:
            break
        if t_prev is None:
            # seed the secant with the analytic slope
            h = 0.02 * t_cur
            slope = (model_radius(t_cur + h) - model_radius(t_cur - h)) \
                / (2.0 * h)
        else:
            denom = R_cur - R_prev
            if abs(denom) < 1.0e-12:
                break
            slope = denom / (t_cur - t_prev)
        t_next = t_cur + (radius - R_cur) / slope
        t_next = min(max(t_next, 0.05 * t_a), 0.999 * t_a)
        t_prev, R_prev = t_cur, R_cur
        t_cur = t_next
        dth, R_cur = realized(t_cur)
    if abs(R_cur - radius) / radius > 2.0 * rel_tol:
        raise InfeasiblePathError(
            f"probed cycle radius {R_cur:.3g} m did not converge to "
            f"{radius:.3g} m")
    total_cycles = max(1, int(round(2.0 * math.pi * turns / abs(dth))))
    return _cycle_schedule(primitive, t_a, t_cur, total_cycles, direction)
