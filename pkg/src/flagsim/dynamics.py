"""Time integration of the robot: implicit Euler with Newton iterations.

Motor actuation enters as a time-varying natural twist at the second head
node; drag is fully implicit in velocity for unconditional damping
stability.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import elastic, hydro
from .config import RobotConfig
from .rod import (
    RobotState, Topology, GeometryError, HEAD, TAIL,
    apply_q, build_robot, head_axis, signed_angle, transport_vectors,
    rotate_state_about_vertical,
)


class SolverError(RuntimeError):
    """Newton iteration failed to converge even after step halving."""


class ModelBreakError(RuntimeError):
    """A modeling assumption (negligible vertical drift) was violated."""


class ScheduleError(ValueError):
    """Invalid actuation schedule."""


@dataclass
class ActuationSchedule:
    """Piecewise-constant motor angular velocity omega(t)."""

    switches: list          # ordered (t_switch [s], omega [rad/s]) pairs
    duration: float         # total duration [s]

    def __post_init__(self):
        if not self.switches:
            raise ScheduleError("schedule has no segments")
        times = [t for t, _ in self.switches]
        if abs(times[0]) > 1e-15:
            raise ScheduleError("first switch must be at t = 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ScheduleError("switch times must be strictly increasing")
        if self.duration <= times[-1]:
            raise ScheduleError("duration must exceed the last switch time")

    @classmethod
    def constant(cls, omega, duration):
        return cls(switches=[(0.0, float(omega))], duration=float(duration))

    @classmethod
    def from_segments(cls, segments):
        """Build from (duration, omega) pairs."""
        t, switches = 0.0, []
        for dur, omega in segments:
            if dur <= 0:
                raise ScheduleError("segment durations must be positive")
            switches.append((t, float(omega)))
            t += dur
        return cls(switches=switches, duration=t)

    def omega_at(self, t):
        omega = self.switches[0][1]
        for ts, om in self.switches:
            if t >= ts - 1e-15:
                omega = om
            else:
                break
        return omega

    def values(self):
        return sorted({om for _, om in self.switches})

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("t_switch_s,omega_rad_s\n")
            for t, om in self.switches:
                fh.write(f"{t:.12g},{om:.12g}\n")
            fh.write(f"{self.duration:.12g},end\n")

    @classmethod
    def from_csv(cls, path):
        switches, duration = [], None
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("t_switch_s"):
                raise ScheduleError(f"bad schedule header: {header!r}")
            for line in fh:
                t_s, om_s = line.strip().split(",")
                if om_s == "end":
                    duration = float(t_s)
                else:
                    switches.append((float(t_s), float(om_s)))
        if duration is None:
            raise ScheduleError("schedule file missing end marker")
        return cls(switches=switches, duration=duration)


def build_mass(config: RobotConfig, topo: Topology) -> np.ndarray:
    """Lumped mass per DOF; values matter little in the quasi-static regime."""
    m = np.zeros(topo.n_dof)
    mx = m[: 3 * topo.n_nodes].reshape(-1, 3)
    mx[list(topo.head_nodes)] = config.head_mass / 3.0
    node_mass = config.rho_line * topo.rft_voronoi
    # tail roots also carry half a spoke of disc material
    for k, node in enumerate(topo.rft_nodes):
        mx[node] += node_mass[k]
    spoke_mass = config.rho_line * config.spoke_length
    for tail in topo.tail_nodes:
        mx[tail[0]] += 0.5 * spoke_mass
        mx[2] += 0.5 * spoke_mass / len(topo.tail_nodes)
    edge_mass = config.rho_line * topo.edge_rest_len
    gyr2 = np.where(topo.edge_kind == TAIL, config.r0 ** 2 / 2.0,
                    config.R ** 2 / 2.0)
    edge_mass = np.where(topo.edge_kind == HEAD,
                         config.head_mass / 2.0, edge_mass)
    m[3 * topo.n_nodes:] = edge_mass * gyr2
    return m


@dataclass
class SimOptions:
    tol_scale: float = 1.0e-6      # residual tolerance vs characteristic force
    max_iter: int = 50
    max_halvings: int = 4
    check_vertical: bool = True
    vertical_tolerance: float = 0.25   # allowed head |dy| as a fraction of R
    energy_audit: bool = False
    snapshot_stride: float = None  # seconds between full-state snapshots
    mass_scale: float = 1.0
    tail_stiffen: float = 1.0      # bend/twist multiplier on the soft stencils
    flotation: float = 0.0         # waterline restoring stiffness [N/m]


def apply_actuation(state: RobotState, omega, dt, stencil_index=0) -> RobotState:
    """Advance the motor's natural twist by omega*dt (accumulated angle)."""
    out = state.copy()
    out.natural_twist[stencil_index] += omega * dt
    return out


class _Stepper:
    """Holds per-run immutable data and performs implicit Euler steps."""

    def __init__(self, config: RobotConfig, topo: Topology,
                 opts: SimOptions = None):
        self.config = config
        self.topo = topo
        self.opts = opts or SimOptions()
        self.stiff = elastic.stiffness_for(config, topo)
        if self.opts.tail_stiffen != 1.0:
            soft = ~topo.stencil_rigid
            self.stiff.EI = np.where(soft, self.stiff.EI
                                     * self.opts.tail_stiffen, self.stiff.EI)
            self.stiff.GJ = np.where(soft, self.stiff.GJ
                                     * self.opts.tail_stiffen, self.stiff.GJ)
        self.mass = build_mass(config, topo) * self.opts.mass_scale
        f_char = self.opts.tol_scale * config.EI() / config.l ** 2
        tol = np.full(topo.n_dof, f_char)
        tol[3 * topo.n_nodes:] = f_char * config.l
        self.tol = tol
        self.last_hydro_force = None   # populated on each accepted step
        # buoyancy linearized about the build waterline, acting on the head
        # center's vertical DOF (node 1); zero stiffness disables it
        self.iy_flot = 3 * 1 + 1

    def residual(self, trial, q0, v0, dt):
        _, fe = elastic.elastic_energy_force(trial, self.topo, self.stiff)
        fh = hydro.assemble_hydro_forces(trial, self.topo, self.config)
        r = self.mass * (trial.q - q0 - dt * v0) / dt ** 2 - fe - fh
        if self.opts.flotation:
            r[self.iy_flot] += self.opts.flotation * trial.q[self.iy_flot]
        return r, fh

    def newton(self, state, dt):
        # diverging trials overflow before the finiteness guard trips; keep
        # those transient warnings quiet
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self._newton(state, dt)

    def _newton(self, state, dt):
        q0, v0 = state.q, state.qdot
        q = q0 + dt * v0
        trial = apply_q(state, self.topo, q, (q - q0) / dt)
        r, fh = self.residual(trial, q0, v0, dt)
        lu = None
        for it in range(self.opts.max_iter):
            if not np.all(np.isfinite(r)):
                return None
            if np.max(np.abs(r) / self.tol) < 1.0:
                trial.time = state.time + dt
                self.last_hydro_force = fh
                return trial
            if it % 8 == 0:
                K = elastic.elastic_hessian(trial, self.topo, self.stiff)
                D = hydro.drag_velocity_jacobian(trial, self.topo, self.config)
                J = np.diag(self.mass / dt ** 2) + K + D / dt
                if self.opts.flotation:
                    J[self.iy_flot, self.iy_flot] += self.opts.flotation
                if not np.all(np.isfinite(J)):
                    return None
                lu = scipy.linalg.lu_factor(J)
            q = q - scipy.linalg.lu_solve(lu, r)
            trial = apply_q(state, self.topo, q, (q - q0) / dt)
            r, fh = self.residual(trial, q0, v0, dt)
        return None

    def step(self, state: RobotState, omega, dt, _depth=0) -> RobotState:
        """One implicit-Euler step of size dt, halving on non-convergence."""
        advanced = apply_actuation(state, omega, dt)
        try:
            result = self.newton(advanced, dt)
        except GeometryError:
            result = None
        if result is not None:
            return result
        if _depth >= self.opts.max_halvings:
            raise SolverError(
                f"Newton failed at t={state.time:.6g}s after "
                f"{self.opts.max_halvings} halvings (dt={dt:.3g})")
        half = self.step(state, omega, dt / 2.0, _depth + 1)
        return self.step(half, omega, dt / 2.0, _depth + 1)


@dataclass
class Trajectory:
    """Sampled head kinematics plus optional full-state snapshots."""

    times: np.ndarray
    head_pos: np.ndarray      # (k, 3)
    head_axis: np.ndarray     # (k, 3)
    omega_h: np.ndarray       # lab-frame spin rate of the head [rad/s]
    omega_t: np.ndarray       # lab-frame spin rate of the disc/tails [rad/s]
    omega_motor: np.ndarray
    snapshots: list = field(default_factory=list)   # (t, q, qdot)
    energy_report: dict = None
    final_state: RobotState = None

    CSV_HEADER = "t,x,y,z,ax,ay,az,omega_h,omega_t,omega_motor"

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.CSV_HEADER + "\n")
            for i in range(len(self.times)):
                row = [self.times[i], *self.head_pos[i], *self.head_axis[i],
                       self.omega_h[i], self.omega_t[i], self.omega_motor[i]]
                fh.write(",".join(f"{v:.12g}" for v in row) + "\n")

    @classmethod
    def from_csv(cls, path):
        data = np.genfromtxt(path, delimiter=",", skip_header=1)
        data = np.atleast_2d(data)
        return cls(times=data[:, 0], head_pos=data[:, 1:4],
                   head_axis=data[:, 4:7], omega_h=data[:, 7],
                   omega_t=data[:, 8], omega_motor=data[:, 9])

    def write_snapshots(self, path):
        """Length-prefixed binary records: t, ndof, q, qdot (little-endian)."""
        with open(path, "wb") as fh:
            for t, q, qdot in self.snapshots:
                payload = struct.pack("<dI", t, len(q))
                payload += q.astype("<f8").tobytes()
                payload += qdot.astype("<f8").tobytes()
                fh.write(struct.pack("<Q", len(payload)))
                fh.write(payload)

    @staticmethod
    def read_snapshots(path):
        out = []
        with open(path, "rb") as fh:
            while True:
                head = fh.read(8)
                if not head:
                    break
                (size,) = struct.unpack("<Q", head)
                payload = fh.read(size)
                t, ndof = struct.unpack_from("<dI", payload)
                arr = np.frombuffer(payload, dtype="<f8", offset=12)
                out.append((t, arr[:ndof].copy(), arr[ndof:].copy()))
        return out


def _spin_rate(u_prev, a_prev, u_new, a_new, dt):
    """Rotation rate of a marker vector about a (slowly precessing) axis."""
    u_prev = u_prev - np.dot(u_prev, a_prev) * a_prev
    u_new = u_new - np.dot(u_new, a_new) * a_new
    u_t = transport_vectors(u_prev[None], a_prev[None], a_new[None])[0]
    return float(signed_angle(u_t[None], u_new[None], a_new[None])[0]) / dt


def _markers(state: RobotState, topo: Topology):
    axis = head_axis(state)
    m1, _ = state.material_frames()
    spoke_edge = topo.stencil_edges[1, 1] if topo.n_stencils > 1 else 0
    return axis, m1[0].copy(), state.tangent[spoke_edge].copy()


def simulate(config: RobotConfig, schedule: ActuationSchedule,
             output_stride=None, initial=None, initial_yaw=0.0,
             opts: SimOptions = None) -> Trajectory:
    """Run the schedule from the undeformed pose (or a given state).

    `initial` may be a (state, topology) pair, e.g. a steady snapshot from a
    characterization run; `initial_yaw` rigidly rotates the start pose about
    the vertical axis.  Deterministic for identical inputs.
    """
    opts = opts or SimOptions()
    if initial is None:
        state, topo = build_robot(config)
    else:
        state, topo = initial
        state = state.copy()
        state.time = 0.0
    if initial_yaw != 0.0:
        state = rotate_state_about_vertical(state, topo, initial_yaw)
    if output_stride is None:
        output_stride = 0.02 * config.time_scale()

    stepper = _Stepper(config, topo, opts)
    dt = config.dt
    n_steps = int(round(schedule.duration / dt))
    y0 = state.x[1][1]

    times, pos, ax, w_h, w_t, w_m = [], [], [], [], [], []
    snapshots = []
    prev_mark = _markers(state, topo)
    prev_t = state.time
    next_sample = 0.0
    next_snap = 0.0 if opts.snapshot_stride else None

    spring_energy = lambda s: 0.5 * opts.flotation * s.q[stepper.iy_flot] ** 2
    audit = {"work_in": 0.0, "dissipated": 0.0,
             "elastic0": elastic.elastic_energy_force(state, topo, stepper.stiff)[0],
             "spring0": spring_energy(state),
             "kinetic0": 0.5 * float(np.sum(stepper.mass * state.qdot ** 2))}

    def record(s, omega):
        nonlocal prev_mark, prev_t
        axis, m1h, spoke = _markers(s, topo)
        if s.time > prev_t:
            dts = s.time - prev_t
            w_h.append(_spin_rate(prev_mark[1], prev_mark[0], m1h, axis, dts))
            w_t.append(_spin_rate(prev_mark[2], prev_mark[0], spoke, axis, dts))
        else:
            w_h.append(0.0)
            w_t.append(0.0)
        times.append(s.time)
        pos.append(s.x[1].copy())
        ax.append(axis)
        w_m.append(omega)
        prev_mark = (axis, m1h, spoke)
        prev_t = s.time

    record(state, schedule.omega_at(0.0))
    next_sample = output_stride
    for i in range(n_steps):
        t = i * dt
        omega = schedule.omega_at(t)
        if opts.energy_audit:
            e_before = elastic.elastic_energy_force(state, topo, stepper.stiff)[0]
            shifted = apply_actuation(state, omega, dt)
            e_shifted = elastic.elastic_energy_force(shifted, topo, stepper.stiff)[0]
            fh_before = hydro.assemble_hydro_forces(state, topo, config)
        new_state = stepper.step(state, omega, dt)
        if opts.energy_audit:
            # trapezoidal estimates: the motor work dE/dtau0 * omega dt is
            # averaged over the step endpoints, which cancels the O(dtau^2)
            # staircase term of the shift-then-relax splitting
            unshifted = apply_actuation(new_state, -omega, dt)
            e_after = elastic.elastic_energy_force(new_state, topo, stepper.stiff)[0]
            e_after_un = elastic.elastic_energy_force(unshifted, topo, stepper.stiff)[0]
            audit["work_in"] += 0.5 * ((e_shifted - e_before)
                                       + (e_after - e_after_un))
            dq = new_state.q - state.q
            audit["dissipated"] -= 0.5 * float(
                np.dot(fh_before + stepper.last_hydro_force, dq))
        state = new_state
        drift = abs(state.x[1][1] - y0)
        if opts.check_vertical and drift > opts.vertical_tolerance * config.R:
            raise ModelBreakError(
                f"head vertical drift {state.x[1][1] - y0:.3g} m exceeds "
                f"{opts.vertical_tolerance:g} R at t={state.time:.6g}s")
        if state.time + 1e-12 >= next_sample:
            record(state, omega)
            next_sample += output_stride
        if next_snap is not None and state.time + 1e-12 >= next_snap:
            snapshots.append((state.time, state.q.copy(), state.qdot.copy()))
            next_snap += opts.snapshot_stride

    if len(times) > 1:
        w_h[0], w_t[0] = w_h[1], w_t[1]

    report = None
    if opts.energy_audit:
        report = dict(audit)
        report["elastic1"] = elastic.elastic_energy_force(state, topo, stepper.stiff)[0]
        report["spring1"] = spring_energy(state)
        report["kinetic1"] = 0.5 * float(np.sum(stepper.mass * state.qdot ** 2))
        report["balance_error"] = (
            report["work_in"] - report["dissipated"]
            - (report["elastic1"] - report["elastic0"])
            - (report["spring1"] - report["spring0"])
            - (report["kinetic1"] - report["kinetic0"]))

    return Trajectory(
        times=np.array(times), head_pos=np.array(pos), head_axis=np.array(ax),
        omega_h=np.array(w_h), omega_t=np.array(w_t), omega_motor=np.array(w_m),
        snapshots=snapshots, energy_report=report, final_state=state,
    )
