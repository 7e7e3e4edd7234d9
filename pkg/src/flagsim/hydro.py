"""Hydrodynamic forces: RFT tail drag, head drag, and the interface force.

The tails see uniform bulk viscosity (they are fully submerged); the
near-interface viscosity profile enters only through the lateral-force
constant, for which a quadrature oracle is provided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .config import RobotConfig
from .rod import RobotState, Topology, GeometryError, head_axis

_WORLD_UP = np.array([0.0, 1.0, 0.0])


@dataclass
class DragCoefficients:
    mu_par: float    # RFT tangential coefficient [Pa s]
    mu_perp: float   # RFT normal coefficient [Pa s]
    C_t: float
    C_r: float
    C_yr: float


def rft_coefficients(config: RobotConfig) -> DragCoefficients:
    """Slender-body drag coefficients from the tail aspect ratio."""
    log_ratio = math.log(config.l / config.r0)
    return DragCoefficients(
        mu_par=2.0 * math.pi * config.mu0 / (log_ratio - 0.5),
        mu_perp=4.0 * math.pi * config.mu0 / (log_ratio + 0.5),
        C_t=config.C_t, C_r=config.C_r, C_yr=config.C_yr,
    )


@dataclass
class InterfaceProfile:
    h: float      # offset of the mixing zone [m]
    k: float      # transition sharpness (dimensionless)
    mu0: float    # bulk viscosity [Pa s]
    R: float      # head radius [m]


def interface_profile(config: RobotConfig) -> InterfaceProfile:
    return InterfaceProfile(h=config.interface_h, k=config.interface_k,
                            mu0=config.mu0, R=config.R)


def viscosity_at(y, profile: InterfaceProfile):
    """Sigmoid viscosity profile: mu0 below the interface, 0 above."""
    arg = np.clip(profile.k * (np.asarray(y, dtype=float) - profile.h) / profile.R,
                  -700.0, 700.0)
    return profile.mu0 / (1.0 + np.exp(arg))


def lateral_constant_oracle(profile: InterfaceProfile) -> float:
    """Dimensionless constant multiplying mu0 omega_h R L in the lateral force.

    Integrates the azimuthal drag over the cylinder surface (height
    y = R sin(theta)); the axial direction factors out.
    """
    def integrand(theta):
        return viscosity_at(profile.R * math.sin(theta), profile) * math.sin(theta)

    crossings = []
    if abs(profile.h) < profile.R:
        a = math.asin(profile.h / profile.R)
        crossings = [a if a >= 0 else a + 2 * math.pi, math.pi - a]
    val, err = quad(integrand, 0.0, 2.0 * math.pi,
                    points=sorted(crossings) or None, limit=200,
                    epsabs=1.0e-12, epsrel=1.0e-9)
    if err > max(1.0e-6 * abs(val), 1.0e-9 * profile.mu0):
        raise RuntimeError("lateral-constant quadrature did not converge")
    return -val / profile.mu0


def vertical_force_oracle(profile: InterfaceProfile) -> float:
    """Companion vertical integral; vanishes by symmetry of the profile."""
    def integrand(theta):
        return viscosity_at(profile.R * math.sin(theta), profile) * math.cos(theta)

    val, _ = quad(integrand, 0.0, 2.0 * math.pi, limit=200,
                  epsabs=1.0e-12, epsrel=1.0e-9)
    return -val / profile.mu0


def head_translation_drag(v_head, config: RobotConfig):
    """Stokes-type drag on the head, scaled by the fitted prefactor C_t."""
    return -config.C_t * 6.0 * math.pi * config.mu0 * config.R * np.asarray(v_head, dtype=float)


def lateral_direction(axis):
    """Horizontal unit vector perpendicular to the head axis."""
    ex = np.cross(_WORLD_UP, np.asarray(axis, dtype=float))
    n = np.linalg.norm(ex)
    if n < 1.0e-6:
        raise GeometryError("head axis is vertical; lateral direction undefined")
    return ex / n


def head_lateral_force(omega_h, axis, config: RobotConfig):
    """Interface-gradient force on the spinning head, horizontal by construction."""
    ex = lateral_direction(axis)
    return -config.C_yr * omega_h * config.mu0 * config.R * config.L_head * ex


def head_rotation_torque(omega_h, config: RobotConfig):
    """Viscous torque resisting the head's spin, applied on the theta^0 DOF."""
    return -config.C_r * 8.0 * math.pi * config.mu0 * config.R ** 3 * omega_h


def rft_node_force(velocity, tangent, voronoi_length, coeffs: DragCoefficients):
    """Anisotropic local drag on one tail node."""
    v = np.asarray(velocity, dtype=float)
    t = np.asarray(tangent, dtype=float)
    v_par = np.dot(t, v) * t
    return -(coeffs.mu_par * v_par + coeffs.mu_perp * (v - v_par)) * voronoi_length


def tail_node_tangents(state: RobotState, topo: Topology):
    """Unit tangents at the RFT nodes (mean of adjacent tail edge tangents)."""
    t = state.tangent
    a, b = topo.rft_edge_a, topo.rft_edge_b
    ta = np.where(a[:, None] >= 0, t[np.maximum(a, 0)], 0.0)
    tb = np.where(b[:, None] >= 0, t[np.maximum(b, 0)], 0.0)
    s = ta + tb
    return s / np.linalg.norm(s, axis=1, keepdims=True)


def assemble_hydro_forces(state: RobotState, topo: Topology,
                          config: RobotConfig):
    """External force vector F^h of size ndof for the current state."""
    coeffs = rft_coefficients(config)
    force = np.zeros(topo.n_dof)
    fx = force[: 3 * topo.n_nodes].reshape(-1, 3)

    v = state.xdot[topo.rft_nodes]
    t = tail_node_tangents(state, topo)
    v_par = np.sum(t * v, axis=1, keepdims=True) * t
    f = -(coeffs.mu_par * v_par + coeffs.mu_perp * (v - v_par)) \
        * topo.rft_voronoi[:, None]
    np.add.at(fx, topo.rft_nodes, f)

    axis = head_axis(state)
    omega_h = state.thetadot[0]
    fx[1] += head_translation_drag(state.xdot[1], config)
    fx[1] += head_lateral_force(omega_h, axis, config)
    force[3 * topo.n_nodes] += head_rotation_torque(omega_h, config)
    return force


def drag_velocity_jacobian(state: RobotState, topo: Topology,
                           config: RobotConfig):
    """D = -dF^h/dqdot (dense); F^h = -D qdot exactly at fixed geometry."""
    coeffs = rft_coefficients(config)
    ndof = topo.n_dof
    D = np.zeros((ndof, ndof))

    t = tail_node_tangents(state, topo)
    outer = np.einsum("ki,kj->kij", t, t)
    eye = np.eye(3)[None]
    B = (coeffs.mu_par * outer + coeffs.mu_perp * (eye - outer)) \
        * topo.rft_voronoi[:, None, None]
    for k, node in enumerate(topo.rft_nodes):
        i = 3 * node
        D[i:i + 3, i:i + 3] += B[k]

    D[3:6, 3:6] += config.C_t * 6.0 * math.pi * config.mu0 * config.R * np.eye(3)
    i_th0 = 3 * topo.n_nodes
    D[i_th0, i_th0] += config.C_r * 8.0 * math.pi * config.mu0 * config.R ** 3
    ex = lateral_direction(head_axis(state))
    D[3:6, i_th0] += config.C_yr * config.mu0 * config.R * config.L_head * ex
    return D
