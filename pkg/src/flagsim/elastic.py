"""Elastic energies (stretch, bend, twist), analytic forces, and Hessians.

Gradients follow the standard discrete-rod formulas; the force Jacobian is
assembled per stencil by central finite differences of the analytic local
gradient, which keeps the twist/position coupling through the reference
twist exact to FD accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RobotConfig
from .rod import (
    RobotState, Topology, GeometryError, TAIL,
    transport_vectors, rotate_about, signed_angle, _normalize_rows, _cross_rows,
)


@dataclass
class StiffnessSet:
    EA: np.ndarray   # per edge [N]
    EI: np.ndarray   # per stencil [N m^2]
    GJ: np.ndarray   # per stencil [N m^2]


def stiffness_for(config: RobotConfig, topo: Topology) -> StiffnessSet:
    """Tail cross-section stiffnesses, scaled up on rigid head/disc segments."""
    mult = config.rigid_multiplier
    EA = np.where(topo.edge_kind == TAIL, config.EA(), config.EA() * mult)
    EI = np.where(topo.stencil_rigid, config.EI() * mult, config.EI())
    GJ = np.where(topo.stencil_rigid, config.GJ() * mult, config.GJ())
    return StiffnessSet(EA=EA, EI=EI, GJ=GJ)


# ---------------------------------------------------------------------------
# stretching


def stretching_energy_force(state: RobotState, topo: Topology,
                            stiff: StiffnessSet):
    """Total stretching energy and its force (nonzero on position DOFs only)."""
    x = state.x
    e = x[topo.edges[:, 1]] - x[topo.edges[:, 0]]
    length = np.linalg.norm(e, axis=1)
    if np.any(length < 1.0e-12):
        raise GeometryError("edge length underflow in stretching")
    rest = topo.edge_rest_len
    eps = length / rest - 1.0
    energy = 0.5 * np.sum(stiff.EA * eps ** 2 * rest)
    f_edge = (stiff.EA * eps)[:, None] * (e / length[:, None])
    force = np.zeros(topo.n_dof)
    fx = force[: 3 * topo.n_nodes].reshape(-1, 3)
    np.add.at(fx, topo.edges[:, 0], f_edge)
    np.add.at(fx, topo.edges[:, 1], -f_edge)
    return energy, force


def _stretch_hessian_blocks(state, topo, stiff):
    """Per-edge 6x6 Hessian blocks of the stretching energy (analytic)."""
    x = state.x
    e = x[topo.edges[:, 1]] - x[topo.edges[:, 0]]
    length = np.linalg.norm(e, axis=1)
    t = e / length[:, None]
    rest = topo.edge_rest_len
    eye = np.eye(3)[None]
    outer = np.einsum("mi,mj->mij", t, t)
    M = stiff.EA[:, None, None] * (
        (1.0 / rest - 1.0 / length)[:, None, None] * eye
        + (1.0 / length)[:, None, None] * outer
    )
    return M


# ---------------------------------------------------------------------------
# bend + twist stencil machinery


def _gather(state: RobotState, topo: Topology):
    """Per-stencil positions, angles, and step-reference frame data."""
    x = state.x
    ea = topo.stencil_edges[:, 0]
    eb = topo.stencil_edges[:, 1]
    ref = {
        "te0": state.tangent[ea], "tf0": state.tangent[eb],
        "d1e0": state.d1[ea], "d1f0": state.d1[eb],
        "rt0": state.ref_twist,
    }
    xs = x[topo.stencils]                       # (s, 3, 3)
    ths = state.theta[topo.stencil_edges]       # (s, 2)
    return xs, ths, ref


def _stencil_terms(xs, ths, ref, EI, GJ, lk, kappa0, tau0):
    """Energies and analytic 11-DOF gradients of bending + twisting.

    Local DOF order: [x0 (0:3), theta_e (3), x1 (4:7), theta_f (7), x2 (8:11)].
    Reference directors are parallel transported from the stored tangents to
    the current ones, so position dependence of the reference twist is
    captured exactly.
    """
    ee = xs[:, 1] - xs[:, 0]
    ef = xs[:, 2] - xs[:, 1]
    norm_e = np.linalg.norm(ee, axis=1)
    norm_f = np.linalg.norm(ef, axis=1)
    if np.any(norm_e < 1.0e-12) or np.any(norm_f < 1.0e-12):
        raise GeometryError("edge length underflow in bend/twist stencil")
    te = ee / norm_e[:, None]
    tf = ef / norm_f[:, None]

    d1e = transport_vectors(ref["d1e0"], ref["te0"], te)
    d1e = _normalize_rows(d1e - np.sum(d1e * te, axis=1, keepdims=True) * te)
    d2e = _cross_rows(te, d1e)
    d1f = transport_vectors(ref["d1f0"], ref["tf0"], tf)
    d1f = _normalize_rows(d1f - np.sum(d1f * tf, axis=1, keepdims=True) * tf)
    d2f = _cross_rows(tf, d1f)

    ce, se = np.cos(ths[:, 0])[:, None], np.sin(ths[:, 0])[:, None]
    cf, sf = np.cos(ths[:, 1])[:, None], np.sin(ths[:, 1])[:, None]
    m1e = ce * d1e + se * d2e
    m2e = -se * d1e + ce * d2e
    m1f = cf * d1f + sf * d2f
    m2f = -sf * d1f + cf * d2f

    chi = 1.0 + np.sum(te * tf, axis=1)
    chi = np.maximum(chi, 1.0e-12)
    kb = 2.0 * _cross_rows(te, tf) / chi[:, None]
    tilde_t = (te + tf) / chi[:, None]
    tilde_d1 = (m1e + m1f) / chi[:, None]
    tilde_d2 = (m2e + m2f) / chi[:, None]

    kappa1 = 0.5 * np.sum(kb * (m2e + m2f), axis=1)
    kappa2 = -0.5 * np.sum(kb * (m1e + m1f), axis=1)

    inv_e = (1.0 / norm_e)[:, None]
    inv_f = (1.0 / norm_f)[:, None]
    Dk1De = inv_e * (-kappa1[:, None] * tilde_t + _cross_rows(tf, tilde_d2))
    Dk1Df = inv_f * (-kappa1[:, None] * tilde_t - _cross_rows(te, tilde_d2))
    Dk2De = inv_e * (-kappa2[:, None] * tilde_t - _cross_rows(tf, tilde_d1))
    Dk2Df = inv_f * (-kappa2[:, None] * tilde_t + _cross_rows(te, tilde_d1))

    s = len(xs)
    grad_kappa = np.zeros((s, 11, 2))
    grad_kappa[:, 0:3, 0] = -Dk1De
    grad_kappa[:, 4:7, 0] = Dk1De - Dk1Df
    grad_kappa[:, 8:11, 0] = Dk1Df
    grad_kappa[:, 0:3, 1] = -Dk2De
    grad_kappa[:, 4:7, 1] = Dk2De - Dk2Df
    grad_kappa[:, 8:11, 1] = Dk2Df
    grad_kappa[:, 3, 0] = -0.5 * np.sum(kb * m1e, axis=1)
    grad_kappa[:, 7, 0] = -0.5 * np.sum(kb * m1f, axis=1)
    grad_kappa[:, 3, 1] = -0.5 * np.sum(kb * m2e, axis=1)
    grad_kappa[:, 7, 1] = -0.5 * np.sum(kb * m2f, axis=1)

    # reference twist for the candidate geometry, accumulated from rt0
    ut = transport_vectors(d1e, te, tf)
    ut = rotate_about(ut, tf, ref["rt0"])
    ref_twist = ref["rt0"] + signed_angle(ut, d1f, tf)
    tau = ths[:, 1] - ths[:, 0] + ref_twist

    grad_tau = np.zeros((s, 11))
    grad_tau[:, 0:3] = -0.5 * inv_e * kb
    grad_tau[:, 8:11] = 0.5 * inv_f * kb
    grad_tau[:, 4:7] = -(grad_tau[:, 0:3] + grad_tau[:, 8:11])
    grad_tau[:, 3] = -1.0
    grad_tau[:, 7] = 1.0

    dk1 = kappa1 - kappa0[:, 0]
    dk2 = kappa2 - kappa0[:, 1]
    dtau = tau - tau0
    w_b = EI / lk
    w_t = GJ / lk
    E_b = 0.5 * w_b * (dk1 ** 2 + dk2 ** 2)
    E_t = 0.5 * w_t * dtau ** 2
    gb = w_b[:, None] * (grad_kappa[:, :, 0] * dk1[:, None]
                         + grad_kappa[:, :, 1] * dk2[:, None])
    gt = (w_t * dtau)[:, None] * grad_tau
    return {
        "E_b": E_b, "E_t": E_t, "gb": gb, "gt": gt,
        "kappa": np.stack([kappa1, kappa2], axis=1), "tau": tau,
        "ref_twist": ref_twist,
    }


def _scatter_grad(topo: Topology, grad_local):
    """Scatter -grad into a global force vector."""
    force = np.zeros(topo.n_dof)
    np.add.at(force, topo.stencil_dof().ravel(), -grad_local.ravel())
    return force


def bending_energy_force(state: RobotState, topo: Topology,
                         stiff: StiffnessSet, natural_curvature=None):
    kappa0 = state.natural_curvature if natural_curvature is None else natural_curvature
    xs, ths, ref = _gather(state, topo)
    terms = _stencil_terms(xs, ths, ref, stiff.EI, stiff.GJ,
                           topo.voronoi_len, kappa0, state.natural_twist)
    return float(np.sum(terms["E_b"])), _scatter_grad(topo, terms["gb"])


def twisting_energy_force(state: RobotState, topo: Topology,
                          stiff: StiffnessSet, natural_twist=None):
    tau0 = state.natural_twist if natural_twist is None else natural_twist
    xs, ths, ref = _gather(state, topo)
    terms = _stencil_terms(xs, ths, ref, stiff.EI, stiff.GJ,
                           topo.voronoi_len, state.natural_curvature, tau0)
    return float(np.sum(terms["E_t"])), _scatter_grad(topo, terms["gt"])


def elastic_energy_force(state: RobotState, topo: Topology,
                         stiff: StiffnessSet):
    """Total elastic energy and force in one pass (stepping fast path)."""
    E_s, F = stretching_energy_force(state, topo, stiff)
    xs, ths, ref = _gather(state, topo)
    terms = _stencil_terms(xs, ths, ref, stiff.EI, stiff.GJ,
                           topo.voronoi_len, state.natural_curvature,
                           state.natural_twist)
    np.add.at(F, topo.stencil_dof().ravel(),
              -(terms["gb"] + terms["gt"]).ravel())
    energy = E_s + float(np.sum(terms["E_b"]) + np.sum(terms["E_t"]))
    return energy, F


_FD_THETA = 1.0e-7


def elastic_hessian(state: RobotState, topo: Topology, stiff: StiffnessSet):
    """Exact-to-FD Hessian of the elastic energy (symmetric, dense).

    Stretching blocks are analytic; bend/twist blocks come from central
    finite differences of the analytic per-stencil gradient.
    """
    ndof = topo.n_dof
    H = np.zeros((ndof, ndof))

    # stretching (analytic)
    M = _stretch_hessian_blocks(state, topo, stiff)
    idx6 = np.empty((topo.n_edges, 6), dtype=int)
    for j in range(3):
        idx6[:, j] = 3 * topo.edges[:, 0] + j
        idx6[:, 3 + j] = 3 * topo.edges[:, 1] + j
    blocks = np.zeros((topo.n_edges, 6, 6))
    blocks[:, :3, :3] = M
    blocks[:, 3:, 3:] = M
    blocks[:, :3, 3:] = -M
    blocks[:, 3:, :3] = -M
    flat = (idx6[:, :, None] * ndof + idx6[:, None, :]).ravel()
    np.add.at(H.ravel(), flat, blocks.ravel())

    # bend + twist: FD of the analytic gradient, all 22 perturbed copies of
    # every stencil evaluated in one stacked call
    xs, ths, ref = _gather(state, topo)
    s = topo.n_stencils
    steps = np.full(11, 1.0e-7 * float(np.mean(topo.edge_rest_len)))
    steps[3] = steps[7] = _FD_THETA
    nv = 22
    xs_all = np.tile(xs, (nv, 1, 1))
    ths_all = np.tile(ths, (nv, 1))
    for j in range(11):
        for sgn, off in ((1.0, 2 * j), (-1.0, 2 * j + 1)):
            sl = slice(off * s, (off + 1) * s)
            if j in (3, 7):
                ths_all[sl, 0 if j == 3 else 1] += sgn * steps[j]
            else:
                xs_all[sl, j // 4, j % 4] += sgn * steps[j]
    ref_all = {k: np.tile(v, (nv,) + (1,) * (v.ndim - 1))
               for k, v in ref.items()}
    terms = _stencil_terms(
        xs_all, ths_all, ref_all,
        np.tile(stiff.EI, nv), np.tile(stiff.GJ, nv),
        np.tile(topo.voronoi_len, nv),
        np.tile(state.natural_curvature, (nv, 1)),
        np.tile(state.natural_twist, nv))
    g = (terms["gb"] + terms["gt"]).reshape(11, 2, s, 11)
    Hloc = ((g[:, 0] - g[:, 1]) / (2.0 * steps)[:, None, None]).transpose(1, 0, 2)

    dof = topo.stencil_dof()
    flat = (dof[:, :, None] * ndof + dof[:, None, :]).ravel()
    np.add.at(H.ravel(), flat, Hloc.ravel())
    return 0.5 * (H + H.T)


def total_elastic(state: RobotState, topo: Topology, stiff: StiffnessSet):
    """Total elastic energy, force -dE/dq, and symmetric Hessian d2E/dq2."""
    energy, force = elastic_energy_force(state, topo, stiff)
    return energy, force, elastic_hessian(state, topo, stiff)
