"""Discrete rod representation of the robot: topology, frames, curvature, twist.

The robot is a branched assembly of rod segments: three collinear head nodes,
a set of rigid disc spokes from the motor-shaft node, and one soft tail per
spoke.  Degrees of freedom are node positions plus one twist angle per edge;
every edge carries an adapted reference frame and a material frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RobotConfig

_EPS_LEN = 1.0e-12       # edge lengths below this signal degenerate geometry
_EPS_PARALLEL = 1.0e-14


class GeometryError(RuntimeError):
    """Raised when the discrete geometry degenerates (collapsed edge etc.)."""


# ---------------------------------------------------------------------------
# frame primitives


def _normalize_rows(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _cross_rows(a, b):
    """Cross product over the last axis, avoiding np.cross dispatch overhead."""
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def transport_vectors(u, t_old, t_new):
    """Parallel transport vectors u from tangents t_old to t_new (batched).

    Uses the minimal rotation taking t_old to t_new.  When the tangents are
    (anti)parallel the rotation axis is undefined and u is returned unchanged;
    for the antiparallel case this equals a half-turn about u itself, the
    deterministic fallback used throughout.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    t_old = np.atleast_2d(np.asarray(t_old, dtype=float))
    t_new = np.atleast_2d(np.asarray(t_new, dtype=float))
    b = _cross_rows(t_old, t_new)
    b_norm = np.linalg.norm(b, axis=-1, keepdims=True)
    safe = b_norm > _EPS_PARALLEL
    b_unit = np.where(safe, b / np.where(safe, b_norm, 1.0), 0.0)
    n0 = _cross_rows(t_old, b_unit)
    n1 = _cross_rows(t_new, b_unit)
    dot = np.sum(u * n0, axis=-1, keepdims=True)
    dot_b = np.sum(u * b_unit, axis=-1, keepdims=True)
    out = dot * n1 + dot_b * b_unit
    return np.where(safe, out, u)


def parallel_transport(frame, t_new):
    """Transport an adapted triad (rows t, d1, d2) onto the new tangent."""
    frame = np.asarray(frame, dtype=float)
    t_new = np.asarray(t_new, dtype=float)
    d1 = transport_vectors(frame[1], frame[0], t_new)[0]
    d1 = d1 - np.dot(d1, t_new) * t_new
    d1 /= np.linalg.norm(d1)
    return np.array([t_new, d1, np.cross(t_new, d1)])


def signed_angle(u, v, n):
    """Signed angle from u to v about axis n (batched, numerically stable)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    n = np.atleast_2d(np.asarray(n, dtype=float))
    angle = 2.0 * np.arctan2(
        np.linalg.norm(u - v, axis=-1), np.linalg.norm(u + v, axis=-1)
    )
    sign = np.where(np.sum(n * _cross_rows(u, v), axis=-1) < 0.0, -1.0, 1.0)
    return angle * sign


def rotate_about(v, axis, angle):
    """Rodrigues rotation of vectors v about unit axes (batched)."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    axis = np.atleast_2d(np.asarray(axis, dtype=float))
    angle = np.atleast_1d(np.asarray(angle, dtype=float))[:, None]
    c, s = np.cos(angle), np.sin(angle)
    return (
        c * v
        + s * _cross_rows(axis, v)
        + (1.0 - c) * np.sum(axis * v, axis=-1, keepdims=True) * axis
    )


# ---------------------------------------------------------------------------
# curvature and twist


def curvature_binormal(x_prev, x_node, x_next):
    """Discrete curvature binormal 2 e0 x e1 / (|e0||e1| + e0.e1)."""
    e0 = np.asarray(x_node, dtype=float) - np.asarray(x_prev, dtype=float)
    e1 = np.asarray(x_next, dtype=float) - np.asarray(x_node, dtype=float)
    n0, n1 = np.linalg.norm(e0), np.linalg.norm(e1)
    if n0 < _EPS_LEN or n1 < _EPS_LEN:
        raise GeometryError("degenerate edge in curvature stencil")
    return 2.0 * np.cross(e0, e1) / (n0 * n1 + np.dot(e0, e1))


def curvature_at_node(x_prev, x_node, x_next, mat_frames=None):
    """Curvature components (kappa1, kappa2) at an interior node.

    mat_frames, when given, is ((m1e, m2e), (m1f, m2f)) for the two adjacent
    edges; components are taken against the averaged material directors.
    Without frames the binormal direction itself is used, giving (|kb|, 0).
    """
    kb = curvature_binormal(x_prev, x_node, x_next)
    if mat_frames is None:
        return np.array([np.linalg.norm(kb), 0.0])
    (m1e, m2e), (m1f, m2f) = mat_frames
    k1 = 0.5 * np.dot(kb, np.asarray(m2e) + np.asarray(m2f))
    k2 = -0.5 * np.dot(kb, np.asarray(m1e) + np.asarray(m1f))
    return np.array([k1, k2])


def twist_at_node(theta_prev_edge, theta_next_edge, ref_twist):
    """Integrated twist at a node: theta difference plus reference twist."""
    return theta_next_edge - theta_prev_edge + ref_twist


# ---------------------------------------------------------------------------
# topology and state

HEAD, DISC, TAIL = 0, 1, 2


@dataclass
class Topology:
    """Immutable connectivity and undeformed geometry of a built robot."""

    n_nodes: int
    edges: np.ndarray              # (m, 2) node index pairs, oriented outward
    edge_rest_len: np.ndarray      # (m,)
    edge_kind: np.ndarray          # (m,) HEAD | DISC | TAIL
    edge_tail: np.ndarray          # (m,) tail index or -1
    stencils: np.ndarray           # (s, 3) node triples
    stencil_edges: np.ndarray      # (s, 2) edge index pairs
    voronoi_len: np.ndarray        # (s,) undeformed Voronoi lengths
    stencil_rigid: np.ndarray      # (s,) bool
    head_nodes: tuple = (0, 1, 2)
    tail_nodes: list = field(default_factory=list)   # per tail, node indices
    rft_nodes: np.ndarray = None   # tail node indices receiving RFT drag
    rft_voronoi: np.ndarray = None  # (k,) wetted lengths
    rft_edge_a: np.ndarray = None  # (k,) adjacent tail edge (or -1)
    rft_edge_b: np.ndarray = None
    actuated_stencil: int = 0

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_dof(self):
        return 3 * self.n_nodes + self.n_edges

    @property
    def n_stencils(self):
        return len(self.stencils)

    def stencil_dof(self):
        """(s, 11) global DOF indices in local order [x0, th_e, x1, th_f, x2]."""
        cached = self.__dict__.get("_stencil_dof")
        if cached is not None:
            return cached
        s = self.n_stencils
        out = np.empty((s, 11), dtype=int)
        for j in range(3):
            out[:, j] = 3 * self.stencils[:, 0] + j
            out[:, 4 + j] = 3 * self.stencils[:, 1] + j
            out[:, 8 + j] = 3 * self.stencils[:, 2] + j
        base = 3 * self.n_nodes
        out[:, 3] = base + self.stencil_edges[:, 0]
        out[:, 7] = base + self.stencil_edges[:, 1]
        self.__dict__["_stencil_dof"] = out
        return out


@dataclass
class RobotState:
    """Dynamic state: DOF vector, velocities, frames, and natural shape."""

    q: np.ndarray                  # (3n + m,)
    qdot: np.ndarray
    tangent: np.ndarray            # (m, 3)
    d1: np.ndarray                 # (m, 3) reference director 1
    d2: np.ndarray                 # (m, 3)
    ref_twist: np.ndarray          # (s,) accumulated reference twist
    natural_curvature: np.ndarray  # (s, 2)
    natural_twist: np.ndarray      # (s,)
    time: float = 0.0
    n_nodes: int = 0

    @property
    def x(self):
        return self.q[: 3 * self.n_nodes].reshape(-1, 3)

    @property
    def theta(self):
        return self.q[3 * self.n_nodes:]

    @property
    def xdot(self):
        return self.qdot[: 3 * self.n_nodes].reshape(-1, 3)

    @property
    def thetadot(self):
        return self.qdot[3 * self.n_nodes:]

    def material_frames(self):
        """Per-edge material directors (m1, m2) from the twist angles."""
        c = np.cos(self.theta)[:, None]
        s = np.sin(self.theta)[:, None]
        m1 = c * self.d1 + s * self.d2
        m2 = -s * self.d1 + c * self.d2
        return m1, m2

    def copy(self) -> "RobotState":
        return RobotState(
            q=self.q.copy(), qdot=self.qdot.copy(),
            tangent=self.tangent.copy(), d1=self.d1.copy(), d2=self.d2.copy(),
            ref_twist=self.ref_twist.copy(),
            natural_curvature=self.natural_curvature.copy(),
            natural_twist=self.natural_twist.copy(),
            time=self.time, n_nodes=self.n_nodes,
        )


def edge_geometry(x, topo: Topology):
    """Edge vectors, lengths, and unit tangents for node positions x."""
    e = x[topo.edges[:, 1]] - x[topo.edges[:, 0]]
    lengths = np.linalg.norm(e, axis=1)
    if np.any(lengths < _EPS_LEN):
        raise GeometryError("edge length underflow")
    return e, lengths, e / lengths[:, None]


def updated_frames(state: RobotState, topo: Topology, q_new):
    """Frames and reference twist for a candidate DOF vector.

    Reference frames are time-parallel transported from the frames stored in
    `state` and re-orthonormalized; reference twist accumulates from the
    stored value.  Pure function of (state, q_new).
    """
    x = q_new[: 3 * topo.n_nodes].reshape(-1, 3)
    _, _, t_new = edge_geometry(x, topo)
    d1 = transport_vectors(state.d1, state.tangent, t_new)
    d1 = d1 - np.sum(d1 * t_new, axis=1, keepdims=True) * t_new
    d1 = _normalize_rows(d1)
    d2 = np.cross(t_new, d1)
    ref_twist = compute_ref_twist(topo, t_new, d1, state.ref_twist)
    return t_new, d1, d2, ref_twist


def compute_ref_twist(topo: Topology, tangent, d1, ref_twist_prev):
    """Accumulated reference twist per stencil for the given frames."""
    ea = topo.stencil_edges[:, 0]
    eb = topo.stencil_edges[:, 1]
    ut = transport_vectors(d1[ea], tangent[ea], tangent[eb])
    ut = rotate_about(ut, tangent[eb], ref_twist_prev)
    return ref_twist_prev + signed_angle(ut, d1[eb], tangent[eb])


def apply_q(state: RobotState, topo: Topology, q_new, qdot_new=None) -> RobotState:
    """New state with DOFs q_new; frames transported from `state`."""
    t_new, d1, d2, ref_twist = updated_frames(state, topo, q_new)
    out = state.copy()
    out.q = np.asarray(q_new, dtype=float).copy()
    if qdot_new is not None:
        out.qdot = np.asarray(qdot_new, dtype=float).copy()
    out.tangent, out.d1, out.d2, out.ref_twist = t_new, d1, d2, ref_twist
    return out


# ---------------------------------------------------------------------------
# construction


def build_robot(config: RobotConfig):
    """Build the discrete robot in its undeformed pose.

    Head axis along world +z, head center at the origin, vertical axis +y.
    Tails hang off a rigid spoke disc at the shaft node and run parallel to
    the head axis.
    """
    config.validate()
    N, npt = config.N, config.nodes_per_tail
    n_nodes = 3 + N * npt
    x = np.zeros((n_nodes, 3))
    x[0] = (0.0, 0.0, -config.L_head / 2.0)
    x[1] = (0.0, 0.0, 0.0)
    x[2] = (0.0, 0.0, config.L_head / 2.0)

    seg = config.l / (npt - 1)
    edges = [(0, 1), (1, 2)]
    edge_kind = [HEAD, HEAD]
    edge_tail = [-1, -1]
    tail_nodes = []
    for i in range(N):
        phi = 2.0 * math.pi * i / N
        radial = np.array([math.cos(phi), math.sin(phi), 0.0])
        root = 3 + i * npt
        nodes_i = list(range(root, root + npt))
        tail_nodes.append(np.array(nodes_i))
        x[root] = x[2] + config.spoke_length * radial
        for j in range(1, npt):
            x[root + j] = x[root] + np.array([0.0, 0.0, seg * j])
        edges.append((2, root))
        edge_kind.append(DISC)
        edge_tail.append(i)
        for j in range(npt - 1):
            edges.append((root + j, root + j + 1))
            edge_kind.append(TAIL)
            edge_tail.append(i)

    edges = np.array(edges, dtype=int)
    edge_kind = np.array(edge_kind, dtype=int)
    edge_tail = np.array(edge_tail, dtype=int)
    e_vec, e_len, tangent = edge_geometry(x, Topology(
        n_nodes=n_nodes, edges=edges, edge_rest_len=None, edge_kind=edge_kind,
        edge_tail=edge_tail, stencils=None, stencil_edges=None,
        voronoi_len=None, stencil_rigid=None))

    # Stencils: chain interior nodes plus the disc junctions.
    stencils = [(0, 1, 2)]
    stencil_edges = [(0, 1)]
    stencil_rigid = [True]
    for i in range(N):
        root = 3 + i * npt
        spoke_e = 2 + i * npt
        # shaft-to-spoke junction at the shaft node
        stencils.append((1, 2, root))
        stencil_edges.append((1, spoke_e))
        stencil_rigid.append(True)
        # spoke-to-tail junction at the tail root
        stencils.append((2, root, root + 1))
        stencil_edges.append((spoke_e, spoke_e + 1))
        stencil_rigid.append(False)
        for j in range(1, npt - 1):
            stencils.append((root + j - 1, root + j, root + j + 1))
            stencil_edges.append((spoke_e + j, spoke_e + j + 1))
            stencil_rigid.append(False)
    stencils = np.array(stencils, dtype=int)
    stencil_edges = np.array(stencil_edges, dtype=int)
    stencil_rigid = np.array(stencil_rigid, dtype=bool)
    voronoi = 0.5 * (e_len[stencil_edges[:, 0]] + e_len[stencil_edges[:, 1]])

    # RFT bookkeeping: every tail node, wetted length from tail edges only.
    rft_nodes, rft_voronoi, rft_a, rft_b = [], [], [], []
    for i in range(N):
        root = 3 + i * npt
        spoke_e = 2 + i * npt
        for j in range(npt):
            rft_nodes.append(root + j)
            e_prev = spoke_e + j if j > 0 else -1
            e_next = spoke_e + j + 1 if j < npt - 1 else -1
            w = 0.0
            if e_prev >= 0:
                w += 0.5 * e_len[e_prev]
            if e_next >= 0:
                w += 0.5 * e_len[e_next]
            rft_voronoi.append(w)
            rft_a.append(e_prev)
            rft_b.append(e_next)

    topo = Topology(
        n_nodes=n_nodes, edges=edges, edge_rest_len=e_len,
        edge_kind=edge_kind, edge_tail=edge_tail,
        stencils=stencils, stencil_edges=stencil_edges,
        voronoi_len=voronoi, stencil_rigid=stencil_rigid,
        tail_nodes=tail_nodes,
        rft_nodes=np.array(rft_nodes, dtype=int),
        rft_voronoi=np.array(rft_voronoi),
        rft_edge_a=np.array(rft_a, dtype=int),
        rft_edge_b=np.array(rft_b, dtype=int),
        actuated_stencil=0,
    )

    # Reference frames: seed on the first head edge, space-parallel transport
    # outward so the initial reference twist vanishes everywhere.
    m = len(edges)
    d1 = np.zeros((m, 3))
    d1[0] = (1.0, 0.0, 0.0)
    order = _chain_order(topo)
    for child, parent in order:
        d1[child] = transport_vectors(
            d1[parent][None], tangent[parent][None], tangent[child][None])[0]
    d1 = d1 - np.sum(d1 * tangent, axis=1, keepdims=True) * tangent
    d1 = _normalize_rows(d1)
    d2 = np.cross(tangent, d1)

    q = np.concatenate([x.ravel(), np.zeros(m)])
    ref_twist = compute_ref_twist(topo, tangent, d1, np.zeros(len(stencils)))
    m1, m2 = d1, d2  # theta = 0 at build time

    kappa0 = np.zeros((len(stencils), 2))
    for s_i, (a, b, c) in enumerate(stencils):
        ea, eb = stencil_edges[s_i]
        kappa0[s_i] = curvature_at_node(
            x[a], x[b], x[c], ((m1[ea], m2[ea]), (m1[eb], m2[eb])))
    tau0 = twist_at_node(np.zeros(len(stencils)), np.zeros(len(stencils)), ref_twist)

    state = RobotState(
        q=q, qdot=np.zeros_like(q), tangent=tangent, d1=d1, d2=d2,
        ref_twist=ref_twist, natural_curvature=kappa0, natural_twist=tau0,
        time=0.0, n_nodes=n_nodes,
    )
    return state, topo


def _chain_order(topo: Topology):
    """(child_edge, parent_edge) pairs walking outward from the head edge."""
    pairs = []
    for (ea, eb) in topo.stencil_edges:
        pairs.append((eb, ea))
    # stencil_edges already lists every adjacency once, parents before children
    return pairs


def head_axis(state: RobotState) -> np.ndarray:
    """Unit vector along the head's long axis (from rear node to shaft node)."""
    a = state.x[2] - state.x[0]
    return a / np.linalg.norm(a)


def rotate_state_about_vertical(state: RobotState, topo: Topology, angle,
                                pivot=None) -> RobotState:
    """Rigidly rotate the whole robot about the world vertical (y) axis."""
    axis = np.array([0.0, 1.0, 0.0])
    out = state.copy()
    x = out.x
    if pivot is None:
        pivot = x[1].copy()
    rows = np.repeat(axis[None], len(x), axis=0)
    out.q[: 3 * topo.n_nodes] = (
        rotate_about(x - pivot, rows, np.full(len(x), angle)) + pivot
    ).ravel()
    xdot = out.xdot
    out.qdot[: 3 * topo.n_nodes] = rotate_about(
        xdot, rows, np.full(len(x), angle)).ravel()
    m = topo.n_edges
    erows = np.repeat(axis[None], m, axis=0)
    ang = np.full(m, angle)
    out.tangent = rotate_about(state.tangent, erows, ang)
    out.d1 = rotate_about(state.d1, erows, ang)
    out.d2 = rotate_about(state.d2, erows, ang)
    return out
