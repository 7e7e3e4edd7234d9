"""Geometry layer: robot construction, frames, curvature, and twist."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flagsim.config import RobotConfig, ConfigError, preset
from flagsim import rod


def unit(v):
    return np.asarray(v, dtype=float) / np.linalg.norm(v)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------------------
# configuration


class TestConfig:
    def test_shear_modulus_defaults_to_third_of_youngs(self):
        cfg = RobotConfig()
        assert cfg.G == pytest.approx(cfg.E / 3.0)

    def test_explicit_shear_modulus_kept(self):
        cfg = RobotConfig(G=5.0e5)
        assert cfg.G == 5.0e5

    def test_rejects_too_few_tails(self):
        with pytest.raises(ConfigError):
            RobotConfig(N=1)

    def test_rejects_too_few_nodes(self):
        with pytest.raises(ConfigError):
            RobotConfig(nodes_per_tail=2)

    def test_rejects_small_rigid_multiplier(self):
        with pytest.raises(ConfigError):
            RobotConfig(rigid_multiplier=100.0)

    def test_rejects_stubby_tail(self):
        with pytest.raises(ConfigError):
            RobotConfig(l=0.001, r0=0.002)

    def test_cross_section_stiffnesses(self):
        cfg = RobotConfig()
        assert cfg.EA() == pytest.approx(cfg.E * np.pi * cfg.r0 ** 2)
        assert cfg.EI() == pytest.approx(np.pi * cfg.E * cfg.r0 ** 4 / 4.0)
        assert cfg.GJ() == pytest.approx(np.pi * cfg.G * cfg.r0 ** 4 / 2.0)

    def test_presets(self):
        f = preset("fitted_sec2")
        assert (f.N, f.C_t, f.C_r, f.C_yr) == (4, 4.0, 2.06, 6.0)
        c = preset("control_sec4")
        assert (c.N, c.C_t, c.C_r, c.C_yr) == (2, 3.0, 2.8, 2.0)

    def test_config_round_trip(self, tmp_path):
        from flagsim.config import save_config, load_config
        cfg = preset("fitted_sec2").replace(nodes_per_tail=7)
        path = tmp_path / "robot.ini"
        save_config(cfg, path)
        again = load_config(path)
        assert again.to_dict() == pytest.approx(cfg.to_dict())

    def test_missing_field_reported_by_name(self, tmp_path):
        from flagsim.config import save_config, load_config
        path = tmp_path / "robot.ini"
        save_config(RobotConfig(), path)
        text = path.read_text().replace("viscosity_pa_s", "viscosity_typo")
        path.write_text(text)
        with pytest.raises(ConfigError, match="viscosity_pa_s"):
            load_config(path)


# ---------------------------------------------------------------------------
# construction


class TestBuildRobot:
    def test_node_and_dof_counts(self):
        cfg = RobotConfig(N=2, nodes_per_tail=11)
        state, topo = rod.build_robot(cfg)
        assert topo.n_nodes == 3 + 2 * 11
        assert topo.n_edges == 2 + 2 * 11
        assert len(state.q) == 3 * topo.n_nodes + topo.n_edges

    def test_tail_polyline_lengths(self):
        cfg = RobotConfig(N=4, l=0.11)
        state, topo = rod.build_robot(cfg)
        x = state.x
        for tail in range(4):
            nodes = topo.tail_nodes[tail]
            length = np.sum(np.linalg.norm(np.diff(x[nodes], axis=0), axis=1))
            assert length == pytest.approx(0.11, abs=1e-12)

    def test_frames_orthonormal_and_adapted(self):
        state, topo = rod.build_robot(RobotConfig(N=3, nodes_per_tail=5))
        x = state.x
        e = x[topo.edges[:, 1]] - x[topo.edges[:, 0]]
        t = e / np.linalg.norm(e, axis=1, keepdims=True)
        assert np.allclose(state.tangent, t, atol=1e-10)
        for frame in (state.d1, state.d2):
            assert np.allclose(np.linalg.norm(frame, axis=1), 1.0, atol=1e-10)
        assert np.max(np.abs(np.sum(state.tangent * state.d1, axis=1))) < 1e-10
        assert np.max(np.abs(np.sum(state.d1 * state.d2, axis=1))) < 1e-10

    def test_head_geometry(self):
        cfg = RobotConfig(L_head=0.06)
        state, topo = rod.build_robot(cfg)
        x = state.x
        h0, h1, h2 = topo.head_nodes
        assert np.linalg.norm(x[h2] - x[h0]) == pytest.approx(0.06, abs=1e-12)
        # collinear and horizontal: head center at y = 0
        assert np.linalg.norm(np.cross(x[h1] - x[h0], x[h2] - x[h0])) < 1e-14
        assert abs(x[h1][1]) < 1e-14

    def test_rest_state_reference_twist_zero(self):
        state, topo = rod.build_robot(RobotConfig(N=3, nodes_per_tail=6))
        assert np.max(np.abs(state.ref_twist)) < 1e-10

    def test_voronoi_lengths(self):
        state, topo = rod.build_robot(RobotConfig(N=2, nodes_per_tail=8))
        rest = topo.edge_rest_len
        ea, eb = topo.stencil_edges[:, 0], topo.stencil_edges[:, 1]
        assert np.allclose(topo.voronoi_len, 0.5 * (rest[ea] + rest[eb]))


# ---------------------------------------------------------------------------
# parallel transport


class TestParallelTransport:
    def test_identity(self):
        frame = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        out = rod.parallel_transport(frame, frame[0])
        assert np.allclose(out, frame, atol=1e-14)

    def test_quarter_turn_by_hand(self):
        # t: z -> x rotates about -y by 90 deg, taking d1 = x to -z
        frame = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        out = rod.parallel_transport(frame, np.array([1.0, 0.0, 0.0]))
        assert np.allclose(out[1], [0.0, 0.0, -1.0], atol=1e-12)

    def test_antiparallel_fallback_is_deterministic(self):
        u = np.array([[1.0, 0.0, 0.0]])
        t_old = np.array([[0.0, 0.0, 1.0]])
        out1 = rod.transport_vectors(u, t_old, -t_old)
        out2 = rod.transport_vectors(u, t_old, -t_old)
        assert np.allclose(out1, out2)
        assert np.all(np.isfinite(out1))

    def test_long_transport_chain_orthonormality(self):
        rng = np.random.default_rng(7)
        frame = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        for _ in range(1000):
            t_new = unit(rng.normal(size=3))
            frame = rod.parallel_transport(frame, t_new)
        gram = frame @ frame.T
        assert np.max(np.abs(gram - np.eye(3))) < 1e-8

    def test_transport_preserves_inner_products(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            t_old = unit(rng.normal(size=3))
            t_new = unit(rng.normal(size=3))
            a = rng.normal(size=3)
            b = rng.normal(size=3)
            ta = rod.transport_vectors(a[None], t_old[None], t_new[None])[0]
            tb = rod.transport_vectors(b[None], t_old[None], t_new[None])[0]
            # transport is a rotation on the plane spanned with the tangent;
            # inner products of transported vectors are preserved
            a_mixed = a - np.dot(a, t_old) * t_old
            b_mixed = b - np.dot(b, t_old) * t_old
            ta_m = ta - np.dot(ta, t_new) * t_new
            tb_m = tb - np.dot(tb, t_new) * t_new
            assert np.dot(ta_m, tb_m) == pytest.approx(
                np.dot(a_mixed, b_mixed), abs=1e-10)


# ---------------------------------------------------------------------------
# curvature and twist


class TestCurvature:
    def test_collinear_nodes_zero(self):
        kappa = rod.curvature_at_node([0, 0, 0], [0, 0, 1], [0, 0, 2])
        assert np.allclose(kappa, 0.0, atol=1e-14)

    def test_circle_curvature_limit(self):
        rho = 1.0
        s = rho / 50.0
        phi = s / rho
        pts = [np.array([np.cos(a), np.sin(a), 0.0]) * rho
               for a in (-phi, 0.0, phi)]
        kappa = rod.curvature_at_node(*pts)
        l_k = np.linalg.norm(pts[1] - pts[0])
        assert np.linalg.norm(kappa) / l_k == pytest.approx(1.0 / rho, rel=0.01)

    def test_degenerate_edge_rejected(self):
        with pytest.raises(rod.GeometryError):
            rod.curvature_at_node([0, 0, 0], [0, 0, 1e-14], [0, 0, 1])

    def test_reversal_symmetry(self):
        rng = np.random.default_rng(5)
        pts = [rng.normal(size=3) for _ in range(3)]
        kb = rod.curvature_binormal(*pts)
        kb_rev = rod.curvature_binormal(*pts[::-1])
        assert np.allclose(kb_rev, -kb, atol=1e-12)

    def test_rotation_invariance_of_magnitude(self):
        rng = np.random.default_rng(11)
        pts = [rng.normal(size=3) for _ in range(3)]
        Q = random_rotation(rng)
        kb = rod.curvature_binormal(*pts)
        kb_rot = rod.curvature_binormal(*(Q @ p for p in pts))
        assert np.linalg.norm(kb_rot) == pytest.approx(
            np.linalg.norm(kb), abs=1e-12)
        assert np.allclose(kb_rot, Q @ kb, atol=1e-12)


class TestTwist:
    def test_zero(self):
        assert rod.twist_at_node(0.3, 0.3, 0.0) == pytest.approx(0.0)

    def test_stated_formula(self):
        assert rod.twist_at_node(0.0, 0.3, 0.1) == pytest.approx(0.4)

    def test_rigid_vertical_rotation_leaves_strains_unchanged(self):
        cfg = RobotConfig(N=2, nodes_per_tail=5)
        state, topo = rod.build_robot(cfg)
        rng = np.random.default_rng(2)
        q = state.q.copy()
        q[: 3 * topo.n_nodes] += rng.normal(
            scale=1e-3, size=3 * topo.n_nodes)
        q[3 * topo.n_nodes:] += rng.normal(scale=0.05, size=topo.n_edges)
        bent = rod.apply_q(state, topo, q)
        rotated = rod.rotate_state_about_vertical(bent, topo, 1.234)

        from flagsim import elastic
        stiff = elastic.stiffness_for(cfg, topo)
        xs, ths, ref = elastic._gather(bent, topo)
        t0 = elastic._stencil_terms(xs, ths, ref, stiff.EI, stiff.GJ,
                                    topo.voronoi_len, bent.natural_curvature,
                                    bent.natural_twist)
        xs, ths, ref = elastic._gather(rotated, topo)
        t1 = elastic._stencil_terms(xs, ths, ref, stiff.EI, stiff.GJ,
                                    topo.voronoi_len,
                                    rotated.natural_curvature,
                                    rotated.natural_twist)
        assert np.allclose(t1["tau"], t0["tau"], atol=1e-9)
        assert np.allclose(t1["kappa"], t0["kappa"], atol=1e-9)


# ---------------------------------------------------------------------------
# frame update bookkeeping


class TestFrameUpdate:
    def test_apply_q_keeps_frames_adapted(self):
        cfg = RobotConfig(N=2, nodes_per_tail=5)
        state, topo = rod.build_robot(cfg)
        rng = np.random.default_rng(9)
        q = state.q.copy()
        q[: 3 * topo.n_nodes] += rng.normal(scale=2e-3,
                                            size=3 * topo.n_nodes)
        new = rod.apply_q(state, topo, q)
        x = new.x
        e = x[topo.edges[:, 1]] - x[topo.edges[:, 0]]
        t = e / np.linalg.norm(e, axis=1, keepdims=True)
        assert np.min(np.sum(new.tangent * t, axis=1)) > 1.0 - 1e-10
        assert np.max(np.abs(np.sum(new.d1 * new.tangent, axis=1))) < 1e-10

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), scale=st.floats(1e-6, 3e-3))
    def test_apply_q_orthonormal_for_random_moves(self, seed, scale):
        cfg = RobotConfig(N=2, nodes_per_tail=4)
        state, topo = rod.build_robot(cfg)
        rng = np.random.default_rng(seed)
        q = state.q.copy()
        q[: 3 * topo.n_nodes] += rng.normal(scale=scale,
                                            size=3 * topo.n_nodes)
        new = rod.apply_q(state, topo, q)
        for a, b in ((new.tangent, new.d1), (new.d1, new.d2),
                     (new.d2, new.tangent)):
            assert np.max(np.abs(np.sum(a * b, axis=1))) < 1e-9
        for f in (new.tangent, new.d1, new.d2):
            assert np.allclose(np.linalg.norm(f, axis=1), 1.0, atol=1e-9)

    def test_head_axis(self):
        state, topo = rod.build_robot(RobotConfig())
        assert np.allclose(rod.head_axis(state), [0.0, 0.0, 1.0], atol=1e-12)
