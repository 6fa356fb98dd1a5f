import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppcreg.correspondence import CorrespondenceSet, WeightVector, oracle_correspondences, weight_correspondences
from ppcreg.errors import InsufficientConstraintsError, InvalidArgumentError, RankDeficientError
from ppcreg.geometry import MotionVector, compose, se3_exp
from ppcreg.solver import (
    PPCSystem,
    SolverConfig,
    build_ppc_system,
    dv_to_transform,
    ppc_jacobians,
    solve_ppc,
)
from ppcreg.volume import ContourSet, select_apparent_contours

from conftest import random_pose, random_ppc_system

EXACT = SolverConfig(tikhonov_lambda=0.0)


def svd_oracle(A, b, wd):
    """Minimum-norm weighted least squares via a full SVD."""
    WA = wd[:, None] * A
    U, s, Vt = np.linalg.svd(WA, full_matrices=True)
    k = int(np.sum(s > s[0] * 1e-14))
    return Vt[:k].T @ ((U[:, :k].T @ (wd * b)) / s[:k])


def rel_err(x, ref):
    return np.linalg.norm(x - ref) / max(np.linalg.norm(ref), 1e-300)


class TestBuild:
    def test_zero_misalignment(self, cam, sphere_surface, box_surface, rng):
        for surface in (sphere_surface, box_surface):
            T = random_pose(rng)
            c = select_apparent_contours(surface, T, cam)
            sys = build_ppc_system(c, oracle_correspondences(c, T, T, cam), cam)
            assert sys.used.all()
            assert np.abs(sys.b).max() <= 1e-9

    def test_row_layout(self, cam, sphere_surface, rng):
        T = random_pose(rng)
        c = select_apparent_contours(sphere_surface, T, cam)
        corr = oracle_correspondences(c, T, random_pose(rng, 5, 5), cam)
        sys = build_ppc_system(c, corr, cam)
        n, w = sys.normals[sys.used], c.w_cam[sys.used]
        np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(sys.A[sys.used, :3], np.cross(n, w), atol=1e-12)
        np.testing.assert_allclose(sys.A[sys.used, 3:], -n, atol=1e-15)
        np.testing.assert_allclose(sys.b[sys.used], np.sum(n * w, axis=1), atol=1e-12)

    def test_degenerate_plane_dropped(self, cam):
        # gradient along the viewing ray makes w x g vanish
        w = np.array([[0.0, 0.0, 800.0]] + [[10.0 * k, 5.0, 800.0] for k in range(1, 8)])
        g = np.array([[0.0, 0.0, 1.0]] + [[0.0, 1.0, 0.0]] * 7)
        p = cam.principal_point_px + cam.focal_px * w[:, :2] / w[:, 2:]
        c = ContourSet(w, g, p, np.arange(8))
        corr = CorrespondenceSet(p, p + 1.0, np.ones(8, bool), np.ones(8))
        sys = build_ppc_system(c, corr, cam)
        assert not sys.used[0] and sys.used[1:].all()

    def test_invalid_rows_unused(self, cam, sphere_surface, T_gt):
        c = select_apparent_contours(sphere_surface, T_gt, cam)
        corr = oracle_correspondences(c, T_gt, T_gt, cam)
        valid = corr.valid.copy()
        valid[::2] = False
        sys = build_ppc_system(c, CorrespondenceSet(corr.p, corr.p_prime, valid, corr.score), cam)
        np.testing.assert_array_equal(sys.used, valid)

    def test_too_few_rows(self, cam, sphere_surface, T_gt):
        c = select_apparent_contours(sphere_surface, T_gt, cam)
        corr = oracle_correspondences(c, T_gt, T_gt, cam)
        valid = np.zeros(len(c), bool)
        valid[:5] = True
        with pytest.raises(InsufficientConstraintsError):
            build_ppc_system(c, CorrespondenceSet(corr.p, corr.p_prime, valid, corr.score), cam)

    def test_mismatched_correspondences(self, cam, sphere_surface, T_gt):
        c = select_apparent_contours(sphere_surface, T_gt, cam)
        corr = oracle_correspondences(c, T_gt, T_gt, cam)
        with pytest.raises(InvalidArgumentError):
            build_ppc_system(c, CorrespondenceSet(corr.p + 1, corr.p_prime, corr.valid, corr.score), cam)

    def test_first_order_consistency(self, cam, sphere_surface, rng):
        for _ in range(20):
            T = random_pose(rng)
            c = select_apparent_contours(sphere_surface, T, cam)
            a = rng.normal(size=6)
            a *= rng.uniform(1e-4, 1e-2) / np.linalg.norm(a)
            dv = MotionVector.from_array(a)
            corr = oracle_correspondences(c, T, compose(se3_exp(dv), T), cam)
            sys = build_ppc_system(c, corr, cam)
            u = sys.used
            resid = np.linalg.norm(sys.A[u] @ a - sys.b[u]) / np.linalg.norm(sys.b[u])
            assert resid <= 5 * np.linalg.norm(a)


class TestSolve:
    @pytest.mark.parametrize("lam", [0.0, 1e-6, 1.0])
    def test_zero_rhs_gives_zero(self, rng, lam):
        sys, wd = random_ppc_system(rng)
        sys = PPCSystem.from_arrays(sys.A, np.zeros(len(sys.b)), w=sys.w)
        dv = solve_ppc(sys, WeightVector(wd), SolverConfig(lam))
        assert np.array_equal(dv.as_array(), np.zeros(6))

    def test_svd_oracle(self, rng):
        for _ in range(100):
            sys, wd = random_ppc_system(rng)
            dv = solve_ppc(sys, WeightVector(wd), EXACT).as_array()
            assert rel_err(dv, svd_oracle(sys.A, sys.b, wd)) <= 1e-8

    def test_gaussian_systems_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(6, 200))
            A, b, wd = rng.normal(size=(n, 6)), rng.normal(size=n), rng.uniform(0.1, 1, n)
            dv = solve_ppc(PPCSystem.from_arrays(A, b), WeightVector(wd), EXACT).as_array()
            assert rel_err(dv, svd_oracle(A, b, wd)) <= 1e-8

    def test_exactly_six_rows(self, rng):
        for _ in range(20):
            sys, _ = random_ppc_system(rng, n=6, weighted=False)
            dv = solve_ppc(sys, WeightVector(np.ones(6)), EXACT).as_array()
            assert np.linalg.norm(sys.A @ dv - sys.b) <= 1e-8

    def test_tikhonov_objective(self, rng):
        # the regularized solution zeroes the gradient of the stated objective
        sys, wd = random_ppc_system(rng, n=40)
        cfg = SolverConfig(tikhonov_lambda=0.5)
        dv = solve_ppc(sys, WeightVector(wd), cfg).as_array()
        scale = np.mean(np.linalg.norm(sys.w, axis=1))
        D2 = np.diag([scale**2] * 3 + [1.0] * 3)
        grad = sys.A.T @ (wd**2 * (sys.A @ dv - sys.b)) + cfg.tikhonov_lambda * D2 @ dv
        assert np.linalg.norm(grad) <= 1e-8 * np.linalg.norm(sys.A.T @ (wd**2 * sys.b))

    @pytest.mark.parametrize("c", [1e-3, 0.37, 5.0, 1e3])
    def test_weight_scale_invariance(self, rng, c):
        sys, wd = random_ppc_system(rng)
        a = solve_ppc(sys, WeightVector(wd), EXACT).as_array()
        b = solve_ppc(sys, WeightVector(c * wd), EXACT).as_array()
        assert rel_err(b, a) <= 1e-9

    def test_zero_weight_equals_deletion(self, rng):
        sys, wd = random_ppc_system(rng, n=60)
        wd[[3, 17, 40]] = 0.0
        keep = wd > 0
        a = solve_ppc(sys, WeightVector(wd), EXACT).as_array()
        cut = PPCSystem.from_arrays(sys.A[keep], sys.b[keep], w=sys.w[keep])
        b = solve_ppc(cut, WeightVector(wd[keep]), SolverConfig(0.0, omega_scale=np.mean(np.linalg.norm(sys.w, axis=1)))).as_array()
        assert np.abs(a - b).max() <= 1e-10

    def test_linear_in_b(self, rng):
        sys, wd = random_ppc_system(rng)
        b2 = rng.normal(size=len(sys.b))
        cfg = SolverConfig(1e-3)
        s2 = PPCSystem.from_arrays(sys.A, b2, w=sys.w)
        s12 = PPCSystem.from_arrays(sys.A, sys.b + b2, w=sys.w)
        x1 = solve_ppc(sys, WeightVector(wd), cfg).as_array()
        x2 = solve_ppc(s2, WeightVector(wd), cfg).as_array()
        x12 = solve_ppc(s12, WeightVector(wd), cfg).as_array()
        assert np.abs(x12 - x1 - x2).max() <= 1e-9

    def test_rank_deficient(self, rng):
        A = rng.normal(size=(30, 6))
        A[:, 5] = A[:, 4]
        sys = PPCSystem.from_arrays(A, rng.normal(size=30))
        with pytest.raises(RankDeficientError):
            solve_ppc(sys, WeightVector(np.ones(30)), EXACT)
        # the regularized solve still succeeds
        assert np.all(np.isfinite(solve_ppc(sys, WeightVector(np.ones(30))).as_array()))

    def test_too_few_weighted_rows(self, rng):
        sys, wd = random_ppc_system(rng, n=20)
        wd[5:] = 0
        with pytest.raises(InsufficientConstraintsError):
            solve_ppc(sys, WeightVector(wd))

    def test_weight_length_mismatch(self, rng):
        sys, wd = random_ppc_system(rng, n=20)
        with pytest.raises(InvalidArgumentError):
            solve_ppc(sys, WeightVector(wd[:-1]))

    @pytest.mark.parametrize("kw", [dict(tikhonov_lambda=-1.0), dict(min_rows=5)])
    def test_config_validation(self, kw):
        with pytest.raises(InvalidArgumentError):
            SolverConfig(**kw)


def fd_jacobians(sys, wd, cfg, h=1e-5):
    n = len(sys.b)
    jb = np.zeros((6, n))
    jw = np.zeros((6, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        plus = PPCSystem.from_arrays(sys.A, sys.b + e, w=sys.w)
        minus = PPCSystem.from_arrays(sys.A, sys.b - e, w=sys.w)
        jb[:, i] = (solve_ppc(plus, WeightVector(wd), cfg).as_array() - solve_ppc(minus, WeightVector(wd), cfg).as_array()) / (2 * h)
        jw[:, i] = (solve_ppc(sys, WeightVector(wd + e), cfg).as_array() - solve_ppc(sys, WeightVector(wd - e), cfg).as_array()) / (2 * h)
    return jb, jw


class TestJacobians:
    @pytest.mark.parametrize("lam", [0.0, 1e-6, 1e-2])
    def test_finite_differences(self, rng, lam):
        cfg = SolverConfig(lam)
        for _ in range(5):
            # square systems have d dv / d w = 0 exactly, which FD cannot resolve relatively
            sys, wd = random_ppc_system(rng, n=int(rng.integers(12, 40)))
            jac = ppc_jacobians(sys, WeightVector(wd), cfg)
            jb, jw = fd_jacobians(sys, wd, cfg)
            assert rel_err(jac["d_dv_d_b"], jb) <= 1e-4
            assert rel_err(jac["d_dv_d_w"], jw) <= 1e-4

    def test_zero_residual_row(self, rng):
        # consistent system: every residual is zero, so weights do not matter
        sys, wd = random_ppc_system(rng, n=30)
        truth = rng.normal(size=6) * np.array([1e-3] * 3 + [1.0] * 3)
        sys = PPCSystem.from_arrays(sys.A, sys.A @ truth, w=sys.w)
        wd[4] = 0.0
        jac = ppc_jacobians(sys, WeightVector(wd), EXACT)
        np.testing.assert_allclose(jac["d_dv_d_w"][:, 4], 0.0, atol=1e-12)
        assert np.abs(jac["d_dv_d_w"]).max() <= 1e-9

    def test_shapes(self, rng):
        sys, wd = random_ppc_system(rng, n=25)
        jac = ppc_jacobians(sys, WeightVector(wd))
        assert jac["d_dv_d_b"].shape == (6, 25) and jac["d_dv_d_w"].shape == (6, 25)


class TestDvToTransform:
    def test_zero(self):
        assert np.array_equal(dv_to_transform(MotionVector.zero()).matrix(), np.eye(4))

    def test_alias(self, rng):
        dv = MotionVector.from_array(rng.normal(size=6) * 0.1)
        assert np.array_equal(dv_to_transform(dv).matrix(), se3_exp(dv).matrix())

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-1e-2, 1e-2), min_size=3, max_size=3),
        st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3),
        st.lists(st.floats(-100, 100), min_size=3, max_size=3),
    )
    def test_taylor_remainder(self, omega, t, w):
        dv = MotionVector(omega, t)
        w = np.array(w) + [0, 0, 750.0]
        linear = w + np.cross(dv.omega, w) + dv.trans
        err = np.linalg.norm(dv_to_transform(dv).apply(w) - linear)
        assert err <= dv.norm() ** 2 * np.linalg.norm(w) + 1e-9
