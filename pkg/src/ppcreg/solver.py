"""Weighted point-to-plane correspondence (PPC) system: build, solve, differentiate.

Every correspondence constrains its contour point ``w`` (camera frame) to
stay on the plane through the X-ray source that contains the back-projected
ray of ``p'`` and the contour tangent ``w x g``. With plane normal ``n`` the
linearized motion ``w + omega x w + t`` must satisfy ``n . (...) = 0``, i.e.

    (n x w) . omega - n . t = n . w

which gives one row of ``A dv = b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .correspondence import CorrespondenceSet, WeightVector
from .errors import InsufficientConstraintsError, InvalidArgumentError, RankDeficientError
from .geometry import CameraModel, MotionVector, RigidTransform, backproject_ray, se3_exp
from .volume import ContourSet

DEGENERATE_PLANE_EPS = 1e-8
# reciprocal condition number below which a lambda=0 system counts as rank deficient
RCOND_MIN = 1e-13


@dataclass(frozen=True, eq=False)
class PPCSystem:
    A: np.ndarray
    b: np.ndarray
    normals: np.ndarray
    used: np.ndarray
    w: np.ndarray = None

    def __len__(self):
        return len(self.b)

    @classmethod
    def from_arrays(cls, A, b, used=None, w=None):
        """Wrap a raw system (used for synthetic tests)."""
        A = np.asarray(A, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        n = len(b)
        used = np.ones(n, dtype=bool) if used is None else np.asarray(used, dtype=bool)
        return cls(A, b, np.full((n, 3), np.nan), used, w)


@dataclass(frozen=True)
class SolverConfig:
    tikhonov_lambda: float = 1e-6
    min_rows: int = 6
    omega_scale: float = None

    def __post_init__(self):
        if self.tikhonov_lambda < 0:
            raise InvalidArgumentError("tikhonov_lambda must be >= 0")
        if self.min_rows < 6:
            raise InvalidArgumentError("min_rows must be >= 6")


def build_ppc_system(contours: ContourSet, c: CorrespondenceSet, cam: CameraModel, min_rows=6) -> PPCSystem:
    """Assemble ``A`` (N x 6) and ``b`` (N) from contour points and their matches."""
    if len(contours) != len(c) or not np.allclose(contours.p, c.p, rtol=0, atol=1e-9):
        raise InvalidArgumentError("correspondences do not belong to this contour set")
    w = contours.w_cam
    s = np.cross(w, contours.g_cam)
    r = backproject_ray(cam, np.where(c.valid[:, None], c.p_prime, c.p))
    m = np.cross(s, r)
    mnorm = np.linalg.norm(m, axis=1)
    used = np.asarray(c.valid, dtype=bool) & (mnorm >= DEGENERATE_PLANE_EPS)
    n = np.zeros_like(m)
    n[used] = m[used] / mnorm[used, None]
    A = np.zeros((len(w), 6))
    A[:, :3] = np.cross(n, w)
    A[:, 3:] = -n
    b = np.einsum("ij,ij->i", n, w)
    if used.sum() < min_rows:
        raise InsufficientConstraintsError(f"only {int(used.sum())} usable PPC rows (need {min_rows})")
    return PPCSystem(A, b, n, used, w)


def _omega_scale(sys: PPCSystem, cfg: SolverConfig) -> float:
    if cfg.omega_scale is not None:
        return float(cfg.omega_scale)
    if sys.w is None or not sys.used.any():
        return 1.0
    return float(np.mean(np.linalg.norm(sys.w[sys.used], axis=1)))


def _effective_weights(sys: PPCSystem, w: WeightVector, cfg: SolverConfig):
    wd = np.asarray(w.w_diag if isinstance(w, WeightVector) else w, dtype=np.float64)
    if wd.shape != sys.b.shape:
        raise InvalidArgumentError("weight vector length does not match the system")
    wd = np.where(sys.used, wd, 0.0)
    if np.count_nonzero(wd > 0) < cfg.min_rows:
        raise InsufficientConstraintsError(
            f"only {np.count_nonzero(wd > 0)} rows with positive weight (need {cfg.min_rows})"
        )
    return wd


def _factor(sys: PPCSystem, wd, cfg: SolverConfig):
    """Cholesky factor of the column-balanced regularized normal matrix."""
    scale = _omega_scale(sys, cfg)
    d = np.array([scale] * 3 + [1.0] * 3)
    rows = sys.used & (wd > 0)
    Ab = sys.A[rows] / d  # balanced columns: A @ dv == Ab @ (d * dv)
    W2 = wd[rows] ** 2
    M = Ab.T @ (W2[:, None] * Ab)
    lam = cfg.tikhonov_lambda
    if lam > 0:
        M = M + lam * np.eye(6)
    else:
        ev = np.linalg.eigvalsh(M)
        if ev[0] <= RCOND_MIN * max(ev[-1], np.finfo(float).tiny):
            raise RankDeficientError("PPC system has effective rank < 6")
    try:
        cho = linalg.cho_factor(M, lower=False, check_finite=True)
    except linalg.LinAlgError:
        raise RankDeficientError("normal matrix is not positive definite") from None
    return cho, d, rows, Ab


def solve_ppc(sys: PPCSystem, w: WeightVector, cfg: SolverConfig = SolverConfig()) -> MotionVector:
    """Closed-form ``argmin ||W (A dv - b)||^2 + lambda ||D dv||^2``.

    ``D`` scales the rotational columns by ``omega_scale`` so that both
    blocks carry millimetres. With ``lambda = 0`` this is ordinary weighted
    least squares (a full-rank system is required).
    """
    wd = _effective_weights(sys, w, cfg)
    cho, d, rows, Ab = _factor(sys, wd, cfg)
    rhs = Ab.T @ (wd[rows] ** 2 * sys.b[rows])
    y = linalg.cho_solve(cho, rhs)
    return MotionVector.from_array(y / d)


def ppc_jacobians(sys: PPCSystem, w: WeightVector, cfg: SolverConfig = SolverConfig()):
    """Derivatives of the solution by implicit differentiation of the normal equations.

    With ``M = A^T W^2 A + lambda D^2`` and residual ``r = b - A dv``:

        d dv / d b_i = M^-1 a_i w_i^2
        d dv / d w_i = 2 w_i r_i M^-1 a_i

    Returns ``{"d_dv_d_b": (6, N), "d_dv_d_w": (6, N)}``; rows not in the
    system (unused or zero weight) get zero columns.
    """
    wd = _effective_weights(sys, w, cfg)
    cho, d, rows, Ab = _factor(sys, wd, cfg)
    rhs = Ab.T @ (wd[rows] ** 2 * sys.b[rows])
    y = linalg.cho_solve(cho, rhs)
    # columns of M^-1 a_i in original (unbalanced) coordinates
    G = linalg.cho_solve(cho, Ab.T) / d[:, None]
    resid = sys.b[rows] - Ab @ y
    n = len(sys.b)
    d_b = np.zeros((6, n))
    d_w = np.zeros((6, n))
    d_b[:, rows] = G * wd[rows] ** 2
    d_w[:, rows] = G * (2.0 * wd[rows] * resid)
    return {"d_dv_d_b": d_b, "d_dv_d_w": d_w}


def dv_to_transform(dv: MotionVector) -> RigidTransform:
    """Motion vector to pose increment (the SE(3) exponential map)."""
    return se3_exp(dv)
