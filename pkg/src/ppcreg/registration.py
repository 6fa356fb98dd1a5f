"""Iterative PPC registration: render, select contours, match, weight, solve, update."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correspondence import (
    PatchMatchConfig,
    add_correspondence_noise,
    load_external_correspondences,
    oracle_correspondences,
    patch_match_correspondences,
    weight_correspondences,
)
from .drr import render_drr
from .errors import InvalidArgumentError, PPCError
from .geometry import MotionVector, RigidTransform, compose
from .metrics import mrpd
from .solver import SolverConfig, build_ppc_system, dv_to_transform, solve_ppc
from .volume import SurfacePoints, select_apparent_contours

log = logging.getLogger(__name__)

ESTIMATORS = ("oracle", "patch", "external")
WEIGHTINGS = ("uniform", "score", "residual-robust")


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 10
    rot_tol: float = 1e-4
    trans_tol: float = 1e-3
    estimator: str = "oracle"
    weighting: str = "uniform"
    delta_px: float = 3.0
    tau: float = 0.15
    max_contours: int = 800
    solver: SolverConfig = field(default_factory=SolverConfig)
    step_mm: float = None
    patch: PatchMatchConfig = field(default_factory=PatchMatchConfig)
    noise_sigma_px: float = 0.0
    outlier_frac: float = 0.0
    outlier_mag_px: float = 0.0
    noise_seed: int = 0
    external_dir: str = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be >= 1")
        if self.rot_tol <= 0 or self.trans_tol <= 0:
            raise InvalidArgumentError("convergence tolerances must be positive")
        if self.estimator not in ESTIMATORS:
            raise InvalidArgumentError(f"unknown estimator {self.estimator!r}")
        if self.weighting not in WEIGHTINGS:
            raise InvalidArgumentError(f"unknown weighting {self.weighting!r}")

    @property
    def noisy(self):
        return self.noise_sigma_px > 0 or self.outlier_frac > 0


# -- estimators ---------------------------------------------------------------
# All share the call signature (contours, T_i, i_drr, i_flr, iteration).


class OracleEstimator:
    needs_images = False

    def __init__(self, T_gt, cam):
        self.T_gt = T_gt
        self.cam = cam

    def __call__(self, contours, T_i, i_drr, i_flr, iteration):
        return oracle_correspondences(contours, T_i, self.T_gt, self.cam)


class PatchMatchEstimator:
    needs_images = True

    def __init__(self, cfg=PatchMatchConfig()):
        self.cfg = cfg

    def __call__(self, contours, T_i, i_drr, i_flr, iteration):
        return patch_match_correspondences(i_drr, i_flr, contours, self.cfg)


class ExternalEstimator:
    """Reads ``iter_###.csv`` (0-based iteration) from a directory."""

    needs_images = False

    def __init__(self, directory):
        self.directory = Path(directory)

    def path_for(self, iteration):
        return self.directory / f"iter_{iteration:03d}.csv"

    def __call__(self, contours, T_i, i_drr, i_flr, iteration):
        return load_external_correspondences(self.path_for(iteration), contours)


class NoisyEstimator:
    """Perturbs another estimator's output with a fresh, seeded draw per iteration."""

    def __init__(self, base, sigma_px, outlier_frac, outlier_mag_px, seed):
        self.base = base
        self.sigma_px = sigma_px
        self.outlier_frac = outlier_frac
        self.outlier_mag_px = outlier_mag_px
        self.seed = seed

    @property
    def needs_images(self):
        return self.base.needs_images

    def __call__(self, contours, T_i, i_drr, i_flr, iteration):
        c = self.base(contours, T_i, i_drr, i_flr, iteration)
        seed = np.random.SeedSequence([int(self.seed), int(iteration)])
        return add_correspondence_noise(c, self.sigma_px, self.outlier_frac, self.outlier_mag_px, seed)


def make_estimator(cfg: LoopConfig, cam, T_gt=None):
    if cfg.estimator == "oracle":
        if T_gt is None:
            raise InvalidArgumentError("the oracle estimator needs the ground-truth pose")
        est = OracleEstimator(T_gt, cam)
    elif cfg.estimator == "patch":
        est = PatchMatchEstimator(cfg.patch)
    else:
        if cfg.external_dir is None:
            raise InvalidArgumentError("the external estimator needs external_dir")
        est = ExternalEstimator(cfg.external_dir)
    if cfg.noisy:
        est = NoisyEstimator(est, cfg.noise_sigma_px, cfg.outlier_frac, cfg.outlier_mag_px, cfg.noise_seed)
    return est


# -- loop -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StepResult:
    dv: MotionVector
    T_next: RigidTransform
    diagnostics: dict


@dataclass(frozen=True, eq=False)
class IterationRecord:
    dv: MotionVector
    num_correspondences: int
    mean_flow_px: float
    mrpd_mm: float = None


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    t_final: RigidTransform
    iterations_run: int
    trace: list
    status: str
    reason: str = ""

    @property
    def succeeded(self):
        return self.status in ("converged", "max-iterations")


def update_step(v, surface, i_flr, T_i, cam, cfg: LoopConfig, estimator=None, iteration=0, T_gt=None) -> StepResult:
    """One update ``dv`` and the next pose ``se3_exp(dv) o T_i``.

    The DRR at ``T_i`` is only rendered when the estimator looks at images.
    Raises a :class:`~ppcreg.errors.PPCError` when too few contours or
    constraints remain.
    """
    if estimator is None:
        estimator = make_estimator(cfg, cam, T_gt)
    contours = select_apparent_contours(surface, T_i, cam, tau=cfg.tau, max_count=cfg.max_contours)
    i_drr = render_drr(v, T_i, cam, cfg.step_mm) if estimator.needs_images else None
    corr = estimator(contours, T_i, i_drr, i_flr, iteration)
    weights = weight_correspondences(corr, cfg.weighting, delta_px=cfg.delta_px)
    system = build_ppc_system(contours, corr, cam, min_rows=cfg.solver.min_rows)
    dv = solve_ppc(system, weights, cfg.solver)
    T_next = compose(dv_to_transform(dv), T_i)
    flow = corr.flow[corr.valid]
    diagnostics = {
        "contours": contours,
        "correspondences": corr,
        "weights": weights,
        "i_drr": i_drr,
        "num_correspondences": int(np.count_nonzero(weights.w_diag > 0)),
        "mean_flow_px": float(np.mean(np.linalg.norm(flow, axis=1))) if len(flow) else 0.0,
    }
    return StepResult(dv, T_next, diagnostics)


def register(v, surface, i_flr, T_init, cam, cfg: LoopConfig = LoopConfig(), T_gt=None, estimator=None, targets=None, callback=None) -> RegistrationResult:
    """Iterate :func:`update_step` until both parts of ``dv`` drop below tolerance.

    Never raises for a failed step: the result carries ``status="failed"``,
    the reason and the partial trace. ``targets`` (object frame, default the
    surface points) are used for the per-iteration mRPD when ``T_gt`` is given.
    ``callback(k, step)`` is invoked after every successful step.
    """
    surface = SurfacePoints.from_points(surface)
    if estimator is None:
        estimator = make_estimator(cfg, cam, T_gt)
    if targets is None:
        targets = surface.w_obj
    T = T_init
    trace = []
    for k in range(cfg.max_iterations):
        try:
            step = update_step(v, surface, i_flr, T, cam, cfg, estimator=estimator, iteration=k)
            err = mrpd(step.T_next, T_gt, targets, cam) if T_gt is not None else None
        except (PPCError, OSError) as exc:
            log.debug("registration step %d failed: %s", k, exc)
            return RegistrationResult(T, len(trace), trace, "failed", f"{type(exc).__name__}: {exc}")
        T = step.T_next
        trace.append(
            IterationRecord(step.dv, step.diagnostics["num_correspondences"], step.diagnostics["mean_flow_px"], err)
        )
        if callback is not None:
            callback(k, step)
        if np.linalg.norm(step.dv.omega) < cfg.rot_tol and np.linalg.norm(step.dv.trans) < cfg.trans_tol:
            return RegistrationResult(T, len(trace), trace, "converged")
    return RegistrationResult(T, len(trace), trace, "max-iterations")
