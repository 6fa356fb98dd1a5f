"""Registration, flow and combined losses, evaluated as metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .geometry import MotionVector, RigidTransform


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    beta: float = 0.5
    lam: float = 1e-3
    zeta: float = 1e-5
    gamma: float = 0.8
    n_fl: int = None

    def __post_init__(self):
        if min(self.alpha, self.beta, self.lam, self.zeta) < 0:
            raise InvalidArgumentError("loss coefficients must be non-negative")
        if not 0 < self.gamma <= 1:
            raise InvalidArgumentError("gamma must lie in (0, 1]")


def registration_loss(T_pred: RigidTransform, T_gt: RigidTransform, w_points) -> float:
    """Mean over points of ``||T_pred(w) - T_gt(w)||_1`` (mm)."""
    w = np.asarray(w_points, dtype=np.float64).reshape(-1, 3)
    if len(w) == 0:
        raise InvalidArgumentError("registration_loss needs at least one point")
    diff = T_pred.apply(w) - T_gt.apply(w)
    return float(np.mean(np.sum(np.abs(diff), axis=1)))


def flow_loss(flow_seq, flow_gt, mask, cfg: LossConfig = LossConfig()) -> float:
    """Discounted masked end-point error over a sequence of flow estimates.

    ``sum_j gamma^(N - j) * mean_masked ||f_j - f_gt||_1`` with ``j = 1..N``;
    the last estimate in the sequence gets weight 1.
    """
    flow_gt = np.asarray(flow_gt, dtype=np.float64).reshape(-1, 2)
    mask = np.asarray(mask, dtype=bool)
    n_cp = int(mask.sum())
    if n_cp == 0:
        raise InvalidArgumentError("flow_loss mask selects no points")
    seq = [np.asarray(f, dtype=np.float64).reshape(-1, 2) for f in flow_seq]
    n_fl = len(seq) if cfg.n_fl is None else cfg.n_fl
    if len(seq) != n_fl or n_fl < 1:
        raise InvalidArgumentError(f"expected {n_fl} flow estimates, got {len(seq)}")
    total = 0.0
    for j, f in enumerate(seq, start=1):
        epe = np.sum(np.abs(f[mask] - flow_gt[mask]), axis=1)
        total += cfg.gamma ** (n_fl - j) * (epe.sum() / n_cp)
    return float(total)


def combined_loss(flow_term, reg_term, dv, weight_norm_sq, cfg: LossConfig = LossConfig()) -> float:
    """``alpha*flow + beta*reg + lam*||dv||_2 + zeta/2 * ||weights||^2``.

    ``weight_norm_sq`` is the squared norm of whatever learned parameters the
    caller owns; it is only scaled here.
    """
    dv_arr = dv.as_array() if isinstance(dv, MotionVector) else np.asarray(dv, dtype=np.float64)
    parts = [flow_term, reg_term, weight_norm_sq, *dv_arr]
    if not all(np.isfinite(parts)):
        raise InvalidArgumentError("combined_loss components must be finite")
    return float(
        cfg.alpha * flow_term
        + cfg.beta * reg_term
        + cfg.lam * np.linalg.norm(dv_arr)
        + 0.5 * cfg.zeta * weight_norm_sq
    )
