"""Pose error measures: mean target registration error and mean re-projection distance."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .geometry import CameraModel, RigidTransform, backproject_ray, project


def _targets(targets):
    x = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(x) == 0:
        raise InvalidArgumentError("no target points")
    return x


def mtre(T_a: RigidTransform, T_b: RigidTransform, targets) -> float:
    """Mean 3D distance (mm) between the targets mapped by the two poses."""
    x = _targets(targets)
    return float(np.mean(np.linalg.norm(T_a.apply(x) - T_b.apply(x), axis=1)))


def mrpd(T_est: RigidTransform, T_gt: RigidTransform, targets, cam: CameraModel) -> float:
    """Mean distance (mm) of each true target position from the ray through its estimated projection.

    Raises :class:`~ppcreg.errors.BehindCameraError` when an estimated target
    position is not in front of the source.
    """
    x = _targets(targets)
    d = backproject_ray(cam, project(cam, T_est.apply(x)))
    g = T_gt.apply(x)
    along = np.einsum("ij,ij->i", g, d)
    return float(np.mean(np.linalg.norm(g - along[:, None] * d, axis=1)))
