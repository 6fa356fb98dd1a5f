"""Rigid transforms, the SE(3) exponential map and the pinhole X-ray camera.

Conventions
-----------
Camera frame: the X-ray source sits at the origin and the optical axis is +z,
pointing towards the detector. A :class:`RigidTransform` maps object-frame
points (mm) into this camera frame. Pixel ``(u, v)`` has its center at integer
coordinates, ``u`` along detector columns (x) and ``v`` along rows (y).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BehindCameraError, FormatError, InvalidArgumentError

DEPTH_EPS = 1e-6


def skew(v):
    """Cross-product matrix, ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Object-to-camera pose ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _readonly(self.rotation).reshape(3, 3))
        object.__setattr__(self, "translation", _readonly(self.translation).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), t)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, x):
        return apply(self, x)

    def rotate(self, v):
        """Apply the rotation only (for directions such as gradients)."""
        v = np.asarray(v, dtype=np.float64)
        return v @ self.rotation.T

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other):
        return compose(self, other)

    def is_valid(self, tol=1e-9) -> bool:
        r = self.rotation
        return (
            np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0)
            and abs(np.linalg.det(r) - 1.0) <= tol
            and bool(np.all(np.isfinite(self.translation)))
        )

    def __repr__(self):
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class MotionVector:
    """Camera-frame pose increment ``dv = (omega; trans)``.

    ``omega`` is an axis-angle rotation in radians, ``trans`` is in mm.
    """

    omega: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", _readonly(self.omega).reshape(3))
        object.__setattr__(self, "trans", _readonly(self.trans).reshape(3))

    @classmethod
    def zero(cls) -> "MotionVector":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_array(cls, a) -> "MotionVector":
        a = np.asarray(a, dtype=np.float64).reshape(6)
        return cls(a[:3], a[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.omega, self.trans])

    def __neg__(self):
        return MotionVector(-self.omega, -self.trans)

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def __repr__(self):
        return f"MotionVector(omega={self.omega.tolist()}, trans={self.trans.tolist()})"


def se3_exp(dv: MotionVector) -> RigidTransform:
    """Exponential map of the twist ``(omega, trans)``.

    Rotation by Rodrigues' formula, translation ``V @ trans`` with the SE(3)
    left Jacobian ``V``. Series expansions are used near ``omega = 0``.
    """
    if not isinstance(dv, MotionVector):
        dv = MotionVector.from_array(dv)
    w, t = dv.omega, dv.trans
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(t))):
        raise InvalidArgumentError("se3_exp: non-finite motion vector")
    theta2 = float(w @ w)
    theta = np.sqrt(theta2)
    if theta >= np.pi:
        raise InvalidArgumentError(f"se3_exp: rotation increment {theta:.4f} rad is not below pi")

    if theta2 == 0.0:
        return RigidTransform(np.eye(3), t.copy())

    K = skew(w)
    K2 = K @ K
    if theta < 1e-4:
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
        c = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
        c = (1.0 - a) / theta2
    R = np.eye(3) + a * K + b * K2
    V = np.eye(3) + b * K + c * K2
    return RigidTransform(R, V @ t)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``compose(a, b)(x) == a(b(x))``."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def apply(T: RigidTransform, x):
    """Transform a point (3,) or points (N, 3)."""
    x = np.asarray(x, dtype=np.float64)
    return x @ T.rotation.T + T.translation


def rotation_from_euler_deg(angles_deg) -> np.ndarray:
    """``Rz @ Ry @ Rx`` for angles (rx, ry, rz) in degrees; zero angles give exactly I."""
    rx, ry, rz = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))

    def rot(axis, a):
        if a == 0.0:
            return np.eye(3)
        c, s = np.cos(a), np.sin(a)
        i, j = [(1, 2), (0, 2), (0, 1)][axis]
        m = np.eye(3)
        m[i, i] = c
        m[j, j] = c
        m[i, j] = -s if axis != 1 else s
        m[j, i] = s if axis != 1 else -s
        return m

    return rot(2, rz) @ rot(1, ry) @ rot(0, rx)


def pose_from_params(angles_deg, trans_mm) -> RigidTransform:
    return RigidTransform(rotation_from_euler_deg(angles_deg), trans_mm)


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole model of the X-ray source/detector pair.

    ``detector_res`` is (width, height) in pixels; ``pixel_spacing`` and
    ``source_to_detector`` are in mm.
    """

    focal_px: np.ndarray
    principal_point_px: np.ndarray
    detector_res: tuple
    pixel_spacing: float = 0.616
    source_to_detector: float = 1200.0

    def __post_init__(self):
        object.__setattr__(self, "focal_px", _readonly(np.broadcast_to(self.focal_px, (2,))))
        object.__setattr__(self, "principal_point_px", _readonly(self.principal_point_px).reshape(2))
        object.__setattr__(self, "detector_res", tuple(int(r) for r in self.detector_res))
        if np.any(self.focal_px <= 0):
            raise InvalidArgumentError("focal length must be positive")
        if self.pixel_spacing <= 0:
            raise InvalidArgumentError("pixel spacing must be positive")
        w, h = self.detector_res
        cx, cy = self.principal_point_px
        if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
            raise InvalidArgumentError("principal point outside the detector")

    @classmethod
    def default(cls, width=616, height=480, pixel_spacing=0.616, source_to_detector=1200.0):
        f = source_to_detector / pixel_spacing
        return cls(
            focal_px=(f, f),
            principal_point_px=((width - 1) / 2.0, (height - 1) / 2.0),
            detector_res=(width, height),
            pixel_spacing=pixel_spacing,
            source_to_detector=source_to_detector,
        )

    @property
    def width(self) -> int:
        return self.detector_res[0]

    @property
    def height(self) -> int:
        return self.detector_res[1]

    def on_detector(self, p):
        """Boolean mask of pixel positions inside the detector area."""
        p = np.asarray(p, dtype=np.float64)
        w, h = self.detector_res
        return (p[..., 0] >= -0.5) & (p[..., 0] <= w - 0.5) & (p[..., 1] >= -0.5) & (p[..., 1] <= h - 0.5)


def project(cam: CameraModel, x_cam):
    """Perspective projection of camera-frame point(s) to pixels."""
    x = np.asarray(x_cam, dtype=np.float64)
    z = x[..., 2]
    if np.any(z <= DEPTH_EPS):
        raise BehindCameraError("point at or behind the source plane")
    return cam.principal_point_px + cam.focal_px * x[..., :2] / z[..., None]


def backproject_ray(cam: CameraModel, p):
    """Unit viewing direction(s) from the source through pixel position(s) ``p``."""
    p = np.asarray(p, dtype=np.float64)
    xy = (p - cam.principal_point_px) / cam.focal_px
    d = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


# -- pose interchange: 3x4 row-major text -----------------------------------


def format_pose(T: RigidTransform) -> str:
    m = T.matrix()[:3]
    return "".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in m)


def write_pose(path, T: RigidTransform):
    Path(path).write_text(format_pose(T))


def read_pose(path) -> RigidTransform:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            vals = [float(v) for v in line.split()]
        except ValueError:
            raise FormatError("pose row is not numeric", line=lineno, path=path) from None
        if len(vals) != 4 or not all(np.isfinite(vals)):
            raise FormatError("pose row needs 4 finite numbers", line=lineno, path=path)
        rows.append(vals)
    if len(rows) != 3:
        raise FormatError(f"expected 3 pose rows, found {len(rows)}", path=path)
    T = RigidTransform.from_matrix(np.array(rows))
    if not T.is_valid(1e-6):
        raise FormatError("pose rotation is not orthonormal", path=path)
    return T
