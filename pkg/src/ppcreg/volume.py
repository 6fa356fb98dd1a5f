"""Synthetic phantom volumes, surface points and apparent-contour selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import (
    EmptySurfaceError,
    FormatError,
    InsufficientContoursError,
    InvalidArgumentError,
)
from .geometry import CameraModel, RigidTransform, project

PHANTOM_KINDS = ("sphere", "box", "tube", "two-spheres")
MIN_CONTOUR_POINTS = 6


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar attenuation field (1/mm) on a regular grid.

    ``data[i, j, k]`` is the voxel whose center sits at
    ``origin + spacing * (i, j, k)`` in the object frame.
    """

    data: np.ndarray
    spacing: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 3 or min(data.shape) < 2:
            raise InvalidArgumentError(f"volume needs >= 2 voxels per axis, got {data.shape}")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise InvalidArgumentError("volume values must be finite and non-negative")
        spacing = np.array(self.spacing, dtype=np.float64).reshape(3)
        if np.any(spacing <= 0):
            raise InvalidArgumentError("voxel spacing must be positive")
        data.setflags(write=False)
        spacing.setflags(write=False)
        origin = np.array(self.origin, dtype=np.float64).reshape(3)
        origin.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self):
        return self.data.shape

    def voxel_centers(self, idx):
        return self.origin + self.spacing * np.asarray(idx, dtype=np.float64)

    def bounds(self):
        """Axis-aligned box covering the voxel centers, (lo, hi) in mm."""
        lo = self.origin
        hi = self.origin + self.spacing * (np.array(self.dims) - 1)
        return lo, hi

    def center(self):
        lo, hi = self.bounds()
        return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class SurfacePoint:
    w_obj: np.ndarray
    g_obj: np.ndarray


@dataclass(frozen=True, eq=False)
class SurfacePoints:
    """Array-of-structs view of many :class:`SurfacePoint` (N x 3 each)."""

    w_obj: np.ndarray
    g_obj: np.ndarray

    def __len__(self):
        return len(self.w_obj)

    def __getitem__(self, i):
        return SurfacePoint(self.w_obj[i], self.g_obj[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_points(cls, points):
        if isinstance(points, SurfacePoints):
            return points
        points = list(points)
        return cls(
            np.array([p.w_obj for p in points], dtype=np.float64).reshape(-1, 3),
            np.array([p.g_obj for p in points], dtype=np.float64).reshape(-1, 3),
        )


@dataclass(frozen=True, eq=False)
class ContourSet:
    """Apparent-contour points at one pose, all in the camera frame.

    ``index`` refers back to the rows of the surface point set they came from.
    """

    w_cam: np.ndarray
    g_cam: np.ndarray
    p: np.ndarray
    index: np.ndarray

    def __len__(self):
        return len(self.w_cam)

    @property
    def count(self):
        return len(self.w_cam)


# -- phantoms -----------------------------------------------------------------


def _grid(dims, spacing, origin):
    axes = [origin[a] + spacing[a] * np.arange(dims[a]) for a in range(3)]
    return np.meshgrid(*axes, indexing="ij")


def _sdf_sphere(x, y, z, c, r):
    return np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) - r


def _sdf_box(x, y, z, c, half):
    q = [np.abs(x - c[0]) - half[0], np.abs(y - c[1]) - half[1], np.abs(z - c[2]) - half[2]]
    outside = np.sqrt(sum(np.maximum(qi, 0.0) ** 2 for qi in q))
    inside = np.minimum(np.maximum(np.maximum(q[0], q[1]), q[2]), 0.0)
    return outside + inside


def _sdf_tube(x, y, z, c, r_out, r_in, half_len):
    rho = np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2)
    radial = np.maximum(rho - r_out, r_in - rho)
    return np.maximum(radial, np.abs(z - c[2]) - half_len)


def make_phantom(kind, dims=64, spacing=1.0, density=0.05, texture=0.0, texture_period=8.0, **params) -> Volume:
    """Rasterize an analytic solid into a :class:`Volume` centered on the object origin.

    The solid boundary falls off as an erfc profile with a one-voxel length
    scale, which keeps central-difference gradient directions within a few
    degrees of the true surface normal. Shape parameters (mm):

    - sphere: ``radius``, ``center``
    - box: ``half_extents``
    - tube: ``radius``, ``inner_radius`` (default ``radius / 2``), ``half_length``
    - two-spheres: ``radius`` and ``radius2`` (default ``0.6 * radius``),
      ``separation`` between the centers (along x, default ``1.1 * (radius + radius2)``)

    ``texture`` > 0 modulates the interior density by a 3D sinusoid so that
    projections carry structure away from the silhouette.
    """
    if kind not in PHANTOM_KINDS:
        raise InvalidArgumentError(f"unknown phantom kind {kind!r}; expected one of {PHANTOM_KINDS}")
    dims = tuple(int(d) for d in np.broadcast_to(dims, (3,)))
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,)).copy()
    if min(dims) < 16:
        raise InvalidArgumentError("phantoms need at least 16 voxels per axis")
    if np.any(spacing <= 0) or density <= 0:
        raise InvalidArgumentError("spacing and density must be positive")
    origin = -0.5 * (np.array(dims) - 1) * spacing
    x, y, z = _grid(dims, spacing, origin)
    extent = 0.5 * np.array(dims) * spacing

    if kind == "sphere":
        r = float(params.get("radius", 0.3 * extent.min() * 2))
        c = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=np.float64)
        if r <= 0:
            raise InvalidArgumentError("sphere radius must be positive")
        sd = _sdf_sphere(x, y, z, c, r)
    elif kind == "box":
        half = np.broadcast_to(np.asarray(params.get("half_extents", 0.5 * extent), dtype=np.float64), (3,))
        if np.any(half <= 0):
            raise InvalidArgumentError("box half extents must be positive")
        sd = _sdf_box(x, y, z, (0.0, 0.0, 0.0), half)
    elif kind == "tube":
        r_out = float(params.get("radius", 0.3 * extent[:2].min() * 2))
        r_in = float(params.get("inner_radius", 0.5 * r_out))
        half_len = float(params.get("half_length", 0.7 * extent[2]))
        if r_out <= 0 or half_len <= 0 or not 0 <= r_in < r_out:
            raise InvalidArgumentError("tube needs 0 <= inner_radius < radius and half_length > 0")
        sd = _sdf_tube(x, y, z, (0.0, 0.0, 0.0), r_out, r_in, half_len)
    else:
        r1 = float(params.get("radius", 0.22 * extent.min() * 2))
        r2 = float(params.get("radius2", 0.6 * r1))
        if r1 <= 0 or r2 <= 0:
            raise InvalidArgumentError("sphere radii must be positive")
        sep = float(params.get("separation", 1.1 * (r1 + r2)))
        # centers placed so the pair's bounding interval is centered on the origin
        c1 = np.array([-(sep + r2 - r1) / 2.0, 0.0, 0.0])
        c2 = c1 + np.array([sep, 0.0, 0.0])
        sd = np.minimum(_sdf_sphere(x, y, z, c1, r1), _sdf_sphere(x, y, z, c2, r2))

    h = float(spacing.min())
    occupancy = 0.5 * special.erfc(sd / h)
    occupancy[occupancy < 1e-7] = 0.0
    values = density * occupancy
    if texture:
        k = 2.0 * np.pi / texture_period
        values = values * (1.0 + texture * np.sin(k * x) * np.sin(k * y) * np.sin(k * z))
    return Volume(values.astype(np.float32), spacing, origin)


# -- surface points -----------------------------------------------------------


def volume_gradient(v: Volume) -> np.ndarray:
    """Central-difference gradient (1/mm^2) with one-sided differences at the border."""
    data = v.data.astype(np.float64)
    g = np.gradient(data, *v.spacing, edge_order=1)
    return np.stack(g, axis=-1)


def extract_surface_points(v: Volume, grad_threshold=None, max_points=5000, seed=0) -> SurfacePoints:
    """Voxel centers whose gradient magnitude reaches ``grad_threshold`` (1/mm^2).

    ``grad_threshold=None`` uses 0.3 times the largest gradient magnitude.
    A uniform random subset of at most ``max_points`` is kept, reproducible
    for a given ``seed``; points are returned in voxel order.
    """
    grad = volume_gradient(v)
    mag = np.linalg.norm(grad, axis=-1)
    if grad_threshold is None:
        grad_threshold = 0.3 * float(mag.max())
    idx = np.argwhere(mag >= grad_threshold)
    idx = idx[mag[tuple(idx.T)] > 0]
    if len(idx) == 0:
        raise EmptySurfaceError("no voxel reaches the gradient threshold")
    if max_points is not None and len(idx) > max_points:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(idx), size=int(max_points), replace=False))
        idx = idx[keep]
    g = grad[tuple(idx.T)]
    g = g / np.linalg.norm(g, axis=1, keepdims=True)
    return SurfacePoints(v.voxel_centers(idx), g)


# -- apparent contours --------------------------------------------------------


def contour_alignment(points, T: RigidTransform):
    """Camera-frame points, gradients and ``|g . r|`` for every surface point."""
    pts = SurfacePoints.from_points(points)
    w_cam = T.apply(pts.w_obj)
    g_cam = T.rotate(pts.g_obj)
    dist = np.linalg.norm(w_cam, axis=1)
    cosang = np.abs(np.einsum("ij,ij->i", g_cam, w_cam)) / np.where(dist > 0, dist, 1.0)
    return w_cam, g_cam, cosang


def select_apparent_contours(points, T: RigidTransform, cam: CameraModel, tau=0.15, max_count=800) -> ContourSet:
    """Surface points whose gradient is (nearly) perpendicular to their viewing ray.

    Keeps points with ``|g_cam . r_hat| <= tau`` that lie in front of the
    source. When more than ``max_count`` survive, an evenly strided subset is
    kept so the choice is deterministic.
    """
    pts = SurfacePoints.from_points(points)
    if len(pts) == 0:
        raise InvalidArgumentError("no surface points")
    w_cam, g_cam, cosang = contour_alignment(pts, T)
    keep = (w_cam[:, 2] > 1e-6) & (cosang <= tau)
    index = np.flatnonzero(keep)
    if len(index) < MIN_CONTOUR_POINTS:
        raise InsufficientContoursError(f"only {len(index)} apparent-contour points (need {MIN_CONTOUR_POINTS})")
    if max_count is not None and len(index) > max_count:
        index = index[np.linspace(0, len(index) - 1, int(max_count)).round().astype(int)]
    w = w_cam[index]
    g = g_cam[index]
    g = g / np.linalg.norm(g, axis=1, keepdims=True)
    return ContourSet(w_cam=w, g_cam=g, p=project(cam, w), index=index)


# -- volume file format -------------------------------------------------------

_VOL_MAGIC = "PPCVOL 1"


def write_volume(path, v: Volume):
    """Text header then raw little-endian float32 payload, x fastest."""
    header = (
        f"{_VOL_MAGIC}\n"
        f"dims {v.dims[0]} {v.dims[1]} {v.dims[2]}\n"
        f"spacing {' '.join(f'{s:.17g}' for s in v.spacing)}\n"
        f"origin {' '.join(f'{o:.17g}' for o in v.origin)}\n"
        "dtype f32le\n"
        "end\n"
    )
    payload = np.asarray(v.data, dtype="<f4").tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload)


def _read_header(fh, magic, path):
    fields = {}
    lineno = 0
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise FormatError("unexpected end of header", line=lineno, path=path)
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise FormatError("header is not ASCII", line=lineno, path=path) from None
        if lineno == 1:
            if line != magic:
                raise FormatError(f"expected {magic!r}", line=lineno, path=path)
            continue
        if line == "end":
            return fields
        key, _, rest = line.partition(" ")
        fields[key] = (rest.split(), lineno)


def read_volume(path) -> Volume:
    with open(path, "rb") as fh:
        fields = _read_header(fh, _VOL_MAGIC, path)
        try:
            dims = tuple(int(d) for d in fields["dims"][0])
            spacing = [float(s) for s in fields["spacing"][0]]
            origin = [float(o) for o in fields["origin"][0]]
            dtype = fields["dtype"][0]
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad volume header: {exc}", path=path) from None
        if dtype != ["f32le"]:
            raise FormatError("unsupported data type", line=fields["dtype"][1], path=path)
        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
            raise FormatError("dims/spacing/origin need three values", path=path)
        payload = fh.read()
    n = int(np.prod(dims))
    if len(payload) != 4 * n:
        raise FormatError(f"payload holds {len(payload)} bytes, expected {4 * n}", path=path)
    data = np.frombuffer(payload, dtype="<f4").reshape(dims, order="F")
    return Volume(data.astype(np.float32), spacing, origin)

