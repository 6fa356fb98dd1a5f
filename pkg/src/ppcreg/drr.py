"""Ray-cast digitally reconstructed radiographs and the image file formats."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import FormatError, InvalidArgumentError, NothingVisibleError
from .geometry import CameraModel, RigidTransform
from .volume import ContourSet, Volume, _read_header


@dataclass(frozen=True, eq=False)
class Image2D:
    """Detector image; ``data[v, u]`` is the pixel in row ``v``, column ``u``."""

    data: np.ndarray
    pixel_spacing: float = 0.616

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise InvalidArgumentError("image data must be 2D")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]


@numba.njit(cache=True, inline="always")
def _trilinear(data, fx, fy, fz):
    nx, ny, nz = data.shape
    i0 = int(np.floor(fx))
    j0 = int(np.floor(fy))
    k0 = int(np.floor(fz))
    tx = fx - i0
    ty = fy - j0
    tz = fz - k0
    acc = 0.0
    for di in range(2):
        i = i0 + di
        if i < 0 or i >= nx:
            continue
        wx = tx if di else 1.0 - tx
        for dj in range(2):
            j = j0 + dj
            if j < 0 or j >= ny:
                continue
            wy = ty if dj else 1.0 - ty
            for dk in range(2):
                k = k0 + dk
                if k < 0 or k >= nz:
                    continue
                wz = tz if dk else 1.0 - tz
                acc += wx * wy * wz * data[i, j, k]
    return acc


@numba.njit(cache=True, inline="always")
def _slab(src, d, lo, hi):
    """Parameter interval (t_near, t_far) of the ray inside an axis-aligned box, t >= 0."""
    t_near = 0.0
    t_far = np.inf
    for a in range(3):
        if abs(d[a]) < 1e-12:
            if src[a] < lo[a] or src[a] > hi[a]:
                return 0.0, -1.0
        else:
            ta = (lo[a] - src[a]) / d[a]
            tb = (hi[a] - src[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            t_near = max(t_near, ta)
            t_far = min(t_far, tb)
    return t_near, t_far


@numba.njit(cache=True, parallel=True)
def _render_kernel(data, origin, spacing, box_lo, box_hi, rot_t, src, focal, principal, u0, u1, v0, v1, step, out):
    # samples sit on a per-ray grid anchored at the entry into [box_lo, box_hi]
    # (the full volume), so cropping ``data`` never moves them
    lo = origin - spacing
    hi = origin + spacing * np.array(data.shape, dtype=np.float64)
    for v in numba.prange(v0, v1):
        for u in range(u0, u1):
            # camera-frame ray direction, then into the object frame
            cx = (u - principal[0]) / focal[0]
            cy = (v - principal[1]) / focal[1]
            nrm = np.sqrt(cx * cx + cy * cy + 1.0)
            dc0 = cx / nrm
            dc1 = cy / nrm
            dc2 = 1.0 / nrm
            d = np.empty(3)
            for a in range(3):
                d[a] = rot_t[a, 0] * dc0 + rot_t[a, 1] * dc1 + rot_t[a, 2] * dc2
            t_near, t_far = _slab(src, d, lo, hi)
            if t_far <= t_near:
                out[v, u] = 0.0
                continue
            t0, _ = _slab(src, d, box_lo, box_hi)
            s0 = max(0, int(np.floor((t_near - t0) / step)))
            s1 = int(np.ceil((t_far - t0) / step))
            acc = 0.0
            for s in range(s0, s1):
                t = t0 + (s + 0.5) * step
                fx = (src[0] + t * d[0] - origin[0]) / spacing[0]
                fy = (src[1] + t * d[1] - origin[1]) / spacing[1]
                fz = (src[2] + t * d[2] - origin[2]) / spacing[2]
                acc += _trilinear(data, fx, fy, fz)
            out[v, u] = acc * step


def _support(v: Volume):
    """Smallest sub-volume holding every non-zero voxel, or None if all zero."""
    nz = [np.flatnonzero(np.any(v.data, axis=tuple(b for b in range(3) if b != a))) for a in range(3)]
    if any(len(ix) == 0 for ix in nz):
        return None
    lo = [int(ix[0]) for ix in nz]
    hi = [int(ix[-1]) + 1 for ix in nz]
    if lo == [0, 0, 0] and hi == list(v.dims):
        return v
    data = v.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    if min(data.shape) < 2:
        data = np.pad(data, [(0, max(0, 2 - n)) for n in data.shape])
    return Volume(data, v.spacing, v.origin + v.spacing * np.array(lo))


def _footprint(v: Volume, T: RigidTransform, cam: CameraModel):
    """Pixel rectangle [u0, u1) x [v0, v1) that can receive non-zero rays."""
    lo = v.origin - v.spacing
    hi = v.origin + v.spacing * np.array(v.dims)
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    cc = T.apply(corners)
    if np.all(cc[:, 2] <= 0):
        raise NothingVisibleError("volume lies entirely behind the source")
    w, h = cam.detector_res
    if np.any(cc[:, 2] <= 1e-6):
        return 0, w, 0, h
    p = cam.principal_point_px + cam.focal_px * cc[:, :2] / cc[:, 2:3]
    u0 = int(np.clip(np.floor(p[:, 0].min()) - 1, 0, w))
    u1 = int(np.clip(np.ceil(p[:, 0].max()) + 2, 0, w))
    v0 = int(np.clip(np.floor(p[:, 1].min()) - 1, 0, h))
    v1 = int(np.clip(np.ceil(p[:, 1].max()) + 2, 0, h))
    return u0, u1, v0, v1


def render_drr(v: Volume, T: RigidTransform, cam: CameraModel, step_mm=None) -> Image2D:
    """Line integral of attenuation along the ray through every pixel center.

    Samples are taken by trilinear interpolation at the midpoints of
    ``step_mm`` intervals between the ray's entry and exit of the (zero padded)
    volume box. Pixels whose ray misses the box are exactly zero. All-zero
    margins of the volume are cropped before marching.
    """
    if step_mm is None:
        step_mm = 0.5 * float(v.spacing.min())
    if not step_mm > 0:
        raise InvalidArgumentError("step_mm must be positive")
    w, h = cam.detector_res
    out = np.zeros((h, w), dtype=np.float64)
    _footprint(v, T, cam)
    box_lo = v.origin - v.spacing
    box_hi = v.origin + v.spacing * np.array(v.dims)
    crop = _support(v)
    if crop is None:
        return Image2D(out, cam.pixel_spacing)
    u0, u1, v0, v1 = _footprint(crop, T, cam)
    if u1 > u0 and v1 > v0:
        rot_t = np.ascontiguousarray(T.rotation.T)
        src = -rot_t @ T.translation
        _render_kernel(
            np.ascontiguousarray(crop.data),
            np.asarray(crop.origin, dtype=np.float64),
            np.asarray(crop.spacing, dtype=np.float64),
            box_lo,
            box_hi,
            rot_t,
            src,
            np.asarray(cam.focal_px, dtype=np.float64),
            np.asarray(cam.principal_point_px, dtype=np.float64),
            u0, u1, v0, v1,
            float(step_mm),
            out,
        )
    return Image2D(out, cam.pixel_spacing)


def render_overlay(i_flr: Image2D, contours: ContourSet) -> Image2D:
    """Copy of ``i_flr`` with the pixel under each projected contour point set to ``1.1 * max``."""
    data = np.array(i_flr.data, dtype=np.float32)
    peak = float(data.max())
    sentinel = 1.1 * peak if peak > 0 else 1.0
    if len(contours):
        px = np.rint(contours.p).astype(np.int64)
        ok = (px[:, 0] >= 0) & (px[:, 0] < i_flr.width) & (px[:, 1] >= 0) & (px[:, 1] < i_flr.height)
        px = px[ok]
        data[px[:, 1], px[:, 0]] = sentinel
    return Image2D(data, i_flr.pixel_spacing)


# -- image files --------------------------------------------------------------

_IMG_MAGIC = "PPCIMG 1"


def write_image(path, img: Image2D):
    header = (
        f"{_IMG_MAGIC}\n"
        f"size {img.width} {img.height}\n"
        f"pixel_spacing {img.pixel_spacing:.17g}\n"
        "dtype f32le\n"
        "end\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.asarray(img.data, dtype="<f4").tobytes(order="C"))


def read_image(path) -> Image2D:
    with open(path, "rb") as fh:
        fields = _read_header(fh, _IMG_MAGIC, path)
        try:
            width, height = (int(s) for s in fields["size"][0])
            spacing = float(fields["pixel_spacing"][0][0])
            dtype = fields["dtype"][0]
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad image header: {exc}", path=path) from None
        if dtype != ["f32le"]:
            raise FormatError("unsupported data type", line=fields["dtype"][1], path=path)
        payload = fh.read()
    if len(payload) != 4 * width * height:
        raise FormatError(f"payload holds {len(payload)} bytes, expected {4 * width * height}", path=path)
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return Image2D(data.astype(np.float32), spacing)


def write_pgm(path, img: Image2D):
    """16-bit binary PGM, min-max normalized (for viewing only)."""
    data = np.asarray(img.data, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    scaled = np.zeros_like(data) if hi <= lo else (data - lo) / (hi - lo)
    pix = np.rint(scaled * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n65535\n".encode("ascii"))
        fh.write(pix.tobytes())
