"""2D correspondence estimators at projected contour points, and weighting."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numba
import numpy as np

from .errors import FormatError, InvalidArgumentError
from .geometry import CameraModel, RigidTransform, compose
from .volume import ContourSet

HEADER = "index,p_x,p_y,pprime_x,pprime_y,valid,score"


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Matches ``p -> p_prime`` (pixels); invalid rows carry score 0."""

    p: np.ndarray
    p_prime: np.ndarray
    valid: np.ndarray
    score: np.ndarray

    def __len__(self):
        return len(self.p)

    @property
    def flow(self):
        return self.p_prime - self.p


@dataclass(frozen=True, eq=False)
class WeightVector:
    w_diag: np.ndarray

    def __len__(self):
        return len(self.w_diag)


def _finalize(p, p_prime, valid, score):
    valid = np.asarray(valid, dtype=bool)
    score = np.where(valid, np.asarray(score, dtype=np.float64), 0.0)
    return CorrespondenceSet(
        np.asarray(p, dtype=np.float64), np.asarray(p_prime, dtype=np.float64), valid, score
    )


# -- oracle -------------------------------------------------------------------


def oracle_correspondences(contours: ContourSet, T_i: RigidTransform, T_gt: RigidTransform, cam: CameraModel) -> CorrespondenceSet:
    """Ground-truth matches: where each contour point projects under ``T_gt``."""
    delta = compose(T_gt, T_i.inverse())
    x_gt = delta.apply(contours.w_cam)
    z = x_gt[:, 2]
    front = z > 1e-6
    p_prime = np.full_like(contours.p, np.nan)
    p_prime[front] = cam.principal_point_px + cam.focal_px * x_gt[front, :2] / z[front, None]
    valid = front & cam.on_detector(np.where(front[:, None], p_prime, -1e9))
    p_prime = np.where(valid[:, None], p_prime, contours.p)
    return _finalize(contours.p, p_prime, valid, valid.astype(np.float64))


def add_correspondence_noise(c: CorrespondenceSet, sigma_px=0.0, outlier_frac=0.0, outlier_mag_px=0.0, seed=0) -> CorrespondenceSet:
    """Gaussian jitter on valid matches plus a random subset of gross outliers.

    ``floor(outlier_frac * N)`` rows get an extra offset with uniformly random
    direction and magnitude uniform in ``[0, outlier_mag_px]``. Scores are left
    untouched.
    """
    n = len(c)
    if sigma_px == 0 and outlier_frac == 0:
        return c
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma_px, size=(n, 2)) if sigma_px > 0 else np.zeros((n, 2))
    n_out = int(math.floor(outlier_frac * n))
    if n_out > 0:
        rows = rng.choice(n, size=n_out, replace=False)
        ang = rng.uniform(0.0, 2.0 * np.pi, size=n_out)
        mag = rng.uniform(0.0, outlier_mag_px, size=n_out)
        noise[rows] += mag[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])
    p_prime = np.where(c.valid[:, None], c.p_prime + noise, c.p_prime)
    return replace(c, p_prime=p_prime)


# -- patch matching -----------------------------------------------------------


@dataclass(frozen=True)
class PatchMatchConfig:
    patch_radius_px: int = 5
    search_radius_px: int = 20
    min_ncc: float = 0.3


@numba.njit(cache=True, fastmath=True)
def _ncc_surface(drr, flr, cu, cv, r, s, out):
    """NCC between the drr patch at (cu, cv) and flr patches at every offset.

    Returns False when the template has no variance. Offsets whose flr patch
    leaves the image stay at -2; flr patches with (relatively) no variance
    score 0.
    """
    h, w = drr.shape
    size = 2 * r + 1
    npx = size * size
    tmpl = np.empty((size, size))
    mean_t = 0.0
    for a in range(size):
        for b in range(size):
            tmpl[a, b] = drr[cv - r + a, cu - r + b]
            mean_t += tmpl[a, b]
    mean_t /= npx
    var_t = 0.0
    for a in range(size):
        for b in range(size):
            tmpl[a, b] -= mean_t
            var_t += tmpl[a, b] * tmpl[a, b]
    out[:, :] = -2.0
    if var_t <= 1e-20:
        return False
    for dv in range(-s, s + 1):
        v0 = cv + dv - r
        if v0 < 0 or v0 + size > h:
            continue
        for du in range(-s, s + 1):
            u0 = cu + du - r
            if u0 < 0 or u0 + size > w:
                continue
            # window statistics relative to the window center keep the
            # variance free of cancellation
            k = flr[v0 + r, u0 + r]
            sum_f = 0.0
            sum_ff = 0.0
            sum_tf = 0.0
            for a in range(size):
                for b in range(size):
                    f = flr[v0 + a, u0 + b] - k
                    sum_f += f
                    sum_ff += f * f
                    sum_tf += tmpl[a, b] * f
            var_f = sum_ff - sum_f * sum_f / npx
            if var_f <= 1e-10 * var_t:
                out[dv + s, du + s] = 0.0
            else:
                out[dv + s, du + s] = min(1.0, max(-1.0, sum_tf / math.sqrt(var_t * var_f)))
    return True


@numba.njit(cache=True, parallel=True)
def _match_all(drr, flr, centers, r, s, best, ok):
    n = centers.shape[0]
    for i in numba.prange(n):
        surf = np.empty((2 * s + 1, 2 * s + 1))
        ok[i] = _ncc_surface(drr, flr, centers[i, 0], centers[i, 1], r, s, surf)
        if not ok[i]:
            continue
        bv = 0
        bu = 0
        peak = -3.0
        for a in range(2 * s + 1):
            for b in range(2 * s + 1):
                if surf[a, b] > peak:
                    peak = surf[a, b]
                    bv = a
                    bu = b
        sub_u = 0.0
        sub_v = 0.0
        if 0 < bu < 2 * s and surf[bv, bu - 1] > -2 and surf[bv, bu + 1] > -2:
            den = surf[bv, bu - 1] - 2.0 * peak + surf[bv, bu + 1]
            if den < 0:
                sub_u = min(0.5, max(-0.5, 0.5 * (surf[bv, bu - 1] - surf[bv, bu + 1]) / den))
        if 0 < bv < 2 * s and surf[bv - 1, bu] > -2 and surf[bv + 1, bu] > -2:
            den = surf[bv - 1, bu] - 2.0 * peak + surf[bv + 1, bu]
            if den < 0:
                sub_v = min(0.5, max(-0.5, 0.5 * (surf[bv - 1, bu] - surf[bv + 1, bu]) / den))
        best[i, 0] = bu - s + sub_u
        best[i, 1] = bv - s + sub_v
        best[i, 2] = peak


def patch_match_correspondences(i_drr, i_flr, contours: ContourSet, cfg: PatchMatchConfig = PatchMatchConfig()) -> CorrespondenceSet:
    """Exhaustive NCC block matching around each projected contour point.

    The template is the ``(2r+1)^2`` DRR patch centered on the pixel nearest
    to ``p``; every integer offset within ``search_radius_px`` is scored in
    the fluoroscopy image and the peak is refined by 1D parabola fits along
    each axis.
    """
    if i_drr.data.shape != i_flr.data.shape:
        raise InvalidArgumentError("DRR and fluoroscopy images differ in size")
    r, s = int(cfg.patch_radius_px), int(cfg.search_radius_px)
    h, w = i_drr.data.shape
    p = contours.p
    centers = np.rint(p).astype(np.int64)
    inside = (centers[:, 0] >= r) & (centers[:, 0] < w - r) & (centers[:, 1] >= r) & (centers[:, 1] < h - r)
    best = np.zeros((len(p), 3))
    ok = np.zeros(len(p), dtype=np.bool_)
    idx = np.flatnonzero(inside)
    if len(idx):
        sub_best = np.zeros((len(idx), 3))
        sub_ok = np.zeros(len(idx), dtype=np.bool_)
        _match_all(
            np.ascontiguousarray(i_drr.data, dtype=np.float64),
            np.ascontiguousarray(i_flr.data, dtype=np.float64),
            np.ascontiguousarray(centers[idx]),
            r, s, sub_best, sub_ok,
        )
        best[idx] = sub_best
        ok[idx] = sub_ok
    p_prime = p + best[:, :2]
    ncc = best[:, 2]
    valid = ok & (ncc >= cfg.min_ncc) & np.all(np.isfinite(p_prime), axis=1)
    valid &= (p_prime[:, 0] >= 0) & (p_prime[:, 0] <= w - 1) & (p_prime[:, 1] >= 0) & (p_prime[:, 1] <= h - 1)
    p_prime = np.where(valid[:, None], p_prime, p)
    return _finalize(p, p_prime, valid, np.clip(ncc, 0.0, 1.0))


# -- exchange format ----------------------------------------------------------


def save_correspondences(path, c: CorrespondenceSet):
    lines = [HEADER]
    for i in range(len(c)):
        lines.append(
            f"{i},{c.p[i, 0]:.17g},{c.p[i, 1]:.17g},{c.p_prime[i, 0]:.17g},{c.p_prime[i, 1]:.17g},"
            f"{int(c.valid[i])},{c.score[i]:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_external_correspondences(path, contours: ContourSet) -> CorrespondenceSet:
    """Read the comma-separated exchange file; rows are matched to contours by index."""
    lines = Path(path).read_text().splitlines()
    if not lines or [h.strip() for h in lines[0].split(",")] != HEADER.split(","):
        raise FormatError(f"expected header {HEADER!r}", line=1, path=path)
    n = len(contours)
    p = np.full((n, 2), np.nan)
    pp = np.full((n, 2), np.nan)
    valid = np.zeros(n, dtype=bool)
    score = np.zeros(n)
    seen = np.zeros(n, dtype=bool)
    rows = 0
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = [t.strip() for t in line.split(",")]
        if len(parts) != 7:
            raise FormatError(f"expected 7 fields, found {len(parts)}", line=lineno, path=path)
        try:
            idx = int(parts[0])
            vals = [float(t) for t in parts[1:5]]
            flag = int(parts[5])
            sc = float(parts[6])
        except ValueError:
            raise FormatError("malformed row", line=lineno, path=path) from None
        if not all(math.isfinite(v) for v in vals + [sc]):
            raise FormatError("non-finite value", line=lineno, path=path)
        if flag not in (0, 1) or not 0.0 <= sc <= 1.0:
            raise FormatError("valid must be 0/1 and score within [0, 1]", line=lineno, path=path)
        if not 0 <= idx < n or seen[idx]:
            raise FormatError(f"index {idx} out of range or repeated", line=lineno, path=path)
        rows += 1
        seen[idx] = True
        p[idx] = vals[:2]
        pp[idx] = vals[2:]
        valid[idx] = bool(flag)
        score[idx] = sc
    if rows != n:
        raise FormatError(f"count mismatch: {rows} rows for {n} contour points", path=path)
    return _finalize(contours.p.copy(), pp, valid, score)


# -- weighting ----------------------------------------------------------------


def weight_correspondences(c: CorrespondenceSet, strategy="uniform", delta_px=3.0, prior_flow=None) -> WeightVector:
    """Per-correspondence weights in [0, 1]; invalid rows are always 0.

    ``residual-robust`` applies a Huber-style weight ``min(1, delta / e)``
    where ``e`` is the distance of a match's flow from the reference flow:
    ``prior_flow`` per row when given, otherwise the per-axis median over
    valid rows.
    """
    valid = np.asarray(c.valid, dtype=bool)
    if strategy == "uniform":
        w = np.ones(len(c))
    elif strategy == "score":
        w = np.clip(c.score, 0.0, 1.0)
    elif strategy == "residual-robust":
        flow = c.flow
        if prior_flow is not None:
            ref = np.asarray(prior_flow, dtype=np.float64).reshape(-1, 2)
        elif valid.any():
            ref = np.median(flow[valid], axis=0)
        else:
            ref = np.zeros(2)
        e = np.linalg.norm(flow - ref, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(e > delta_px, delta_px / e, 1.0)
    else:
        raise InvalidArgumentError(f"unknown weighting strategy {strategy!r}")
    w = np.where(valid, w, 0.0)
    w = np.where(np.isfinite(w), w, 0.0)
    return WeightVector(w)
