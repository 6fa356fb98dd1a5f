"""Standardized 2D/3D registration evaluation: sampling, SR, capture range, batch runs."""

from __future__ import annotations

import logging
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .drr import render_drr
from .errors import InfeasibleRangesError, InvalidArgumentError, PPCError
from .geometry import RigidTransform, compose, rotation_from_euler_deg
from .metrics import mrpd, mtre
from .registration import LoopConfig, make_estimator, register
from .volume import SurfacePoints

log = logging.getLogger(__name__)

RECORD_HEADER = "case_id,view,mtre_init_mm,mrpd_final_mm,status,iterations,wall_time_s"
MAX_DRAWS = 100_000


@dataclass(frozen=True)
class SamplingRanges:
    """Per-axis perturbation bounds: translation in mm, rotation in degrees.

    With ``scaled=True`` every draw first picks a magnitude factor uniformly
    in [0, 1] and scales the per-axis bounds by it, so small initial errors
    are sampled as often as large ones.
    """

    trans_range: float = 60.0
    rot_range: float = 40.0
    mtre_max: float = 60.0
    n_samples: int = 600
    seed: int = 0
    scaled: bool = True

    def __post_init__(self):
        if self.trans_range < 0 or self.rot_range < 0 or self.mtre_max < 0:
            raise InvalidArgumentError("sampling ranges must be non-negative")
        if self.n_samples < 1:
            raise InvalidArgumentError("n_samples must be >= 1")


@dataclass(frozen=True, eq=False)
class InitialSample:
    T_init: RigidTransform
    mtre_mm: float


def perturb(T_gt: RigidTransform, angles_deg, trans_mm, center_obj) -> RigidTransform:
    """Rotate about the (camera-frame) position of ``center_obj``, then translate."""
    R = rotation_from_euler_deg(angles_deg)
    c = T_gt.apply(center_obj)
    delta = RigidTransform(R, c - R @ c + np.asarray(trans_mm, dtype=np.float64))
    return compose(delta, T_gt)


def sample_initial_transforms(T_gt: RigidTransform, ranges: SamplingRanges, targets, seed=None):
    """Random initial poses around ``T_gt`` whose mTRE does not exceed ``ranges.mtre_max``.

    Rotations are about the targets' centroid. ``seed`` overrides
    ``ranges.seed`` and may be anything :func:`numpy.random.default_rng` accepts.
    """
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 3)
    if len(targets) == 0:
        raise InvalidArgumentError("no target points")
    rng = np.random.default_rng(ranges.seed if seed is None else seed)
    center = targets.mean(axis=0)
    out = []
    draws = 0
    while len(out) < ranges.n_samples:
        if draws >= MAX_DRAWS and len(out) < 0.01 * draws:
            raise InfeasibleRangesError(f"only {len(out)} of {draws} draws satisfied mtre <= {ranges.mtre_max}")
        draws += 1
        scale = rng.uniform() if ranges.scaled else 1.0
        trans = scale * rng.uniform(-ranges.trans_range, ranges.trans_range, 3)
        ang = scale * rng.uniform(-ranges.rot_range, ranges.rot_range, 3)
        T = perturb(T_gt, ang, trans, center)
        e = mtre(T, T_gt, targets)
        if e <= ranges.mtre_max:
            out.append(InitialSample(T, e))
    return out


# -- records and aggregates -----------------------------------------------------


@dataclass(frozen=True)
class CaseRecord:
    case_id: int
    view: str
    mtre_init_mm: float
    mrpd_final_mm: float
    status: str
    iterations: int
    wall_time_s: float = 0.0


def is_success(rec: CaseRecord, threshold_mm=2.0) -> bool:
    return (
        rec.status in ("converged", "max-iterations")
        and rec.mrpd_final_mm is not None
        and math.isfinite(rec.mrpd_final_mm)
        and rec.mrpd_final_mm <= threshold_mm
    )


def success_ratio(records, threshold_mm=2.0) -> float:
    records = list(records)
    if not records:
        raise InvalidArgumentError("success_ratio needs at least one record")
    return sum(is_success(r, threshold_mm) for r in records) / len(records)


@dataclass(frozen=True)
class CaptureRange:
    lo: float
    hi: float
    empty_bins: tuple = ()

    def __str__(self):
        if self.hi == 0:
            return "0"
        return f"{self.lo:g}-{self.hi:g}"


def capture_range(records, bin_mm=5.0, sr_min=0.95, threshold_mm=2.0) -> CaptureRange:
    """Highest initial-error interval up to which every populated bin reaches ``sr_min``.

    Records are binned by initial mTRE into ``[0, bin), [bin, 2 bin), ...``.
    Scanning upward, the range ends before the first populated bin whose
    success ratio is below ``sr_min``; empty bins are skipped and reported.
    A failure in the first bin gives the empty range ``0``.
    """
    records = list(records)
    if not records:
        raise InvalidArgumentError("capture_range needs at least one record")
    bins = {}
    for r in records:
        bins.setdefault(int(math.floor(r.mtre_init_mm / bin_mm)), []).append(r)
    top = max(bins)
    k = top + 1
    empty = []
    for j in range(top + 1):
        members = bins.get(j)
        if not members:
            empty.append(j)
            continue
        if success_ratio(members, threshold_mm) < sr_min:
            k = j
            break
    empty = tuple((j * bin_mm, (j + 1) * bin_mm) for j in empty if j < k)
    if k == 0:
        return CaptureRange(0.0, 0.0, empty)
    return CaptureRange((k - 1) * bin_mm, k * bin_mm, empty)


@dataclass(frozen=True, eq=False)
class EvalReport:
    records: list
    aggregates: dict = field(default_factory=dict)


def aggregate(records, threshold_mm=2.0, bin_mm=5.0, sr_min=0.95) -> dict:
    records = sorted(records, key=lambda r: r.case_id)
    ok = [r.mrpd_final_mm for r in records if is_success(r, threshold_mm)]
    times = [r.wall_time_s for r in records]
    cr = capture_range(records, bin_mm, sr_min, threshold_mm)
    return {
        "n_cases": len(records),
        "threshold_mm": threshold_mm,
        "success_ratio": success_ratio(records, threshold_mm),
        "mrpd_mean_mm": float(np.mean(ok)) if ok else float("nan"),
        "mrpd_std_mm": float(np.std(ok)) if ok else float("nan"),
        "mrpd_median_mm": float(np.median(ok)) if ok else float("nan"),
        "capture_range_mm": str(cr),
        "capture_range_empty_bins": ";".join(f"{lo:g}-{hi:g}" for lo, hi in cr.empty_bins),
        "runtime_mean_s": float(np.mean(times)),
        "runtime_std_s": float(np.std(times)),
        "mrpd_over": "successful cases",
    }


def summary_row(agg: dict) -> str:
    """One Table-1 style line: mRPD mean +- std, SR, CR, runtime."""
    return (
        f"mRPD {agg['mrpd_mean_mm']:.2f} +- {agg['mrpd_std_mm']:.2f} mm | "
        f"SR {100 * agg['success_ratio']:.1f} % | CR {agg['capture_range_mm']} mm | "
        f"runtime {agg['runtime_mean_s']:.2f} +- {agg['runtime_std_s']:.2f} s"
    )


def _fmt(x):
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return "nan"
    return f"{x:.10g}"


def format_records(report: EvalReport, include_timing=True) -> str:
    lines = [RECORD_HEADER]
    for r in report.records:
        wt = _fmt(r.wall_time_s) if include_timing else "0"
        lines.append(
            f"{r.case_id},{r.view},{_fmt(r.mtre_init_mm)},{_fmt(r.mrpd_final_mm)},{r.status},{r.iterations},{wt}"
        )
    for key, val in report.aggregates.items():
        if key.startswith("runtime") and not include_timing:
            continue
        lines.append(f"# {key}={_fmt(val) if isinstance(val, float) else val}")
    return "\n".join(lines) + "\n"


def write_records(path, report: EvalReport, include_timing=True):
    Path(path).write_text(format_records(report, include_timing))


def read_records(path):
    out = []
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != RECORD_HEADER:
        raise InvalidArgumentError(f"{path}: missing record header")
    for line in lines[1:]:
        if not line or line.startswith("#"):
            continue
        cid, view, m0, m1, status, it, wt = line.split(",")
        out.append(CaseRecord(int(cid), view, float(m0), float(m1), status, int(it), float(wt)))
    return out


# -- batch execution ------------------------------------------------------------

_WORKER = {}


def _init_worker(shared):
    _WORKER.clear()
    _WORKER.update(shared)
    try:
        import numba

        numba.set_num_threads(1)
    except Exception:  # pragma: no cover - numba threading layer unavailable
        pass


def _run_case(task):
    case_id, view_name, T_gt, T_init, mtre0, noise_seed = task
    s = _WORKER
    cfg = replace(s["loop_cfg"], noise_seed=noise_seed)
    start = time.perf_counter()
    est = make_estimator(cfg, s["cam"], T_gt)
    result = register(
        s["volume"], s["surface"], s["flr"].get(view_name), T_init, s["cam"], cfg,
        T_gt=None, estimator=est,
    )
    try:
        final = mrpd(result.t_final, T_gt, s["targets"], s["cam"]) if result.succeeded else float("nan")
    except PPCError:
        final = float("nan")
        result = replace(result, status="failed")
    elapsed = time.perf_counter() - start
    return CaseRecord(case_id, view_name, mtre0, final, result.status, result.iterations_run, elapsed)


def case_seed(seed, case_id) -> int:
    """Per-case seed that depends only on (global seed, case index)."""
    return int(np.random.SeedSequence([int(seed), int(case_id)]).generate_state(1)[0])


def run_benchmark(v, surface, cam, views, ranges: SamplingRanges, loop_cfg: LoopConfig, parallelism=1, targets=None, threshold_mm=2.0) -> EvalReport:
    """Register ``n_samples`` random initial poses per view and aggregate the outcome.

    ``views`` is a list of ``(name, T_gt)``. Case ``k`` of view ``i`` gets id
    ``i * n_samples + k`` and its own noise seed, so records do not depend on
    ``parallelism``.
    """
    surface = SurfacePoints.from_points(surface)
    targets = surface.w_obj if targets is None else np.asarray(targets, dtype=np.float64)
    needs_images = make_estimator(loop_cfg, cam, views[0][1]).needs_images
    tasks = []
    flr = {}
    for vi, (name, T_gt) in enumerate(views):
        if needs_images:
            flr[name] = render_drr(v, T_gt, cam, loop_cfg.step_mm)
        samples = sample_initial_transforms(T_gt, ranges, targets, seed=np.random.SeedSequence([ranges.seed, vi]))
        for k, s in enumerate(samples):
            cid = vi * ranges.n_samples + k
            tasks.append((cid, name, T_gt, s.T_init, s.mtre_mm, case_seed(ranges.seed, cid)))
    shared = {"volume": v, "surface": surface, "cam": cam, "loop_cfg": loop_cfg, "flr": flr, "targets": targets}

    if parallelism <= 1:
        _WORKER.clear()
        _WORKER.update(shared)
        records = [_run_case(t) for t in tasks]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(parallelism, mp_context=ctx, initializer=_init_worker, initargs=(shared,)) as pool:
            chunk = max(1, len(tasks) // (4 * parallelism))
            records = list(pool.map(_run_case, tasks, chunksize=chunk))
    records.sort(key=lambda r: r.case_id)
    return EvalReport(records, aggregate(records, threshold_mm))
