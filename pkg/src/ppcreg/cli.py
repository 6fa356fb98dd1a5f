"""Command-line entry points: make-phantom, render, register, evaluate.

Exit codes: 0 on success (including a soft-failed registration), 1 on an
internal or I/O error, 2 on a usage error (bad flags, bad input files).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, view_pose
from .correspondence import PatchMatchConfig
from .drr import read_image, render_drr, render_overlay, write_image, write_pgm
from .errors import FormatError, InvalidArgumentError, PPCError
from .evaluation import run_benchmark, summary_row, write_records, EvalReport
from .geometry import CameraModel, pose_from_params, read_pose, write_pose
from .metrics import mrpd
from .registration import ESTIMATORS, WEIGHTINGS, LoopConfig, register
from .solver import SolverConfig
from .volume import (
    PHANTOM_KINDS,
    extract_surface_points,
    make_phantom,
    read_volume,
    select_apparent_contours,
    write_volume,
)

log = logging.getLogger("ppcreg")

TRACE_HEADER = "iteration,omega_x,omega_y,omega_z,t_x,t_y,t_z,num_correspondences,mean_flow_px,mrpd_mm"


class UsageError(Exception):
    pass


def _pose_arg(params, path, depth, what):
    if params is not None and path is not None:
        raise UsageError(f"give either --{what} or --{what}-file, not both")
    if path is not None:
        return read_pose(path)
    if params is not None:
        return pose_from_params(params[:3], params[3:])
    return view_pose("ap", depth)


def _camera(args) -> CameraModel:
    return CameraModel.default(args.width, args.height, args.pixel_spacing, args.sdd)


def _add_camera(p):
    g = p.add_argument_group("camera")
    g.add_argument("--width", type=int, default=616, help="detector columns (default 616)")
    g.add_argument("--height", type=int, default=480, help="detector rows (default 480)")
    g.add_argument("--pixel-spacing", type=float, default=0.616, help="mm per pixel (default 0.616)")
    g.add_argument("--sdd", type=float, default=1200.0, help="source to detector distance in mm (default 1200)")


def _add_surface(p):
    g = p.add_argument_group("surface points")
    g.add_argument("--grad-threshold", type=float, default=None, help="gradient magnitude cut (default 0.3 x max)")
    g.add_argument("--max-points", type=int, default=5000)
    g.add_argument("--surface-seed", type=int, default=0)
    g.add_argument("--tau", type=float, default=0.15, help="apparent-contour band |cos| <= tau")
    g.add_argument("--max-contours", type=int, default=800)


# -- commands -------------------------------------------------------------------


def cmd_make_phantom(args):
    params = {}
    for key in ("radius", "radius2", "separation", "inner_radius", "half_length", "half_extents"):
        val = getattr(args, key)
        if val is not None:
            params[key] = val
    v = make_phantom(args.kind, args.dims, args.spacing, args.density, args.texture, **params)
    write_volume(args.output, v)
    print(f"dims {v.dims[0]} {v.dims[1]} {v.dims[2]}  range [{float(v.data.min()):.6g}, {float(v.data.max()):.6g}]")
    return 0


def cmd_render(args):
    v = read_volume(args.volume)
    cam = _camera(args)
    T = _pose_arg(args.pose, args.pose_file, args.depth, "pose")
    img = render_drr(v, T, cam, args.step)
    out = Path(args.output)
    write_image(out.with_suffix(".img"), img)
    write_pgm(out.with_suffix(".pgm"), img)
    if args.overlay:
        surface = extract_surface_points(v, args.grad_threshold, args.max_points, args.surface_seed)
        contours = select_apparent_contours(surface, T, cam, args.tau, args.max_contours)
        ov = render_overlay(img, contours)
        write_image(out.with_name(out.stem + "_overlay.img"), ov)
        write_pgm(out.with_name(out.stem + "_overlay.pgm"), ov)
    print(f"wrote {out.with_suffix('.img')}  max {float(img.data.max()):.6g}")
    return 0


def _write_trace(path, result):
    lines = [TRACE_HEADER]
    for k, rec in enumerate(result.trace):
        vals = list(rec.dv.omega) + list(rec.dv.trans)
        err = "nan" if rec.mrpd_mm is None else f"{rec.mrpd_mm:.10g}"
        lines.append(
            f"{k}," + ",".join(f"{x:.10g}" for x in vals) + f",{rec.num_correspondences},{rec.mean_flow_px:.10g},{err}"
        )
    lines.append(f"# status={result.status}")
    lines.append(f"# iterations={result.iterations_run}")
    if result.reason:
        lines.append(f"# reason={result.reason}")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_register(args):
    v = read_volume(args.volume)
    i_flr = read_image(args.fluoro)
    cam = _camera(args)
    if (i_flr.width, i_flr.height) != cam.detector_res:
        raise UsageError(f"image is {i_flr.width}x{i_flr.height} but the camera is {cam.width}x{cam.height}")
    T_init = _pose_arg(args.init, args.init_file, args.depth, "init")
    T_gt = read_pose(args.gt) if args.gt else None
    if args.estimator == "oracle" and T_gt is None:
        raise UsageError("--estimator oracle needs --gt")
    if args.estimator == "external" and args.external_dir is None:
        raise UsageError("--estimator external needs --external-dir")
    cfg = LoopConfig(
        max_iterations=args.max_iterations,
        rot_tol=args.rot_tol,
        trans_tol=args.trans_tol,
        estimator=args.estimator,
        weighting=args.weighting,
        delta_px=args.delta_px,
        tau=args.tau,
        max_contours=args.max_contours,
        solver=SolverConfig(args.tikhonov_lambda),
        step_mm=args.step,
        patch=PatchMatchConfig(args.patch_radius, args.search_radius, args.min_ncc),
        noise_sigma_px=args.noise_sigma,
        outlier_frac=args.outlier_frac,
        outlier_mag_px=args.outlier_mag,
        noise_seed=args.seed,
        external_dir=args.external_dir,
    )
    surface = extract_surface_points(v, args.grad_threshold, args.max_points, args.surface_seed)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)

    def save_overlay(k, step):
        if k < args.overlays:
            ov = render_overlay(i_flr, step.diagnostics["contours"])
            write_image(outdir / f"overlay_{k:03d}.img", ov)
            write_pgm(outdir / f"overlay_{k:03d}.pgm", ov)

    result = register(v, surface, i_flr, T_init, cam, cfg, T_gt=T_gt, callback=save_overlay)
    write_pose(outdir / "final_pose.txt", result.t_final)
    _write_trace(outdir / "trace.csv", result)
    msg = f"status {result.status} after {result.iterations_run} iterations"
    if T_gt is not None:
        msg += f"  mRPD {mrpd(result.t_final, T_gt, surface.w_obj, cam):.4g} mm"
    print(msg)
    if result.status == "failed":
        print(f"registration failed: {result.reason}", file=sys.stderr)
        return 1 if args.strict else 0
    return 0


def cmd_evaluate(args):
    cfg = ExperimentConfig.load(args.config)
    cam = cfg.camera()
    if cfg["phantom.volume_file"]:
        v = read_volume(cfg["phantom.volume_file"])
    else:
        v = make_phantom(cfg["phantom.kind"], **cfg.phantom_params())
    surface = extract_surface_points(v, cfg["contours.grad_threshold"], cfg["contours.max_points"], cfg["contours.seed"])
    jobs = args.jobs if args.jobs is not None else cfg["eval.jobs"]
    report = run_benchmark(
        v, surface, cam, cfg.views(), cfg.sampling(), cfg.loop_config(),
        parallelism=jobs, threshold_mm=cfg["eval.threshold_mm"],
    )
    outdir = Path(args.output or cfg["output.dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    write_records(outdir / "records.csv", report, include_timing=not args.no_timing)
    print(summary_row(report.aggregates))
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="ppcreg", description="Point-to-plane 2D/3D rigid registration toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-phantom", help="write a synthetic phantom volume")
    p.add_argument("--kind", choices=PHANTOM_KINDS, default="sphere")
    p.add_argument("--dims", type=int, default=64)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--density", type=float, default=0.05, help="attenuation inside the solid, 1/mm")
    p.add_argument("--texture", type=float, default=0.0, help="relative interior modulation (0 = flat)")
    p.add_argument("--radius", type=float)
    p.add_argument("--radius2", type=float)
    p.add_argument("--separation", type=float)
    p.add_argument("--inner-radius", type=float)
    p.add_argument("--half-length", type=float)
    p.add_argument("--half-extents", type=float, nargs=3)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_make_phantom)

    p = sub.add_parser("render", help="render a DRR of a volume at a pose")
    p.add_argument("volume")
    p.add_argument("--pose", type=float, nargs=6, metavar=("RX", "RY", "RZ", "TX", "TY", "TZ"),
                   help="rotation in degrees then translation in mm")
    p.add_argument("--pose-file", help="3x4 row-major pose file")
    p.add_argument("--depth", type=float, default=750.0, help="object depth when no pose is given (mm)")
    p.add_argument("--step", type=float, default=None, help="ray-march step in mm (default half a voxel)")
    p.add_argument("--overlay", action="store_true", help="also write the image with apparent contours marked")
    p.add_argument("-o", "--output", required=True, help="output path; .img and .pgm are written")
    _add_camera(p)
    _add_surface(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("register", help="register a volume to one fluoroscopy image")
    p.add_argument("volume")
    p.add_argument("fluoro", help="raw image file")
    p.add_argument("--init", type=float, nargs=6, metavar=("RX", "RY", "RZ", "TX", "TY", "TZ"))
    p.add_argument("--init-file")
    p.add_argument("--depth", type=float, default=750.0)
    p.add_argument("--gt", help="ground-truth pose file (enables the oracle and mRPD)")
    p.add_argument("--estimator", choices=ESTIMATORS, default="patch")
    p.add_argument("--external-dir")
    p.add_argument("--weighting", choices=WEIGHTINGS, default="uniform")
    p.add_argument("--delta-px", type=float, default=3.0)
    p.add_argument("--max-iterations", type=int, default=10)
    p.add_argument("--rot-tol", type=float, default=1e-4)
    p.add_argument("--trans-tol", type=float, default=1e-3)
    p.add_argument("--tikhonov-lambda", type=float, default=1e-6)
    p.add_argument("--step", type=float, default=None)
    p.add_argument("--patch-radius", type=int, default=5)
    p.add_argument("--search-radius", type=int, default=20)
    p.add_argument("--min-ncc", type=float, default=0.3)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--outlier-frac", type=float, default=0.0)
    p.add_argument("--outlier-mag", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--overlays", type=int, default=3, help="write overlays for the first N iterations")
    p.add_argument("--strict", action="store_true", help="exit 1 when registration fails")
    p.add_argument("-o", "--output", required=True, help="output directory")
    _add_camera(p)
    _add_surface(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("evaluate", help="run a benchmark from a config file")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default eval.jobs)")
    p.add_argument("--no-timing", action="store_true", help="write wall_time as 0 and omit runtime aggregates")
    p.add_argument("-o", "--output", help="output directory (default output.dir)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidArgumentError, FormatError) as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (PPCError, OSError) as exc:
        print(f"{parser.prog}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
