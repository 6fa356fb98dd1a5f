"""Flat ``section.key = value`` experiment configuration files.

Blank lines and ``#`` comments are ignored. Unknown keys, duplicate keys and
unparseable values are rejected with the offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .correspondence import PatchMatchConfig
from .errors import FormatError, InvalidArgumentError
from .evaluation import SamplingRanges
from .geometry import CameraModel, RigidTransform, pose_from_params
from .registration import LoopConfig
from .solver import SolverConfig


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none", "auto") else conv(text)

    return parse


# key -> (parser, default)
SCHEMA = {
    "phantom.kind": (str, "sphere"),
    "phantom.dims": (int, 64),
    "phantom.spacing": (float, 1.0),
    "phantom.density": (float, 0.05),
    "phantom.radius": (float, 20.0),
    "phantom.radius2": (_opt(float), None),
    "phantom.separation": (_opt(float), None),
    "phantom.inner_radius": (_opt(float), None),
    "phantom.half_length": (_opt(float), None),
    "phantom.half_extents": (_opt(_floats), None),
    "phantom.texture": (float, 0.0),
    "phantom.volume_file": (_opt(str), None),
    "camera.width": (int, 616),
    "camera.height": (int, 480),
    "camera.pixel_spacing": (float, 0.616),
    "camera.source_to_detector": (float, 1200.0),
    "camera.depth": (float, 750.0),
    "contours.tau": (float, 0.15),
    "contours.max_points": (int, 5000),
    "contours.max_contours": (int, 800),
    "contours.grad_threshold": (_opt(float), None),
    "contours.seed": (int, 0),
    "estimator.kind": (str, "oracle"),
    "estimator.patch_radius": (int, 5),
    "estimator.search_radius": (int, 20),
    "estimator.min_ncc": (float, 0.3),
    "estimator.noise_sigma_px": (float, 0.0),
    "estimator.outlier_frac": (float, 0.0),
    "estimator.outlier_mag_px": (float, 0.0),
    "estimator.external_dir": (_opt(str), None),
    "weighting.strategy": (str, "uniform"),
    "weighting.delta_px": (float, 3.0),
    "solver.tikhonov_lambda": (float, 1e-6),
    "solver.min_rows": (int, 6),
    "solver.omega_scale": (_opt(float), None),
    "loop.max_iterations": (int, 10),
    "loop.rot_tol": (float, 1e-4),
    "loop.trans_tol": (float, 1e-3),
    "loop.step_mm": (_opt(float), None),
    "sampling.trans_range": (float, 60.0),
    "sampling.rot_range": (float, 40.0),
    "sampling.mtre_max": (float, 60.0),
    "sampling.n_samples": (int, 600),
    "sampling.seed": (int, 0),
    "sampling.scaled": (_bool, True),
    "eval.views": (lambda t: tuple(v.strip() for v in t.split(",") if v.strip()), ("ap", "lat")),
    "eval.jobs": (int, 1),
    "eval.threshold_mm": (float, 2.0),
    "output.dir": (str, "results"),
}

# view name -> object rotation (degrees); the object center sits on the optical axis
VIEWS = {"ap": (0.0, 0.0, 0.0), "lat": (0.0, 90.0, 0.0)}


def parse_config_text(text, path=None) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise FormatError(f"expected 'key = value', got {raw.strip()!r}", line=lineno, path=path)
        if key not in SCHEMA:
            raise FormatError(f"unknown key {key!r}", line=lineno, path=path)
        if key in values:
            raise FormatError(f"duplicate key {key!r}", line=lineno, path=path)
        try:
            values[key] = SCHEMA[key][0](val.strip())
        except ValueError as exc:
            raise FormatError(f"bad value for {key}: {exc}", line=lineno, path=path) from None
    return values


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: d for k, (_, d) in SCHEMA.items()})

    @classmethod
    def from_text(cls, text, path=None):
        cfg = cls()
        cfg.values.update(parse_config_text(text, path))
        return cfg

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text(), path=str(path))

    def __getitem__(self, key):
        return self.values[key]

    def phantom_params(self) -> dict:
        v = self.values
        params = {
            "dims": v["phantom.dims"],
            "spacing": v["phantom.spacing"],
            "density": v["phantom.density"],
            "texture": v["phantom.texture"],
        }
        kind = v["phantom.kind"]
        if kind in ("sphere", "tube", "two-spheres"):
            params["radius"] = v["phantom.radius"]
        for key in ("radius2", "separation", "inner_radius", "half_length", "half_extents"):
            if v[f"phantom.{key}"] is not None:
                params[key] = v[f"phantom.{key}"]
        return params

    def camera(self) -> CameraModel:
        v = self.values
        return CameraModel.default(
            v["camera.width"], v["camera.height"], v["camera.pixel_spacing"], v["camera.source_to_detector"]
        )

    def views(self):
        out = []
        for name in self.values["eval.views"]:
            if name not in VIEWS:
                raise InvalidArgumentError(f"unknown view {name!r}; expected one of {sorted(VIEWS)}")
            out.append((name, view_pose(name, self.values["camera.depth"])))
        return out

    def loop_config(self) -> LoopConfig:
        v = self.values
        return LoopConfig(
            max_iterations=v["loop.max_iterations"],
            rot_tol=v["loop.rot_tol"],
            trans_tol=v["loop.trans_tol"],
            estimator=v["estimator.kind"],
            weighting=v["weighting.strategy"],
            delta_px=v["weighting.delta_px"],
            tau=v["contours.tau"],
            max_contours=v["contours.max_contours"],
            solver=SolverConfig(v["solver.tikhonov_lambda"], v["solver.min_rows"], v["solver.omega_scale"]),
            step_mm=v["loop.step_mm"],
            patch=PatchMatchConfig(v["estimator.patch_radius"], v["estimator.search_radius"], v["estimator.min_ncc"]),
            noise_sigma_px=v["estimator.noise_sigma_px"],
            outlier_frac=v["estimator.outlier_frac"],
            outlier_mag_px=v["estimator.outlier_mag_px"],
            external_dir=v["estimator.external_dir"],
        )

    def sampling(self) -> SamplingRanges:
        v = self.values
        return SamplingRanges(
            v["sampling.trans_range"], v["sampling.rot_range"], v["sampling.mtre_max"],
            v["sampling.n_samples"], v["sampling.seed"], v["sampling.scaled"],
        )

    def with_values(self, **kv):
        new = dict(self.values)
        for k, val in kv.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise InvalidArgumentError(f"unknown key {key!r}")
            new[key] = val
        return replace(self, values=new)


def view_pose(name, depth_mm=750.0) -> RigidTransform:
    return pose_from_params(VIEWS[name], (0.0, 0.0, depth_mm))
