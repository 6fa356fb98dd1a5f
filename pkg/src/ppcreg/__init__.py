"""Rigid 2D/3D registration with point-to-plane correspondences."""

from .correspondence import (
    CorrespondenceSet,
    PatchMatchConfig,
    WeightVector,
    add_correspondence_noise,
    load_external_correspondences,
    oracle_correspondences,
    patch_match_correspondences,
    save_correspondences,
    weight_correspondences,
)
from .drr import Image2D, read_image, render_drr, render_overlay, write_image, write_pgm
from .errors import PPCError
from .evaluation import (
    CaseRecord,
    EvalReport,
    SamplingRanges,
    capture_range,
    run_benchmark,
    sample_initial_transforms,
    success_ratio,
)
from .geometry import (
    CameraModel,
    MotionVector,
    RigidTransform,
    backproject_ray,
    compose,
    pose_from_params,
    project,
    read_pose,
    se3_exp,
    write_pose,
)
from .losses import LossConfig, combined_loss, flow_loss, registration_loss
from .metrics import mrpd, mtre
from .registration import LoopConfig, RegistrationResult, register, update_step
from .solver import PPCSystem, SolverConfig, build_ppc_system, ppc_jacobians, solve_ppc
from .volume import (
    ContourSet,
    SurfacePoints,
    Volume,
    extract_surface_points,
    make_phantom,
    read_volume,
    select_apparent_contours,
    write_volume,
)

__version__ = "0.1.0"
