import numpy as np
import pytest

from ppcreg.geometry import CameraModel, pose_from_params
from ppcreg.volume import extract_surface_points, make_phantom

DEPTH = 750.0


@pytest.fixture(scope="session")
def cam():
    return CameraModel.default()


@pytest.fixture(scope="session")
def T_gt():
    return pose_from_params((0.0, 0.0, 0.0), (0.0, 0.0, DEPTH))


@pytest.fixture(scope="session")
def sphere():
    return make_phantom("sphere", dims=64, spacing=1.0, radius=20.0)


@pytest.fixture(scope="session")
def sphere_surface(sphere):
    return extract_surface_points(sphere)


@pytest.fixture(scope="session")
def box():
    return make_phantom("box", dims=64, half_extents=(18.0, 14.0, 10.0))


@pytest.fixture(scope="session")
def box_surface(box):
    return extract_surface_points(box)


@pytest.fixture(scope="session")
def two_spheres():
    return make_phantom("two-spheres", dims=64, radius=16.0, texture=0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pose(rng, max_angle_deg=30.0, max_trans=20.0, depth=DEPTH):
    ang = rng.uniform(-max_angle_deg, max_angle_deg, 3)
    t = rng.uniform(-max_trans, max_trans, 3) + np.array([0.0, 0.0, depth])
    return pose_from_params(ang, t)


def random_ppc_system(rng, n=None, depth=DEPTH, spread=40.0, weighted=True):
    """PPC system with the geometry of contour points around ``depth``.

    Rows follow the PPC layout ``[(n x w)^T, -n^T]`` with unit normals
    perpendicular to each point's viewing ray; ``b`` is random.
    """
    from ppcreg.solver import PPCSystem

    n = int(rng.integers(6, 501)) if n is None else n
    w = rng.uniform(-spread, spread, (n, 3)) + [0.0, 0.0, depth]
    t = rng.normal(size=(n, 3))
    normals = np.cross(w, t)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    A = np.hstack([np.cross(normals, w), -normals])
    b = rng.normal(scale=2.0, size=n)
    wd = rng.uniform(0.2, 1.0, n) if weighted else np.ones(n)
    return PPCSystem.from_arrays(A, b, w=w), wd


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
