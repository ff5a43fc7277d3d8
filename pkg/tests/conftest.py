import sys

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from camcond.camera import CameraPose, CameraTrajectory, Extrinsics, Intrinsics


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_intrinsics(rng, width=None, height=None) -> Intrinsics:
    w = int(width or rng.integers(16, 400))
    h = int(height or rng.integers(16, 300))
    f = rng.uniform(0.5, 2.0) * w
    return Intrinsics(f, f * rng.uniform(0.9, 1.1), w * rng.uniform(0.3, 0.7), h * rng.uniform(0.3, 0.7), w, h)


def random_pose(rng, intrinsics=None, index=0, spread=3.0) -> CameraPose:
    K = intrinsics or random_intrinsics(rng)
    return CameraPose(K, Extrinsics(random_rotation(rng), rng.uniform(-spread, spread, 3)), index)


def random_trajectory(rng, frames=None, width=None, height=None, spread=3.0) -> CameraTrajectory:
    n = int(frames or rng.integers(1, 6))
    K = random_intrinsics(rng, width, height)
    return CameraTrajectory(tuple(random_pose(rng, K, i, spread) for i in range(n)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
