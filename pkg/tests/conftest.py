from __future__ import annotations

import math

import numpy as np
import pytest

from flowvtr.geometry import CameraIntrinsics, CameraMount, Pose2
from flowvtr.perception import NoiseConfig, ObstacleWorld, World

INTR = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
MOUNT = CameraMount(height=0.5)
NOISELESS = NoiseConfig(0.0, 0.0, 0.0, 0.0, 0)


def mirror_field(n_pairs: int = 40, seed: int = 3, depth=(4.0, 12.0), half_width=3.0) -> World:
    """Landmarks in mirror pairs about the robot's x axis (which is the optical axis)."""
    rng = np.random.default_rng(seed)
    pts = []
    for _ in range(n_pairs):
        x = rng.uniform(*depth)
        y = rng.uniform(0.2, half_width)
        z = MOUNT.height + rng.uniform(-0.8, 0.8)
        pts += [(x, y, z), (x, -y, z)]
    pts = np.array(pts)
    return World(np.arange(len(pts)), pts, ObstacleWorld(), INTR, MOUNT, NOISELESS, descriptor_seed=seed)


def distant_field(n: int = 60, seed: int = 5, z_min: float = 20.0, z_max: float = 40.0,
                  bearing_limit: float = 0.2) -> World:
    """Far landmarks with |x/z| within ``bearing_limit`` in the camera at the origin pose."""
    rng = np.random.default_rng(seed)
    depth = rng.uniform(z_min, z_max, n)
    lateral = rng.uniform(-bearing_limit, bearing_limit, n) * depth
    height = MOUNT.height + rng.uniform(-0.1, 0.1, n) * depth
    pts = np.column_stack([depth, lateral, height])
    return World(np.arange(n), pts, ObstacleWorld(), INTR, MOUNT, NOISELESS, descriptor_seed=seed)


@pytest.fixture
def intr() -> CameraIntrinsics:
    return INTR


@pytest.fixture
def origin() -> Pose2:
    return Pose2(0.0, 0.0, 0.0)


def wrap(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


# one verdict line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
