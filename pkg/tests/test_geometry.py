import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowvtr.geometry import (
    CameraIntrinsics,
    CameraMount,
    DegenerateDepthError,
    Landmark,
    Pose2,
    VelocityCommand,
    backproject,
    normalize_angle,
    predict_rotation_shift,
    predict_translation_shift,
    project,
    project_point,
    step_unicycle,
    step_unicycle_array,
    world_to_camera,
)

from conftest import INTR, MOUNT, wrap


# ---------------------------------------------------------------- types

def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 500.0, 320.0, 240.0, 640, 480)
    with pytest.raises(ValueError):
        CameraIntrinsics(500.0, 500.0, 640.0, 240.0, 640, 480)
    with pytest.raises(ValueError):
        CameraMount(height=0.0)


@pytest.mark.parametrize("a", [0.0, math.pi, -math.pi, 3 * math.pi, -3 * math.pi, 7.0, -7.0, 1e-12])
def test_heading_normalised_half_open(a):
    h = Pose2(0, 0, a).heading
    assert -math.pi < h <= math.pi
    assert math.isclose(math.cos(h), math.cos(a), abs_tol=1e-12)
    assert math.isclose(math.sin(h), math.sin(a), abs_tol=1e-12)


def test_normalize_pi_maps_to_pi():
    assert normalize_angle(-math.pi) == math.pi
    assert normalize_angle(math.pi) == math.pi


# ---------------------------------------------------------------- projection

def test_optical_axis_hits_principal_point():
    assert project_point(INTR, (0.0, 0.0, 5.0)) == (320.0, 240.0)


def test_projection_direct_evaluation():
    # 500 * 1/5 + 320, 500 * 0.5/5 + 240
    assert project_point(INTR, (1.0, 0.5, 5.0)) == pytest.approx((420.0, 290.0), abs=1e-12)


@pytest.mark.parametrize("p", [(0.0, 0.0, -1.0), (0.0, 0.0, 0.05), (10.0, 0.0, 1.0), (0.0, -10.0, 1.0)])
def test_out_of_view_is_empty(p):
    assert project_point(INTR, p) is None


def test_world_to_camera_axes():
    # robot at origin facing +x: a point 5 m ahead, 1 m to the left, at camera height
    pc = world_to_camera(Pose2(0, 0, 0), MOUNT, np.array([5.0, 1.0, MOUNT.height]))[0]
    np.testing.assert_allclose(pc, [-1.0, 0.0, 5.0], atol=1e-12)
    # a point above the camera has negative camera y (y points down)
    pc = world_to_camera(Pose2(0, 0, 0), MOUNT, np.array([5.0, 0.0, MOUNT.height + 1]))[0]
    np.testing.assert_allclose(pc, [0.0, -1.0, 5.0], atol=1e-12)


def test_world_to_camera_matches_explicit_rotation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        pose = Pose2(*rng.uniform(-5, 5, 2), rng.uniform(-math.pi, math.pi))
        p = rng.uniform(-10, 10, 3)
        # oracle: robot-frame coordinates first, then the fixed camera axis permutation
        dx, dy = p[0] - pose.x, p[1] - pose.y
        c, s = math.cos(pose.heading), math.sin(pose.heading)
        fwd, left = c * dx + s * dy, -s * dx + c * dy
        up = p[2] - MOUNT.height
        np.testing.assert_allclose(world_to_camera(pose, MOUNT, p)[0], [-left, -up, fwd], atol=1e-12)


def test_project_landmark_from_pose():
    lm = Landmark(7, (6.0, 3.0, MOUNT.height))
    pose = Pose2(1.0, 3.0, 0.0)
    assert project(INTR, pose, MOUNT, lm) == pytest.approx((320.0, 240.0))
    assert project(INTR, Pose2(1.0, 3.0, math.pi), MOUNT, lm) is None


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(0.2, 50))
def test_projection_round_trip(x, y, z):
    uv = project_point(INTR, (x, y, z))
    if uv is None:
        return
    back = backproject(INTR, uv[0], uv[1], z)
    np.testing.assert_allclose(back, [x, y, z], rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------- flow predictions

def test_translation_shift_direct_evaluation():
    assert predict_translation_shift(INTR, (1.0, 0.0, 5.0), 1.0) == pytest.approx(25.0, abs=1e-12)


@pytest.mark.parametrize("delta", [-1.0, 0.3, 2.0])
def test_translation_shift_on_axis_is_zero(delta):
    assert predict_translation_shift(INTR, (0.0, 0.3, 5.0), delta) == 0.0


def test_translation_shift_mirror_pairs_cancel():
    rng = np.random.default_rng(1)
    shifts = []
    for _ in range(50):
        x, y, z = rng.uniform(0.1, 3), rng.uniform(-1, 1), rng.uniform(2, 20)
        shifts += [predict_translation_shift(INTR, (x, y, z), 0.5),
                   predict_translation_shift(INTR, (-x, y, z), 0.5)]
    assert np.mean(shifts) == pytest.approx(0.0, abs=1e-12)


def test_translation_shift_matches_reprojection():
    # the closed form is exact for pure forward motion
    x, y, z, d = 0.8, 0.2, 6.0, 1.5
    u0 = project_point(INTR, (x, y, z))[0]
    u1 = project_point(INTR, (x, y, z - d))[0]
    assert predict_translation_shift(INTR, (x, y, z), d) == pytest.approx(u1 - u0, rel=1e-12)


@pytest.mark.parametrize("z,delta", [(0.0, 1.0), (1.0, 1.0), (5e-7, 0.0), (2.0, 2.0 + 1e-7)])
def test_translation_shift_degenerate_depth(z, delta):
    with pytest.raises(DegenerateDepthError):
        predict_translation_shift(INTR, (1.0, 0.0, z), delta)


def test_rotation_shift_values():
    assert predict_rotation_shift(INTR, 0.1) == pytest.approx(49.9167, abs=1e-4)
    assert predict_rotation_shift(INTR, 0.0) == 0.0
    assert predict_rotation_shift(INTR, -0.1) == pytest.approx(-49.9167, abs=1e-4)


@pytest.mark.parametrize("theta", [-0.15, -0.1, -0.05, 0.05, 0.1, 0.15])
def test_rotation_shift_approximates_mean_projected_shift(theta):
    """Rotating left by theta shifts distant near-axis points by fx sin(theta) on average.

    Mirror pairs (+x, -x) cancel the second-order bearing term, leaving the
    mean within 5% for |x/z| <= 0.2.
    """
    rng = np.random.default_rng(2)
    before, after = Pose2(0, 0, 0), Pose2(0, 0, theta)
    shifts = []
    for _ in range(40):
        z = rng.uniform(20, 40)
        lat = rng.uniform(0.0, 0.2) * z
        h = MOUNT.height + rng.uniform(-0.1, 0.1) * z
        for sgn in (1, -1):
            lm = Landmark(0, (z, sgn * lat, h))
            u0, u1 = project(INTR, before, MOUNT, lm), project(INTR, after, MOUNT, lm)
            if u0 is not None and u1 is not None:
                shifts.append(u1[0] - u0[0])
    assert len(shifts) > 40
    assert np.mean(shifts) == pytest.approx(predict_rotation_shift(INTR, theta), rel=0.05)


@pytest.mark.parametrize("theta", [-0.15, -0.1, 0.1, 0.15])
def test_rotation_shift_per_landmark_near_axis(theta):
    """Individually, points with |x/z| <= 0.1 also stay within 5%."""
    rng = np.random.default_rng(3)
    for _ in range(50):
        z = rng.uniform(20, 40)
        lm = Landmark(0, (z, rng.uniform(-0.1, 0.1) * z, MOUNT.height))
        u0 = project(INTR, Pose2(0, 0, 0), MOUNT, lm)
        u1 = project(INTR, Pose2(0, 0, theta), MOUNT, lm)
        assert u1[0] - u0[0] == pytest.approx(predict_rotation_shift(INTR, theta), rel=0.05)


# ---------------------------------------------------------------- kinematics

def test_unicycle_examples():
    p = step_unicycle(Pose2(0, 0, 0), VelocityCommand(1.0, 0.0), 1.0)
    assert (p.x, p.y, p.heading) == pytest.approx((1.0, 0.0, 0.0), abs=1e-12)
    p = step_unicycle(Pose2(0, 0, 0), VelocityCommand(0.0, math.pi / 2), 1.0)
    assert (p.x, p.y, p.heading) == pytest.approx((0.0, 0.0, math.pi / 2), abs=1e-12)
    p = step_unicycle(Pose2(0, 0, 0), VelocityCommand(1.0, 1.0), math.pi / 2)
    assert (p.x, p.y, p.heading) == pytest.approx((1.0, 1.0, math.pi / 2), abs=1e-12)


def test_unicycle_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        step_unicycle(Pose2(0, 0, 0), VelocityCommand(1, 0), 0.0)


def test_unicycle_matches_dense_euler():
    pose = Pose2(0.3, -1.2, 0.7)
    cmd = VelocityCommand(0.8, -0.6)
    x, y, h = pose.x, pose.y, pose.heading
    n = 200_000
    for _ in range(n):
        x += cmd.linear * math.cos(h) * (2.0 / n)
        y += cmd.linear * math.sin(h) * (2.0 / n)
        h += cmd.angular * (2.0 / n)
    p = step_unicycle(pose, cmd, 2.0)
    assert (p.x, p.y) == pytest.approx((x, y), abs=1e-5)
    assert wrap(p.heading - h) == pytest.approx(0.0, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-math.pi, math.pi),
       st.floats(-2, 2), st.floats(-2, 2), st.floats(0.01, 2))
def test_unicycle_composes(x, y, h, v, w, dt):
    pose, cmd = Pose2(x, y, h), VelocityCommand(v, w)
    one = step_unicycle(pose, cmd, dt)
    two = step_unicycle(step_unicycle(pose, cmd, dt / 2), cmd, dt / 2)
    assert one.x == pytest.approx(two.x, abs=1e-12)
    assert one.y == pytest.approx(two.y, abs=1e-12)
    assert wrap(one.heading - two.heading) == pytest.approx(0.0, abs=1e-12)


def test_unicycle_tiny_turn_rate_is_continuous():
    # just above the straight-line threshold the arc must agree with the straight step
    pose = Pose2(0.0, 0.0, 1.0)
    arc = step_unicycle(pose, VelocityCommand(1.0, 2e-9), 2.0)
    line = step_unicycle(pose, VelocityCommand(1.0, 0.0), 2.0)
    assert (arc.x, arc.y) == pytest.approx((line.x, line.y), abs=1e-8)


def test_vectorised_step_matches_scalar():
    rng = np.random.default_rng(4)
    n = 100
    x, y, h = rng.uniform(-3, 3, n), rng.uniform(-3, 3, n), rng.uniform(-3, 3, n)
    v, w = rng.uniform(-1, 1, n), rng.uniform(-1, 1, n)
    w[::10] = 0.0
    xs, ys, hs = step_unicycle_array(x, y, h, v, w, 0.1)
    for i in range(n):
        p = step_unicycle(Pose2(x[i], y[i], h[i]), VelocityCommand(v[i], w[i]), 0.1)
        assert (xs[i], ys[i]) == pytest.approx((p.x, p.y), abs=1e-12)
        assert wrap(hs[i] - p.heading) == pytest.approx(0.0, abs=1e-12)
