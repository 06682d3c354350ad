"""Pinhole camera, ground-plane poses and unicycle kinematics.

Frames
------
World: x/y span the ground plane, z points up.
Robot: x forward, y left; heading is measured counterclockwise from world x.
Camera: x right, y down, z forward (optical axis aligned with robot heading).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

Z_NEAR = 0.1
EPS_Z = 1e-6
EPS_OMEGA = 1e-9


class DegenerateDepthError(ValueError):
    """A depth (or shifted depth) is too close to zero for a stable division."""


def normalize_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(angle, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def normalize_angles(angles: np.ndarray) -> np.ndarray:
    a = np.fmod(angles, 2.0 * np.pi)
    a = np.where(a <= -np.pi, a + 2.0 * np.pi, a)
    return np.where(a > np.pi, a - 2.0 * np.pi, a)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    def distance_to(self, other: "Pose2") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def to_local(self, x: float, y: float) -> Tuple[float, float]:
        """Express a world point in this pose's robot frame."""
        dx, dy = x - self.x, y - self.y
        c, s = math.cos(self.heading), math.sin(self.heading)
        return c * dx + s * dy, -s * dx + c * dy

    def as_list(self) -> list:
        return [self.x, self.y, self.heading]


@dataclass(frozen=True)
class CameraMount:
    height: float = 0.5
    forward_offset: float = 0.0

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("camera height must be positive")


@dataclass(frozen=True)
class Landmark:
    id: int
    position: Tuple[float, float, float]


@dataclass(frozen=True)
class VelocityCommand:
    linear: float = 0.0
    angular: float = 0.0

    @classmethod
    def stop(cls) -> "VelocityCommand":
        return cls(0.0, 0.0)

    def clipped(self, v_max: float, omega_max: float) -> "VelocityCommand":
        return VelocityCommand(float(np.clip(self.linear, -v_max, v_max)),
                               float(np.clip(self.angular, -omega_max, omega_max)))


def camera_center(pose: Pose2, mount: CameraMount) -> np.ndarray:
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    return np.array([pose.x + mount.forward_offset * c, pose.y + mount.forward_offset * s, mount.height])


def world_to_camera(pose: Pose2, mount: CameraMount, points: np.ndarray) -> np.ndarray:
    """Transform (N, 3) world points into the camera frame."""
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    d = np.asarray(points, dtype=float).reshape(-1, 3) - camera_center(pose, mount)
    # rows: camera x (right), y (down), z (forward) expressed in world coordinates
    rot = np.array([[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]])
    return d @ rot.T


def project_camera_points(intrinsics: CameraIntrinsics, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Project camera-frame points; returns pixels (N, 2) and a visibility mask.

    Pixels of invisible points are NaN.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    z = pts[:, 2]
    front = z > Z_NEAR
    safe_z = np.where(front, z, 1.0)
    u = intrinsics.fx * pts[:, 0] / safe_z + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / safe_z + intrinsics.cy
    inside = (u >= 0) & (u <= intrinsics.width) & (v >= 0) & (v <= intrinsics.height)
    mask = front & inside
    uv = np.column_stack([u, v])
    uv[~mask] = np.nan
    return uv, mask


def project_point(intrinsics: CameraIntrinsics, camera_point) -> Optional[Tuple[float, float]]:
    uv, mask = project_camera_points(intrinsics, np.asarray(camera_point, dtype=float))
    if not mask[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def project(intrinsics: CameraIntrinsics, pose: Pose2, mount: CameraMount,
            landmark: Landmark) -> Optional[Tuple[float, float]]:
    """Pixel location of a landmark seen from a robot pose, or None if out of view."""
    pc = world_to_camera(pose, mount, np.asarray(landmark.position, dtype=float))
    return project_point(intrinsics, pc[0])


def backproject(intrinsics: CameraIntrinsics, u: float, v: float, depth: float) -> np.ndarray:
    return np.array([(u - intrinsics.cx) * depth / intrinsics.fx,
                     (v - intrinsics.cy) * depth / intrinsics.fy,
                     depth])


def predict_translation_shift(intrinsics: CameraIntrinsics, camera_point, delta: float) -> float:
    """Horizontal pixel shift of a point after the camera advances ``delta`` metres."""
    x, _, z = (float(c) for c in camera_point)
    if abs(z) < EPS_Z or abs(z - delta) < EPS_Z:
        raise DegenerateDepthError(f"depth {z} with advance {delta} is degenerate")
    return intrinsics.fx * x * delta / (z * (z - delta))


def predict_rotation_shift(intrinsics: CameraIntrinsics, theta: float) -> float:
    """Horizontal pixel shift caused by a yaw of ``theta`` (positive = left)."""
    return intrinsics.fx * math.sin(theta)


def _chord_factor(half_turn):
    """sin(a)/a, the ratio of chord to arc length for a half-turn ``a``."""
    return np.sinc(np.asarray(half_turn) / np.pi)


def step_unicycle(pose: Pose2, cmd: VelocityCommand, dt: float) -> Pose2:
    """Integrate a constant command exactly over ``dt`` seconds.

    The arc is written as a chord of length ``v dt sin(a)/a`` (``a = w dt / 2``)
    along the mid-turn heading, which equals the circle-of-radius-``v/w``
    solution but stays accurate for tiny turn rates.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v, w, h = cmd.linear, cmd.angular, pose.heading
    if abs(w) < EPS_OMEGA:
        return Pose2(pose.x + v * dt * math.cos(h), pose.y + v * dt * math.sin(h), h)
    half = 0.5 * w * dt
    chord = v * dt * float(_chord_factor(half))
    return Pose2(pose.x + chord * math.cos(h + half), pose.y + chord * math.sin(h + half), h + w * dt)


def step_unicycle_array(x: np.ndarray, y: np.ndarray, h: np.ndarray, v: np.ndarray,
                        w: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised form of :func:`step_unicycle` over arrays of poses and commands."""
    straight = np.abs(w) < EPS_OMEGA
    w = np.where(straight, 0.0, w)
    half = 0.5 * w * dt
    chord = v * dt * _chord_factor(half)
    mid = h + half
    return x + chord * np.cos(mid), y + chord * np.sin(mid), normalize_angles(h + w * dt)
