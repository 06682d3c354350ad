"""Built-in synthetic worlds and scenarios (corridors, an S-curve room)."""

from __future__ import annotations

import math
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .geometry import CameraIntrinsics, CameraMount
from .perception import DEFAULT_NOISE, Box, Disc, DynamicDisc, NoiseConfig, ObstacleWorld, World

DEFAULT_INTRINSICS = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
DEFAULT_MOUNT = CameraMount(height=0.5, forward_offset=0.0)
WALL_THICKNESS = 0.2
FEATURE_BUDGET = 100
VIEW_SCALE = 2.0
VIEW_BEARING = 1.0


class WorldSketch:
    """Accumulates textured walls and pillars into a :class:`World`."""

    def __init__(self, seed: int, density: float = 20.0, z_range=(0.1, 2.2)):
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.density = density
        self.z_range = z_range
        self.boxes: List[Box] = []
        self.discs: List[Disc] = []
        self.dynamic: List[DynamicDisc] = []
        self.points: List[Tuple[float, float, float]] = []

    def _texture_segment(self, a, b, normal) -> None:
        a, b, normal = np.asarray(a, float), np.asarray(b, float), np.asarray(normal, float)
        length = float(np.linalg.norm(b - a))
        n = self.rng.poisson(self.density * length)
        s = self.rng.random(n)
        z = self.rng.uniform(*self.z_range, size=n)
        for si, zi in zip(s, z):
            p = a + si * (b - a) + 0.01 * normal
            self.points.append((float(p[0]), float(p[1]), float(zi)))

    def wall(self, x0: float, y0: float, x1: float, y1: float, side: str) -> None:
        """Axis-aligned wall along the segment; ``side`` names the free side
        ('+x', '-x', '+y', '-y') that gets texture. The box sits behind it."""
        t = WALL_THICKNESS
        if y0 == y1:
            lo, hi = min(x0, x1), max(x0, x1)
            if side == "+y":
                self.boxes.append(Box(lo, y0 - t, hi, y0))
                self._texture_segment((lo, y0), (hi, y0), (0, 1))
            else:
                self.boxes.append(Box(lo, y0, hi, y0 + t))
                self._texture_segment((lo, y0), (hi, y0), (0, -1))
        elif x0 == x1:
            lo, hi = min(y0, y1), max(y0, y1)
            if side == "+x":
                self.boxes.append(Box(x0 - t, lo, x0, hi))
                self._texture_segment((x0, lo), (x0, hi), (1, 0))
            else:
                self.boxes.append(Box(x0, lo, x0 + t, hi))
                self._texture_segment((x0, lo), (x0, hi), (-1, 0))
        else:
            raise ValueError("walls must be axis-aligned")

    def pillar(self, x: float, y: float, r: float) -> None:
        self.discs.append(Disc(x, y, r))
        n = self.rng.poisson(self.density * 2 * math.pi * r) + 3
        ang = self.rng.uniform(-math.pi, math.pi, size=n)
        z = self.rng.uniform(*self.z_range, size=n)
        for a, zi in zip(ang, z):
            self.points.append((x + (r + 0.01) * math.cos(a), y + (r + 0.01) * math.sin(a), float(zi)))

    def build(self, noise: NoiseConfig = DEFAULT_NOISE, feature_budget: int = FEATURE_BUDGET) -> World:
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        ids = np.arange(len(pts), dtype=np.int64)
        return World(ids, pts, ObstacleWorld(tuple(self.discs), tuple(self.boxes), tuple(self.dynamic)),
                     DEFAULT_INTRINSICS, DEFAULT_MOUNT, noise, descriptor_seed=self.seed,
                     feature_budget=feature_budget, view_scale=VIEW_SCALE, view_bearing=VIEW_BEARING)


def straight_corridor(length: float = 10.0, half_width: float = 2.0, seed: int = 0) -> Tuple[World, list]:
    sk = WorldSketch(seed)
    x0, x1 = -2.0, length + 5.0
    sk.wall(x0, -half_width, x1, -half_width, "+y")
    sk.wall(x0, half_width, x1, half_width, "-y")
    sk.wall(x0, -half_width, x0, half_width, "+x")
    sk.wall(x1, -half_width, x1, half_width, "-x")
    return sk.build(), [(0.0, 0.0), (length, 0.0)]


def zigzag_corridor(seed: int = 0, half_width: float = 2.0) -> Tuple[World, list]:
    """Corridor with a left then a right 90 degree turn; path 8 + 6 + 8 = 22 m."""
    w = half_width
    sk = WorldSketch(seed)
    # leg 1 along +x at y=0, leg 2 along +y at x=8, leg 3 along +x at y=6
    sk.wall(-2.0, -w, 8 + w, -w, "+y")
    sk.wall(-2.0, w, 8 - w, w, "-y")
    sk.wall(-2.0, -w, -2.0, w, "+x")
    sk.wall(8 + w, -w, 8 + w, 6 - w, "-x")
    sk.wall(8 - w, w, 8 - w, 6 + w, "+x")
    sk.wall(8 + w, 6 - w, 18.5, 6 - w, "+y")
    sk.wall(8 - w, 6 + w, 18.5, 6 + w, "-y")
    sk.wall(18.5, 6 - w, 18.5, 6 + w, "-x")
    return sk.build(), [(0.0, 0.0), (8.0, 0.0), (8.0, 6.0), (16.0, 6.0)]


def s_curve_room(seed: int = 0) -> Tuple[World, list]:
    """Open room with pillars; a two-lobe sinusoidal path about 22 m long."""
    sk = WorldSketch(seed)
    xmin, xmax, ymin, ymax = -4.0, 25.0, -6.0, 6.0
    sk.wall(xmin, ymin, xmax, ymin, "+y")
    sk.wall(xmin, ymax, xmax, ymax, "-y")
    sk.wall(xmin, ymin, xmin, ymax, "+x")
    sk.wall(xmax, ymin, xmax, ymax, "-x")
    xs = np.linspace(0.0, 20.0, 81)
    ys = 2.0 * np.sin(2 * np.pi * xs / 20.0)
    path = list(zip(xs.tolist(), ys.tolist()))
    rng = np.random.default_rng(seed + 1000)
    placed = 0
    while placed < 22:
        px, py = rng.uniform(-2, 23), rng.uniform(-5, 5)
        if np.min(np.hypot(xs - px, ys - py)) > 1.6:
            sk.pillar(float(px), float(py), 0.25)
            placed += 1
    return sk.build(), path


def path_length(waypoints: Sequence[Tuple[float, float]]) -> float:
    w = np.asarray(waypoints, dtype=float)
    return float(np.sum(np.hypot(*np.diff(w, axis=0).T)))


def crossing_pedestrian(x: float, y_from: float, y_to: float, t_start: float, t_end: float,
                        radius: float = 0.35) -> DynamicDisc:
    return DynamicDisc(radius, ((t_start, x, y_from), (t_end, x, y_to)))


BUILTIN = ("straight", "zigzag", "scurve", "zigzag-dynamic")


def builtin_world(name: str, seed: int = 0) -> Tuple[World, list]:
    if name == "straight":
        return straight_corridor(seed=seed)
    if name == "zigzag":
        return zigzag_corridor(seed=seed)
    if name == "scurve":
        return s_curve_room(seed=seed)
    if name == "zigzag-dynamic":
        return zigzag_corridor(seed=seed)
    raise KeyError(f"unknown built-in scenario {name!r}; choose from {', '.join(BUILTIN)}")
