"""Sampled-trajectory local planner: offline candidate library, local
occupancy grid with inflation, collision filtering and goal-angle scoring."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .geometry import Pose2, VelocityCommand, normalize_angles, step_unicycle_array
from .perception import RangeScan

LIBRARY_FORMAT = "flowvtr-trajlib"
LIBRARY_VERSION = 1
SCORE_TIE_TOL = 1e-12


class LibraryConfigError(ValueError):
    pass


class LibraryFileError(Exception):
    pass


@dataclass(frozen=True)
class LibraryConfig:
    segments: int = 3
    segment_length: float = 1.0       # m
    speed: float = 1.0                # m/s
    omega_max: float = math.pi / 3    # rad/s
    angular_samples: int = 13
    sample_dt: float = 0.1            # s

    def validate(self) -> None:
        if self.segments < 1 or self.angular_samples < 1:
            raise LibraryConfigError("segments and angular_samples must be >= 1")
        if self.segment_length <= 0 or self.speed <= 0 or self.sample_dt <= 0 or self.omega_max < 0:
            raise LibraryConfigError("lengths, speed and sample spacing must be positive")
        steps = self.segment_length / self.speed / self.sample_dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise LibraryConfigError("segment duration must be a whole number of sample steps")

    @property
    def steps_per_segment(self) -> int:
        return int(round(self.segment_length / self.speed / self.sample_dt))

    @property
    def omegas(self) -> np.ndarray:
        if self.angular_samples == 1:
            return np.zeros(1)
        half = (self.angular_samples - 1) / 2.0
        # symmetric by construction so the centre sample is exactly zero
        return self.omega_max * (np.arange(self.angular_samples) - half) / half


@dataclass(frozen=True)
class TrajectoryCandidate:
    path_id: int
    group_id: int
    samples: Tuple[Pose2, ...]
    first_command: VelocityCommand
    segment_omegas: Tuple[float, ...]


class CandidateLibrary:
    """All candidates, stored as arrays: ``poses[path, sample] = (x, y, heading)``."""

    def __init__(self, config: LibraryConfig, poses: np.ndarray, omegas: np.ndarray, group_ids: np.ndarray):
        self.config = config
        self.poses = poses
        self.segment_omegas = omegas
        self.group_ids = group_ids

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def path_ids(self) -> np.ndarray:
        return np.arange(len(self.poses))

    @property
    def first_omegas(self) -> np.ndarray:
        return self.segment_omegas[:, 0]

    def candidate(self, path_id: int) -> TrajectoryCandidate:
        samples = tuple(Pose2(*map(float, p)) for p in self.poses[path_id])
        w = tuple(float(x) for x in self.segment_omegas[path_id])
        return TrajectoryCandidate(path_id, int(self.group_ids[path_id]), samples,
                                   VelocityCommand(self.config.speed, w[0]), w)

    def __iter__(self):
        return (self.candidate(i) for i in range(len(self)))

    def equals(self, other: "CandidateLibrary") -> bool:
        return (self.config == other.config and np.array_equal(self.poses, other.poses)
                and np.array_equal(self.segment_omegas, other.segment_omegas)
                and np.array_equal(self.group_ids, other.group_ids))


def generate_library(cfg: LibraryConfig = LibraryConfig()) -> CandidateLibrary:
    """Every combination of per-segment angular rates, integrated from the origin."""
    cfg.validate()
    grid = cfg.omegas
    combos = np.array(list(itertools.product(range(len(grid)), repeat=cfg.segments)), dtype=np.int64)
    omegas = grid[combos]                       # (N, S)
    n = len(combos)
    steps = cfg.steps_per_segment
    poses = np.zeros((n, cfg.segments * steps + 1, 3))
    x, y, h = np.zeros(n), np.zeros(n), np.zeros(n)
    v = np.full(n, cfg.speed)
    k = 1
    for s in range(cfg.segments):
        for _ in range(steps):
            x, y, h = step_unicycle_array(x, y, h, v, omegas[:, s], cfg.sample_dt)
            poses[:, k, 0], poses[:, k, 1], poses[:, k, 2] = x, y, h
            k += 1
    return CandidateLibrary(cfg, poses, omegas, combos[:, 0].copy())


def save_library(lib: CandidateLibrary, path) -> None:
    doc = {
        "format": LIBRARY_FORMAT,
        "version": LIBRARY_VERSION,
        "config": asdict(lib.config),
        "candidates": [
            {"path_id": i, "group_id": int(g), "omegas": [float(w) for w in om],
             "samples": [[float(c) for c in p] for p in poses]}
            for i, (g, om, poses) in enumerate(zip(lib.group_ids, lib.segment_omegas, lib.poses))
        ],
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")))


def load_library(path) -> CandidateLibrary:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LibraryFileError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("format") != LIBRARY_FORMAT or doc.get("version") != LIBRARY_VERSION:
        raise LibraryFileError(f"{path}: unsupported library format/version")
    try:
        cfg = LibraryConfig(**doc["config"])
        cands = doc["candidates"]
        if [c["path_id"] for c in cands] != list(range(len(cands))):
            raise LibraryFileError("path ids must be dense")
        poses = np.array([c["samples"] for c in cands], dtype=float)
        omegas = np.array([c["omegas"] for c in cands], dtype=float)
        groups = np.array([c["group_id"] for c in cands], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise LibraryFileError(f"{path}: malformed library ({exc})") from exc
    return CandidateLibrary(cfg, poses, omegas, groups)


# --------------------------------------------------------------------------
# occupancy grid


@dataclass(frozen=True)
class GridConfig:
    resolution: float = 0.05
    extent: float = 8.0
    robot_radius: float = 0.3
    safety_margin: float = 0.1

    @property
    def inflation_radius(self) -> float:
        return self.robot_radius + self.safety_margin


class OccupancyGrid:
    """Robot-centred square grid; cell (i, j) covers x in [-E/2 + i r, -E/2 + (i+1) r)."""

    def __init__(self, resolution: float, extent: float, inflation_radius: float,
                 occupied: Optional[np.ndarray] = None, inflated: Optional[np.ndarray] = None):
        self.resolution = resolution
        self.extent = extent
        self.inflation_radius = inflation_radius
        self.size = int(round(extent / resolution))
        shape = (self.size, self.size)
        self.occupied = np.zeros(shape, dtype=bool) if occupied is None else occupied
        self.inflated = self.occupied.copy() if inflated is None else inflated

    @property
    def origin(self) -> float:
        return -self.extent / 2.0

    def cell_of(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        i = np.floor((np.asarray(x) - self.origin) / self.resolution).astype(np.int64)
        j = np.floor((np.asarray(y) - self.origin) / self.resolution).astype(np.int64)
        return i, j

    def in_bounds(self, i, j) -> np.ndarray:
        return (i >= 0) & (i < self.size) & (j >= 0) & (j < self.size)

    def cell_centers(self) -> np.ndarray:
        return self.origin + (np.arange(self.size) + 0.5) * self.resolution

    def mark_points(self, points: np.ndarray) -> None:
        """Occupy the cells of ``points`` and inflate around the points themselves."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        if len(points) == 0:
            return
        i, j = self.cell_of(points[:, 0], points[:, 1])
        ok = self.in_bounds(i, j)
        self.occupied[i[ok], j[ok]] = True
        self.inflated[i[ok], j[ok]] = True
        r = self.inflation_radius
        if r <= 0:
            return
        reach = int(math.ceil(r / self.resolution)) + 1
        offs = np.arange(-reach, reach + 1)
        centers = self.cell_centers()
        for (px, py), ci, cj in zip(points, i, j):
            ii = ci + offs
            jj = cj + offs
            ii = ii[(ii >= 0) & (ii < self.size)]
            jj = jj[(jj >= 0) & (jj < self.size)]
            if len(ii) == 0 or len(jj) == 0:
                continue
            dx = centers[ii][:, None] - px
            dy = centers[jj][None, :] - py
            near = dx * dx + dy * dy <= r * r
            block = self.inflated[ii[0]:ii[-1] + 1, jj[0]:jj[-1] + 1]
            block |= near

    def is_free(self, x: float, y: float) -> bool:
        i, j = self.cell_of(x, y)
        return not (self.in_bounds(i, j) and self.inflated[i, j])


def build_grid(scan: RangeScan, cfg: GridConfig = GridConfig()) -> OccupancyGrid:
    grid = OccupancyGrid(cfg.resolution, cfg.extent, cfg.inflation_radius)
    grid.mark_points(scan.endpoints())
    return grid


def filter_collisions(lib: CandidateLibrary, grid: OccupancyGrid) -> np.ndarray:
    """Path ids whose every sample lies in a free (inflated-grid) cell.

    Samples outside the grid are treated as free.
    """
    i, j = grid.cell_of(lib.poses[:, :, 0], lib.poses[:, :, 1])
    ok = grid.in_bounds(i, j)
    hit = np.zeros(i.shape, dtype=bool)
    hit[ok] = grid.inflated[i[ok], j[ok]]
    return np.flatnonzero(~hit.any(axis=1))


# --------------------------------------------------------------------------
# scoring and selection


def score_angle(theta_a):
    """Alignment score for an angular error in radians: ``1 - (0.005 * theta)^(1/4)``."""
    return 1.0 - np.sqrt(np.sqrt(0.005 * np.asarray(theta_a, dtype=float)))


def angle_error(goal: Sequence[float], end_xy: np.ndarray) -> np.ndarray:
    theta_g = math.atan2(goal[1], goal[0])
    end_xy = np.asarray(end_xy, dtype=float).reshape(-1, 2)
    theta_p = np.arctan2(end_xy[:, 1], end_xy[:, 0])
    return np.abs(normalize_angles(theta_g - theta_p))


def score(candidate: TrajectoryCandidate, goal: Sequence[float]) -> float:
    end = candidate.samples[-1]
    return float(score_angle(angle_error(goal, np.array([end.x, end.y])))[0])


def score_library(lib: CandidateLibrary, goal: Sequence[float], ids: Optional[np.ndarray] = None) -> np.ndarray:
    ids = lib.path_ids if ids is None else ids
    return score_angle(angle_error(goal, lib.poses[ids, -1, :2]))


def best_candidate(lib: CandidateLibrary, feasible: np.ndarray, goal: Sequence[float]) -> Optional[int]:
    """Highest-scoring feasible path id; ties prefer gentler first turn, then lower id."""
    feasible = np.asarray(feasible, dtype=np.int64)
    if len(feasible) == 0:
        return None
    s = score_library(lib, goal, feasible)
    top = feasible[s >= s.max() - SCORE_TIE_TOL]
    order = np.lexsort((top, np.abs(lib.first_omegas[top])))
    return int(top[order[0]])


def select_command(lib: CandidateLibrary, feasible: np.ndarray, goal: Sequence[float]) -> Tuple[VelocityCommand, Optional[int]]:
    """First-segment command of the best feasible candidate, or a stop."""
    best = best_candidate(lib, feasible, goal)
    if best is None:
        return VelocityCommand.stop(), None
    return VelocityCommand(lib.config.speed, float(lib.first_omegas[best])), best
