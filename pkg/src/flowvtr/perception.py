"""Synthetic perception: landmark observations, descriptor matching, feature
flow and 2D range scans against a disc/box obstacle world."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import (
    CameraIntrinsics,
    CameraMount,
    Landmark,
    Pose2,
    camera_center,
    project_camera_points,
    world_to_camera,
)

DESCRIPTOR_DIM = 32
WORLD_FORMAT = "flowvtr-world"
WORLD_VERSION = 1

# stream tags keep teach and repeat noise independent under one seed
STREAM_TEACH = 1
STREAM_REPEAT = 2


class EmptyMatchError(ValueError):
    """Feature flow requested for a match set without pairs."""


class WorldFileError(ValueError):
    """World file is malformed or has an unsupported version."""


# --------------------------------------------------------------------------
# obstacles


@dataclass(frozen=True)
class Disc:
    x: float
    y: float
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("disc radius must be positive")


@dataclass(frozen=True)
class Box:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("box must have positive extent")


@dataclass(frozen=True)
class DynamicDisc:
    """Disc moving piecewise-linearly between timed waypoints.

    Before the first and after the last waypoint the disc rests at that waypoint.
    """

    radius: float
    waypoints: Tuple[Tuple[float, float, float], ...]  # (t, x, y), t increasing

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("disc radius must be positive")
        if not self.waypoints:
            raise ValueError("dynamic disc needs at least one waypoint")
        times = [w[0] for w in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times must be strictly increasing")

    def position(self, t: float) -> Tuple[float, float]:
        wps = self.waypoints
        if t <= wps[0][0]:
            return wps[0][1], wps[0][2]
        for (t0, x0, y0), (t1, x1, y1) in zip(wps, wps[1:]):
            if t <= t1:
                a = (t - t0) / (t1 - t0)
                return x0 + a * (x1 - x0), y0 + a * (y1 - y0)
        return wps[-1][1], wps[-1][2]

    def at(self, t: float) -> Disc:
        x, y = self.position(t)
        return Disc(x, y, self.radius)


@dataclass(frozen=True)
class ObstacleWorld:
    discs: Tuple[Disc, ...] = ()
    boxes: Tuple[Box, ...] = ()
    dynamic: Tuple[DynamicDisc, ...] = ()

    def discs_at(self, t: float) -> np.ndarray:
        """All discs (static + dynamic) at time t as an (M, 3) array of x, y, r."""
        rows = [(d.x, d.y, d.radius) for d in self.discs]
        for dd in self.dynamic:
            x, y = dd.position(t)
            rows.append((x, y, dd.radius))
        return np.array(rows, dtype=float).reshape(-1, 3)

    def boxes_array(self) -> np.ndarray:
        return np.array([(b.xmin, b.ymin, b.xmax, b.ymax) for b in self.boxes], dtype=float).reshape(-1, 4)

    def clearance(self, x: float, y: float, t: float) -> float:
        """Signed distance from a point to the nearest obstacle boundary (negative inside)."""
        best = math.inf
        for cx, cy, r in self.discs_at(t):
            best = min(best, math.hypot(x - cx, y - cy) - r)
        for b in self.boxes:
            dx = max(b.xmin - x, 0.0, x - b.xmax)
            dy = max(b.ymin - y, 0.0, y - b.ymax)
            if dx == 0.0 and dy == 0.0:
                d = -min(x - b.xmin, b.xmax - x, y - b.ymin, b.ymax - y)
            else:
                d = math.hypot(dx, dy)
            best = min(best, d)
        return best

    def to_dict(self) -> dict:
        return {
            "discs": [[d.x, d.y, d.radius] for d in self.discs],
            "boxes": [[b.xmin, b.ymin, b.xmax, b.ymax] for b in self.boxes],
            "dynamic": [{"radius": d.radius, "waypoints": [list(w) for w in d.waypoints]}
                        for d in self.dynamic],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObstacleWorld":
        return cls(
            discs=tuple(Disc(*map(float, row)) for row in d.get("discs", [])),
            boxes=tuple(Box(*map(float, row)) for row in d.get("boxes", [])),
            dynamic=tuple(
                DynamicDisc(float(dd["radius"]), tuple(tuple(map(float, w)) for w in dd["waypoints"]))
                for dd in d.get("dynamic", [])
            ),
        )


# --------------------------------------------------------------------------
# world


@dataclass(frozen=True)
class NoiseConfig:
    pixel_sigma: float = 0.0
    descriptor_sigma: float = 0.0
    dropout_prob: float = 0.0
    outlier_prob: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("dropout_prob", "outlier_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.pixel_sigma < 0 or self.descriptor_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")

    def to_dict(self) -> dict:
        return {"pixel_sigma": self.pixel_sigma, "descriptor_sigma": self.descriptor_sigma,
                "dropout_prob": self.dropout_prob, "outlier_prob": self.outlier_prob,
                "rng_seed": self.rng_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(float(d.get("pixel_sigma", 0.0)), float(d.get("descriptor_sigma", 0.0)),
                   float(d.get("dropout_prob", 0.0)), float(d.get("outlier_prob", 0.0)),
                   int(d.get("rng_seed", 0)))


DEFAULT_NOISE = NoiseConfig(pixel_sigma=0.5, descriptor_sigma=0.1, dropout_prob=0.05, outlier_prob=0.02)


def view_basis(ids: np.ndarray, seed: int) -> np.ndarray:
    """Three unit vectors per landmark, orthogonal to its canonical descriptor and
    to each other, spanning its viewpoint-dependent appearance: (N, 3, D)."""
    canon = canonical_descriptors(ids, seed)
    out = np.empty((len(ids), 3, DESCRIPTOR_DIM))
    for k, lid in enumerate(ids):
        raw = np.random.default_rng([seed, int(lid), 2]).normal(size=(DESCRIPTOR_DIM, 3))
        q, _ = np.linalg.qr(np.column_stack([canon[k], raw]))
        out[k] = (q[:, 1:] * np.sign(np.einsum("ij,ij->j", q[:, 1:], raw))).T
    return out


def canonical_descriptors(ids: np.ndarray, seed: int) -> np.ndarray:
    """One fixed random unit descriptor per landmark id."""
    out = np.empty((len(ids), DESCRIPTOR_DIM))
    for k, lid in enumerate(ids):
        vec = np.random.default_rng([seed, int(lid)]).normal(size=DESCRIPTOR_DIM)
        out[k] = vec / np.linalg.norm(vec)
    return out


@dataclass(frozen=True, eq=False)
class World:
    """Landmarks, obstacles and the camera rig they are observed with."""

    landmark_ids: np.ndarray
    landmark_positions: np.ndarray
    obstacles: ObstacleWorld
    intrinsics: CameraIntrinsics
    mount: CameraMount
    noise: NoiseConfig = NoiseConfig()
    descriptor_seed: int = 0
    feature_budget: int = 0  # keep only the N most salient visible landmarks; 0 = all
    # Appearance change with viewpoint, in radians of descriptor rotation per unit
    # log-range and per radian of viewing bearing. Zero keeps descriptors canonical.
    view_scale: float = 0.0
    view_bearing: float = 0.0
    descriptors: np.ndarray = field(init=False, repr=False)
    saliency: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ids = np.asarray(self.landmark_ids, dtype=np.int64)
        pos = np.asarray(self.landmark_positions, dtype=float).reshape(-1, 3)
        if len(ids) != len(pos):
            raise ValueError("landmark ids and positions differ in length")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("landmark ids must be unique")
        order = np.argsort(ids, kind="stable")
        object.__setattr__(self, "landmark_ids", ids[order])
        object.__setattr__(self, "landmark_positions", pos[order])
        object.__setattr__(self, "descriptors", canonical_descriptors(ids[order], self.descriptor_seed))
        sal = np.array([np.random.default_rng([self.descriptor_seed, int(i), 1]).random() for i in ids[order]])
        object.__setattr__(self, "saliency", sal)
        if self.view_scale or self.view_bearing:
            object.__setattr__(self, "_basis", view_basis(ids[order], self.descriptor_seed))

    def view_descriptors(self, camera_xy: np.ndarray, index: np.ndarray) -> np.ndarray:
        """Noise-free descriptors of landmarks ``index`` seen from ``camera_xy``.

        Two views separated by log-range change a and bearing change b yield
        descriptors with cosine similarity cos(view_scale a) cos(view_bearing b).
        """
        canon = self.descriptors[index]
        if not (self.view_scale or self.view_bearing):
            return canon
        d = camera_xy - self.landmark_positions[index, :2]
        p1 = self.view_scale * np.log(np.maximum(np.hypot(d[:, 0], d[:, 1]), 1e-6))
        p2 = self.view_bearing * np.arctan2(d[:, 1], d[:, 0])
        b = self._basis[index]
        return ((np.cos(p1) * np.cos(p2))[:, None] * canon + (np.sin(p1) * np.cos(p2))[:, None] * b[:, 0]
                + (np.cos(p1) * np.sin(p2))[:, None] * b[:, 1] + (np.sin(p1) * np.sin(p2))[:, None] * b[:, 2])

    @classmethod
    def from_landmarks(cls, landmarks: Sequence[Landmark], obstacles: ObstacleWorld,
                       intrinsics: CameraIntrinsics, mount: CameraMount, **kw) -> "World":
        ids = [lm.id for lm in landmarks]
        pos = [lm.position for lm in landmarks]
        return cls(np.array(ids, dtype=np.int64), np.array(pos, dtype=float).reshape(-1, 3),
                   obstacles, intrinsics, mount, **kw)

    @property
    def landmarks(self) -> List[Landmark]:
        return [Landmark(int(i), tuple(p)) for i, p in zip(self.landmark_ids, self.landmark_positions)]

    def with_noise(self, noise: NoiseConfig) -> "World":
        return World(self.landmark_ids, self.landmark_positions, self.obstacles, self.intrinsics,
                     self.mount, noise, self.descriptor_seed, self.feature_budget,
                     self.view_scale, self.view_bearing)

    def with_obstacles(self, obstacles: ObstacleWorld) -> "World":
        return World(self.landmark_ids, self.landmark_positions, obstacles, self.intrinsics,
                     self.mount, self.noise, self.descriptor_seed, self.feature_budget,
                     self.view_scale, self.view_bearing)

    def to_dict(self) -> dict:
        return {
            "format": WORLD_FORMAT,
            "version": WORLD_VERSION,
            "descriptor_seed": self.descriptor_seed,
            "feature_budget": self.feature_budget,
            "view_scale": self.view_scale,
            "view_bearing": self.view_bearing,
            "intrinsics": self.intrinsics.to_dict(),
            "mount": {"height": self.mount.height, "forward_offset": self.mount.forward_offset},
            "noise": self.noise.to_dict(),
            "landmarks": [[int(i), *map(float, p)] for i, p in zip(self.landmark_ids, self.landmark_positions)],
            "obstacles": self.obstacles.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "World":
        if d.get("format") != WORLD_FORMAT or d.get("version") != WORLD_VERSION:
            raise WorldFileError(f"unsupported world format/version: {d.get('format')!r} {d.get('version')!r}")
        try:
            rows = d["landmarks"]
            ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
            pos = np.array([[float(c) for c in r[1:4]] for r in rows], dtype=float).reshape(-1, 3)
            mount = d.get("mount", {})
            return cls(ids, pos, ObstacleWorld.from_dict(d.get("obstacles", {})),
                       CameraIntrinsics.from_dict(d["intrinsics"]),
                       CameraMount(float(mount.get("height", 0.5)), float(mount.get("forward_offset", 0.0))),
                       NoiseConfig.from_dict(d.get("noise", {})),
                       int(d.get("descriptor_seed", 0)), int(d.get("feature_budget", 0)),
                       float(d.get("view_scale", 0.0)), float(d.get("view_bearing", 0.0)))
        except (KeyError, TypeError, IndexError) as exc:
            raise WorldFileError(f"malformed world: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "World":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise WorldFileError(f"{path}: {exc}") from exc
        return cls.from_dict(data)


# --------------------------------------------------------------------------
# frames and matching


@dataclass(frozen=True)
class FeatureObservation:
    pixel: Tuple[float, float]
    descriptor: np.ndarray
    debug_landmark_id: Optional[int] = None


@dataclass(frozen=True, eq=False)
class Frame:
    """Observations of one image, stored column-wise.

    ``landmark_ids`` is simulator ground truth; matching never reads it.
    Missing ids are encoded as -1.
    """

    pixels: np.ndarray
    descriptors: np.ndarray
    landmark_ids: np.ndarray
    frame_index: int = 0
    timestamp: float = 0.0

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def observations(self) -> List[FeatureObservation]:
        return [FeatureObservation((float(p[0]), float(p[1])), d, None if i < 0 else int(i))
                for p, d, i in zip(self.pixels, self.descriptors, self.landmark_ids)]

    def __iter__(self) -> Iterator[FeatureObservation]:
        return iter(self.observations)

    @classmethod
    def empty(cls, frame_index: int = 0, timestamp: float = 0.0) -> "Frame":
        return cls(np.zeros((0, 2)), np.zeros((0, DESCRIPTOR_DIM)), np.zeros(0, dtype=np.int64),
                   frame_index, timestamp)

    @classmethod
    def from_observations(cls, obs: Sequence[FeatureObservation], frame_index: int = 0,
                          timestamp: float = 0.0) -> "Frame":
        if not obs:
            return cls.empty(frame_index, timestamp)
        return cls(np.array([o.pixel for o in obs], dtype=float),
                   np.array([o.descriptor for o in obs], dtype=float),
                   np.array([-1 if o.debug_landmark_id is None else o.debug_landmark_id for o in obs],
                            dtype=np.int64),
                   frame_index, timestamp)

    def head(self, n: int) -> "Frame":
        return Frame(self.pixels[:n], self.descriptors[:n], self.landmark_ids[:n],
                     self.frame_index, self.timestamp)

    def same_as(self, other: "Frame") -> bool:
        return (self.frame_index == other.frame_index and self.timestamp == other.timestamp
                and np.array_equal(self.pixels, other.pixels)
                and np.array_equal(self.descriptors, other.descriptors)
                and np.array_equal(self.landmark_ids, other.landmark_ids))


def _segment_blocked(start: np.ndarray, ends: np.ndarray, discs: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Whether the 2D segments start->ends[i] cross any disc or box (interior)."""
    n = len(ends)
    blocked = np.zeros(n, dtype=bool)
    if n == 0:
        return blocked
    d = ends - start  # (n, 2)
    t_max = 1.0 - 1e-9
    for cx, cy, r in discs:
        f = start - np.array([cx, cy])
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * (d @ f)
        c = f @ f - r * r
        disc = b * b - 4 * a * c
        ok = (disc > 0) & (a > 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        safe_a = np.where(a > 0, a, 1.0)
        t0 = (-b - sq) / (2 * safe_a)
        t1 = (-b + sq) / (2 * safe_a)
        blocked |= ok & (t1 > 0) & (t0 < t_max)
    for xmin, ymin, xmax, ymax in boxes:
        lo = np.zeros(n)
        hi = np.full(n, t_max)
        for axis, (bmin, bmax) in enumerate(((xmin, xmax), (ymin, ymax))):
            da = d[:, axis]
            s = start[axis]
            par = np.abs(da) < 1e-15
            safe = np.where(par, 1.0, da)
            ta = (bmin - s) / safe
            tb = (bmax - s) / safe
            tlo = np.where(par, np.where((s > bmin) & (s < bmax), -np.inf, np.inf), np.minimum(ta, tb))
            thi = np.where(par, np.where((s > bmin) & (s < bmax), np.inf, -np.inf), np.maximum(ta, tb))
            lo = np.maximum(lo, tlo)
            hi = np.minimum(hi, thi)
        blocked |= lo < hi
    return blocked


def observe(world: World, pose: Pose2, time: float = 0.0, frame_index: int = 0,
            noise: Optional[NoiseConfig] = None, stream: int = 0) -> Frame:
    """Render a synthetic feature frame from ``pose`` at ``time``.

    All random draws come from a generator seeded by
    ``(noise.rng_seed, stream, frame_index)`` and are made for every landmark,
    so a frame depends only on its inputs.
    """
    noise = world.noise if noise is None else noise
    intr = world.intrinsics
    n = len(world.landmark_ids)
    pc = world_to_camera(pose, world.mount, world.landmark_positions)
    uv, visible = project_camera_points(intr, pc)

    cam = camera_center(pose, world.mount)[:2]
    idx = np.flatnonzero(visible)
    if len(idx):
        blocked = _segment_blocked(cam, world.landmark_positions[idx, :2],
                                   world.obstacles.discs_at(time), world.obstacles.boxes_array())
        visible[idx[blocked]] = False

    rng = np.random.default_rng([noise.rng_seed & 0xFFFFFFFFFFFFFFFF, stream, frame_index])
    drop = rng.random(n) < noise.dropout_prob
    pix_noise = rng.normal(size=(n, 2)) * noise.pixel_sigma
    desc_noise = rng.normal(size=(n, DESCRIPTOR_DIM)) * noise.descriptor_sigma
    outlier = rng.random(n) < noise.outlier_prob
    fresh = rng.normal(size=(n, DESCRIPTOR_DIM))

    keep = visible & ~drop
    if world.feature_budget and keep.sum() > world.feature_budget:
        cand = np.flatnonzero(keep)
        top = cand[np.argsort(-world.saliency[cand], kind="stable")[:world.feature_budget]]
        keep = np.zeros(n, dtype=bool)
        keep[top] = True
    px = uv[keep] + pix_noise[keep]
    px[:, 0] = np.clip(px[:, 0], 0.0, intr.width)
    px[:, 1] = np.clip(px[:, 1], 0.0, intr.height)
    desc = world.view_descriptors(cam, np.flatnonzero(keep)) + desc_noise[keep]
    desc = np.where(outlier[keep][:, None], fresh[keep], desc)
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)
    return Frame(px, desc, world.landmark_ids[keep].copy(), frame_index, float(time))


@dataclass(frozen=True, eq=False)
class MatchSet:
    """Matched observation pairs, as index arrays into the two frames."""

    query: Frame
    reference: Frame
    query_idx: np.ndarray
    reference_idx: np.ndarray

    @property
    def inlier_count(self) -> int:
        return len(self.query_idx)

    @property
    def pairs(self) -> List[Tuple[FeatureObservation, FeatureObservation]]:
        q, r = self.query.observations, self.reference.observations
        return [(q[i], r[j]) for i, j in zip(self.query_idx, self.reference_idx)]

    @property
    def query_pixels(self) -> np.ndarray:
        return self.query.pixels[self.query_idx]

    @property
    def reference_pixels(self) -> np.ndarray:
        return self.reference.pixels[self.reference_idx]


@dataclass(frozen=True)
class MatchConfig:
    ratio: float = 0.8
    mutual: bool = True


def _ratio_nn(dist: np.ndarray, ratio: float) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise nearest neighbour and whether it passes the ratio test."""
    n, m = dist.shape
    nn = np.argmin(dist, axis=1)
    if m < 2:
        return nn, np.ones(n, dtype=bool)
    d1 = dist[np.arange(n), nn]
    second = dist.copy()
    second[np.arange(n), nn] = np.inf
    d2 = second.min(axis=1)
    return nn, d1 < ratio * d2


def match_frames(query: Frame, reference: Frame, cfg: MatchConfig = MatchConfig()) -> MatchSet:
    """Mutual nearest neighbours under cosine distance with a ratio test.

    With ``mutual`` set the ratio test is applied from both sides, so the
    accepted pairs do not depend on which frame is the query.
    """
    empty = np.zeros(0, dtype=np.int64)
    if len(query) == 0 or len(reference) == 0:
        return MatchSet(query, reference, empty, empty)
    dist = 1.0 - query.descriptors @ reference.descriptors.T
    rows = np.arange(dist.shape[0])
    nn, ok = _ratio_nn(dist, cfg.ratio)
    if cfg.mutual:
        back, back_ok = _ratio_nn(dist.T, cfg.ratio)
        ok &= (back[nn] == rows) & back_ok[nn]
    qi = rows[ok]
    ri = nn[ok]
    order = np.lexsort((qi, query.pixels[qi, 0]))
    return MatchSet(query, reference, qi[order].astype(np.int64), ri[order].astype(np.int64))


def feature_flow(matches: MatchSet) -> Tuple[float, int]:
    """Mean horizontal displacement ``u_query - u_reference`` and the inlier count.

    With the reference being the robot's current view and the query a stored
    keyframe, a positive value means the keyframe lies to the left, i.e. the
    robot should turn left. Between consecutive teach frames (query = newer)
    a positive value means the robot turned left.
    """
    n = matches.inlier_count
    if n == 0:
        raise EmptyMatchError("feature flow of an empty match set")
    du = matches.query_pixels[:, 0] - matches.reference_pixels[:, 0]
    return float(np.mean(du)), n


# --------------------------------------------------------------------------
# range scans


@dataclass(frozen=True, eq=False)
class RangeScan:
    angles: np.ndarray
    ranges: np.ndarray
    max_range: float

    @property
    def beam_count(self) -> int:
        return len(self.angles)

    def endpoints(self) -> np.ndarray:
        """Robot-frame hit points of beams that returned (range < max_range)."""
        hit = self.ranges < self.max_range
        r, a = self.ranges[hit], self.angles[hit]
        return np.column_stack([r * np.cos(a), r * np.sin(a)])


def scan_angles(beam_count: int) -> np.ndarray:
    return -np.pi + 2.0 * np.pi * np.arange(beam_count) / beam_count


def raycast_scan(obstacles: ObstacleWorld, pose: Pose2, time: float = 0.0,
                 beam_count: int = 720, max_range: float = 10.0) -> RangeScan:
    """Analytic 360 degree scan from the robot centre."""
    if beam_count < 8:
        raise ValueError("beam_count must be at least 8")
    angles = scan_angles(beam_count)
    world_a = pose.heading + angles
    dx, dy = np.cos(world_a), np.sin(world_a)
    ox, oy = pose.x, pose.y
    best = np.full(beam_count, np.inf)
    eps = 1e-9

    for cx, cy, r in obstacles.discs_at(time):
        fx, fy = ox - cx, oy - cy
        b = dx * fx + dy * fy
        c = fx * fx + fy * fy - r * r
        disc = b * b - c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0, t1 = -b - sq, -b + sq
        t = np.where(t0 > eps, t0, np.where(t1 > eps, t1, np.inf))
        best = np.minimum(best, np.where(ok, t, np.inf))

    for xmin, ymin, xmax, ymax in obstacles.boxes_array():
        lo = np.full(beam_count, -np.inf)
        hi = np.full(beam_count, np.inf)
        for d, o, bmin, bmax in ((dx, ox, xmin, xmax), (dy, oy, ymin, ymax)):
            par = np.abs(d) < 1e-15
            safe = np.where(par, 1.0, d)
            ta, tb = (bmin - o) / safe, (bmax - o) / safe
            inside = (o >= bmin) & (o <= bmax)
            lo = np.maximum(lo, np.where(par, -np.inf if inside else np.inf, np.minimum(ta, tb)))
            hi = np.minimum(hi, np.where(par, np.inf if inside else -np.inf, np.maximum(ta, tb)))
        valid = lo <= hi
        t = np.where(lo > eps, lo, np.where(hi > eps, hi, np.inf))
        best = np.minimum(best, np.where(valid, t, np.inf))

    ranges = np.minimum(best, max_range)
    return RangeScan(angles, ranges, float(max_range))
