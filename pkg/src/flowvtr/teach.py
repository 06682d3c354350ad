"""Keyframe map construction during the teach run, and map persistence."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .geometry import CameraIntrinsics, Pose2
from .perception import DESCRIPTOR_DIM, Frame, MatchConfig, feature_flow, match_frames

MAP_FORMAT = "flowvtr-map"
MAP_VERSION = 1


class TeachError(RuntimeError):
    pass


class BarrenFrameError(TeachError):
    """A teach frame has too few features to map."""


class TooShortTeachError(TeachError):
    """The teach run did not produce at least two keyframes."""


class MapFileError(Exception):
    pass


class MapVersionError(MapFileError):
    pass


class MapSchemaError(MapFileError):
    pass


class MapIOError(MapFileError):
    pass


@dataclass(frozen=True)
class TeachConfig:
    flow_threshold: float = 30.0      # px
    inlier_ratio: float = 0.6
    min_matches: int = 15
    max_features: int = 500
    min_frame_features: int = 8
    rematch_flow: bool = False        # re-match keyframe pairs instead of keeping emission-time flow
    ratio: float = 0.8

    @property
    def match_config(self) -> MatchConfig:
        return MatchConfig(ratio=self.ratio)


@dataclass(eq=False)
class Keyframe:
    id: int
    features: Frame
    flow_to_next: Optional[float] = None
    creation_inliers: int = 0
    debug_pose: Optional[Pose2] = None  # ground truth, for evaluation only

    def structurally_equal(self, other: "Keyframe") -> bool:
        return (self.id == other.id and self.flow_to_next == other.flow_to_next
                and self.creation_inliers == other.creation_inliers
                and self.debug_pose == other.debug_pose
                and self.features.same_as(other.features))


@dataclass(eq=False)
class KeyframeMap:
    keyframes: List[Keyframe]
    intrinsics: CameraIntrinsics
    build_config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.keyframes)

    def __getitem__(self, i: int) -> Keyframe:
        return self.keyframes[i]

    def validate(self, min_matches: Optional[int] = None) -> None:
        k = len(self.keyframes)
        if k < 2:
            raise TooShortTeachError(f"map has {k} keyframe(s); at least 2 are needed")
        for i, kf in enumerate(self.keyframes):
            if kf.id != i:
                raise MapSchemaError(f"keyframe ids are not dense at position {i}")
            if (kf.flow_to_next is None) != (i == k - 1):
                raise MapSchemaError(f"flow_to_next presence wrong on keyframe {i}")
            if min_matches is not None and i > 0 and kf.creation_inliers < min_matches:
                raise MapSchemaError(f"keyframe {i} was created from {kf.creation_inliers} matches")

    def structurally_equal(self, other: "KeyframeMap") -> bool:
        return (self.intrinsics == other.intrinsics and self.build_config == other.build_config
                and len(self) == len(other)
                and all(a.structurally_equal(b) for a, b in zip(self.keyframes, other.keyframes)))


class MapBuilder:
    """Incremental keyframe selection over a stream of teach frames.

    A frame becomes a keyframe when its flow against the last keyframe reaches
    ``flow_threshold`` or its match count drops below ``inlier_ratio`` times the
    keyframe's feature count. If the triggering frame is too weakly matched to
    give a trustworthy flow, the previous frame is promoted instead.
    """

    def __init__(self, intrinsics: CameraIntrinsics, cfg: TeachConfig = TeachConfig()):
        self.intrinsics = intrinsics
        self.cfg = cfg
        self.keyframes: List[Keyframe] = []
        self._prev: Optional[Tuple[Frame, float, int, Optional[Pose2]]] = None
        self._last_frame: Optional[Frame] = None
        self.measurements: List[Tuple[int, float, int]] = []  # frame index, flow, inliers
        # why each keyframe exists: "first", "flow", "inliers", "promoted" or "final"
        self.reasons: List[str] = []

    def _reason(self, flow: float, inliers: int) -> str:
        return "flow" if abs(flow) >= self.cfg.flow_threshold else "inliers"

    def _new_keyframe(self, frame: Frame, inliers: int, pose: Optional[Pose2]) -> Keyframe:
        kf = Keyframe(len(self.keyframes), frame.head(self.cfg.max_features),
                      creation_inliers=inliers, debug_pose=pose)
        self.keyframes.append(kf)
        return kf

    def _measure(self, frame: Frame) -> Tuple[float, int]:
        m = match_frames(frame, self.keyframes[-1].features, self.cfg.match_config)
        if m.inlier_count == 0:
            return 0.0, 0
        return feature_flow(m)

    def process(self, frame: Frame, pose: Optional[Pose2] = None) -> Optional[Keyframe]:
        """Feed one teach frame; returns the keyframe emitted by it, if any."""
        if len(frame) < self.cfg.min_frame_features:
            raise BarrenFrameError(
                f"frame {frame.frame_index} has {len(frame)} features (< {self.cfg.min_frame_features})")
        self._last_frame = frame
        if not self.keyframes:
            self._prev = None
            self.reasons.append("first")
            return self._new_keyframe(frame, 0, pose)

        flow, inliers = self._measure(frame)
        self.measurements.append((frame.frame_index, flow, inliers))
        last = self.keyframes[-1]
        trigger = (abs(flow) >= self.cfg.flow_threshold
                   or inliers < self.cfg.inlier_ratio * len(last.features))
        if not trigger:
            self._prev = (frame, flow, inliers, pose)
            return None

        emitted = None
        if inliers < self.cfg.min_matches:
            if self._prev is None:
                raise TeachError(f"frame {frame.frame_index} lost track of keyframe {last.id}")
            pframe, pflow, pinl, ppose = self._prev
            self.reasons.append("promoted")
            self._emit(pflow, pframe, pinl, ppose)
            emitted = self.keyframes[-1]
            self._prev = None
            flow, inliers = self._measure(frame)
            if inliers < self.cfg.min_matches:
                raise TeachError(f"frame {frame.frame_index} lost track of keyframe {emitted.id}")
            last = self.keyframes[-1]
            trigger = (abs(flow) >= self.cfg.flow_threshold
                       or inliers < self.cfg.inlier_ratio * len(last.features))
            if not trigger:
                self._prev = (frame, flow, inliers, pose)
                return emitted
        self.reasons.append(self._reason(flow, inliers))
        self._emit(flow, frame, inliers, pose)
        self._prev = None
        return self.keyframes[-1]

    def _emit(self, flow: float, frame: Frame, inliers: int, pose: Optional[Pose2]) -> None:
        prev = self.keyframes[-1]
        kf = self._new_keyframe(frame, inliers, pose)
        if self.cfg.rematch_flow:
            m = match_frames(kf.features, prev.features, self.cfg.match_config)
            flow = feature_flow(m)[0] if m.inlier_count else flow
        prev.flow_to_next = float(flow)

    def finalize(self) -> KeyframeMap:
        """Close the map with the last processed frame as final keyframe."""
        if not self.keyframes:
            raise TooShortTeachError("no teach frames were processed")
        if self._prev is not None:
            frame, flow, inliers, pose = self._prev
            if inliers >= self.cfg.min_matches:
                self.reasons.append("final")
                self._emit(flow, frame, inliers, pose)
            self._prev = None
        kmap = KeyframeMap(list(self.keyframes), self.intrinsics, asdict(self.cfg))
        kmap.validate(self.cfg.min_matches)
        return kmap


def build_map(frames, intrinsics: CameraIntrinsics, cfg: TeachConfig = TeachConfig(), poses=None) -> KeyframeMap:
    builder = MapBuilder(intrinsics, cfg)
    for k, frame in enumerate(frames):
        builder.process(frame, None if poses is None else poses[k])
    return builder.finalize()


# --------------------------------------------------------------------------
# persistence


def map_to_dict(kmap: KeyframeMap) -> dict:
    kfs = []
    for kf in kmap.keyframes:
        f = kf.features
        kfs.append({
            "id": kf.id,
            "flow_to_next": kf.flow_to_next,
            "creation_inliers": kf.creation_inliers,
            "debug_pose": None if kf.debug_pose is None else kf.debug_pose.as_list(),
            "frame_index": f.frame_index,
            "timestamp": f.timestamp,
            "features": [
                {"u": float(p[0]), "v": float(p[1]), "descriptor": [float(x) for x in d],
                 "landmark_id": int(i)}
                for p, d, i in zip(f.pixels, f.descriptors, f.landmark_ids)
            ],
        })
    return {
        "format": MAP_FORMAT,
        "version": MAP_VERSION,
        "intrinsics": kmap.intrinsics.to_dict(),
        "build_config": kmap.build_config,
        "keyframes": kfs,
    }


def map_from_dict(data: dict) -> KeyframeMap:
    if not isinstance(data, dict) or data.get("format") != MAP_FORMAT:
        raise MapSchemaError("not a keyframe map document")
    if data.get("version") != MAP_VERSION:
        raise MapVersionError(f"unsupported map version {data.get('version')!r} (expected {MAP_VERSION})")
    try:
        intr = CameraIntrinsics.from_dict(data["intrinsics"])
        keyframes = []
        for raw in data["keyframes"]:
            feats = raw["features"]
            if feats:
                pixels = np.array([[float(o["u"]), float(o["v"])] for o in feats])
                desc = np.array([[float(x) for x in o["descriptor"]] for o in feats])
                ids = np.array([int(o.get("landmark_id", -1)) for o in feats], dtype=np.int64)
                if desc.shape[1] != DESCRIPTOR_DIM:
                    raise MapSchemaError(f"descriptor length {desc.shape[1]} != {DESCRIPTOR_DIM}")
            else:
                pixels, desc = np.zeros((0, 2)), np.zeros((0, DESCRIPTOR_DIM))
                ids = np.zeros(0, dtype=np.int64)
            frame = Frame(pixels, desc, ids, int(raw.get("frame_index", 0)), float(raw.get("timestamp", 0.0)))
            pose = raw.get("debug_pose")
            flow = raw["flow_to_next"]
            keyframes.append(Keyframe(int(raw["id"]), frame, None if flow is None else float(flow),
                                      int(raw["creation_inliers"]),
                                      None if pose is None else Pose2(*map(float, pose))))
        kmap = KeyframeMap(keyframes, intr, dict(data.get("build_config", {})))
    except MapFileError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise MapSchemaError(f"malformed map: {exc}") from exc
    kmap.validate()
    return kmap


def save_map(kmap: KeyframeMap, path) -> None:
    try:
        Path(path).write_text(json.dumps(map_to_dict(kmap), separators=(",", ":")))
    except OSError as exc:
        raise MapIOError(f"cannot write map {path}: {exc}") from exc


def load_map(path) -> KeyframeMap:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MapIOError(f"cannot read map {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MapSchemaError(f"{path}: not valid JSON ({exc})") from exc
    return map_from_dict(data)
