"""Closed-loop teach and repeat runs in the synthetic world, run logs and metrics."""

from __future__ import annotations

import json
import math
import time as _time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Pose2, VelocityCommand, normalize_angle, step_unicycle
from .perception import (
    STREAM_REPEAT,
    STREAM_TEACH,
    DynamicDisc,
    NoiseConfig,
    ObstacleWorld,
    World,
    WorldFileError,
    observe,
    raycast_scan,
)
from .planner import (
    CandidateLibrary,
    GridConfig,
    LibraryConfig,
    build_grid,
    filter_collisions,
    generate_library,
    select_command,
)
from .teach import KeyframeMap, MapBuilder, TeachConfig, TeachError
from .tracker import (
    EVENT_NAMES,
    Status,
    TrackerConfig,
    TrackerState,
    check_finished,
    movement_probabilities,
    select_goal,
    track,
)

SCENARIO_FORMAT = "flowvtr-scenario"
SCENARIO_VERSION = 1
LOG_SCHEMA = "flowvtr-runlog"
LOG_VERSION = 1


class ScenarioError(ValueError):
    pass


class LogFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    world: World
    waypoints: Tuple[Tuple[float, float], ...]
    teach_speed: float = 0.8
    repeat_speed: float = 0.6
    control_rate: float = 10.0
    lookahead: float = 1.0
    teach_omega_max: float = 0.8
    rng_seed: int = 0
    duration_limit: float = 120.0
    blackout: Optional[Tuple[int, int]] = None     # repeat ticks [start, end) with every feature dropped
    repeat_dynamic: Tuple[DynamicDisc, ...] = ()   # obstacles that only exist during repeat
    teach: TeachConfig = TeachConfig()
    # the end test is looser than the tracker default: near the goal the scene
    # is a few metres away, so a lateral offset alone shows up as ~10-15 px of flow
    tracker: TrackerConfig = TrackerConfig(end_flow=20.0)
    library: LibraryConfig = LibraryConfig()
    grid: GridConfig = GridConfig()
    beam_count: int = 720
    max_range: float = 10.0
    world_file: Optional[str] = None

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ScenarioError("a scenario needs at least two waypoints")
        if self.control_rate <= 0:
            raise ScenarioError("control rate must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate

    @property
    def noise(self) -> NoiseConfig:
        return replace(self.world.noise, rng_seed=self.rng_seed)

    @property
    def start_pose(self) -> Pose2:
        (x0, y0), (x1, y1) = self.waypoints[0], self.waypoints[1]
        return Pose2(x0, y0, math.atan2(y1 - y0, x1 - x0))

    def repeat_world(self) -> World:
        if not self.repeat_dynamic:
            return self.world
        obs = self.world.obstacles
        return self.world.with_obstacles(ObstacleWorld(obs.discs, obs.boxes, obs.dynamic + self.repeat_dynamic))

    def to_dict(self, embed_world: bool = True) -> dict:
        d = {
            "format": SCENARIO_FORMAT,
            "version": SCENARIO_VERSION,
            "name": self.name,
            "waypoints": [list(w) for w in self.waypoints],
            "teach_speed": self.teach_speed,
            "repeat_speed": self.repeat_speed,
            "control_rate": self.control_rate,
            "lookahead": self.lookahead,
            "teach_omega_max": self.teach_omega_max,
            "rng_seed": self.rng_seed,
            "duration_limit": self.duration_limit,
            "blackout": None if self.blackout is None else list(self.blackout),
            "repeat_dynamic": ObstacleWorld(dynamic=self.repeat_dynamic).to_dict()["dynamic"],
            "teach": asdict(self.teach),
            "tracker": asdict(self.tracker),
            "library": asdict(self.library),
            "grid": asdict(self.grid),
            "beam_count": self.beam_count,
            "max_range": self.max_range,
        }
        if embed_world or self.world_file is None:
            d["world"] = self.world.to_dict()
        else:
            d["world_file"] = self.world_file
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "Scenario":
        if d.get("format") != SCENARIO_FORMAT or d.get("version") != SCENARIO_VERSION:
            raise ScenarioError(f"unsupported scenario format/version {d.get('format')!r} {d.get('version')!r}")
        try:
            world_file = d.get("world_file")
            if "world" in d:
                world = World.from_dict(d["world"])
            elif world_file is not None:
                wpath = Path(world_file)
                if base_dir is not None and not wpath.is_absolute():
                    wpath = base_dir / wpath
                world = World.load(wpath)
            else:
                raise ScenarioError("scenario has neither 'world' nor 'world_file'")
            dyn = ObstacleWorld.from_dict({"dynamic": d.get("repeat_dynamic", [])}).dynamic
            blackout = d.get("blackout")
            return cls(
                name=str(d.get("name", "scenario")),
                world=world,
                waypoints=tuple((float(x), float(y)) for x, y in d["waypoints"]),
                teach_speed=float(d.get("teach_speed", 0.8)),
                repeat_speed=float(d.get("repeat_speed", 0.6)),
                control_rate=float(d.get("control_rate", 10.0)),
                lookahead=float(d.get("lookahead", 1.0)),
                teach_omega_max=float(d.get("teach_omega_max", 0.8)),
                rng_seed=int(d.get("rng_seed", 0)),
                duration_limit=float(d.get("duration_limit", 120.0)),
                blackout=None if blackout is None else (int(blackout[0]), int(blackout[1])),
                repeat_dynamic=dyn,
                teach=TeachConfig(**d.get("teach", {})),
                tracker=TrackerConfig(**{"end_flow": 20.0, **d.get("tracker", {})}),
                library=LibraryConfig(**d.get("library", {})),
                grid=GridConfig(**d.get("grid", {})),
                beam_count=int(d.get("beam_count", 720)),
                max_range=float(d.get("max_range", 10.0)),
                world_file=world_file,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, (ScenarioError, WorldFileError)):
                raise
            raise ScenarioError(f"malformed scenario: {exc}") from exc

    def save(self, path, embed_world: bool = True) -> None:
        Path(path).write_text(json.dumps(self.to_dict(embed_world), indent=1))

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data, base_dir=path.parent)


def builtin_scenario(name: str, seed: int = 0, **overrides) -> Scenario:
    from .scenarios import builtin_world, crossing_pedestrian

    world, path = builtin_world("zigzag" if name == "zigzag-dynamic" else name, seed=seed)
    kw: Dict = {"name": name, "world": world, "waypoints": tuple(path), "rng_seed": seed}
    if name == "zigzag-dynamic":
        # walks across the first leg a little more than a metre ahead of the robot
        kw["repeat_dynamic"] = (crossing_pedestrian(5.5, 1.9, -1.9, 4.0, 10.0, radius=0.45),)
    kw.update(overrides)
    return Scenario(**kw)


# --------------------------------------------------------------------------
# logs


@dataclass
class RunLog:
    """Header, one record per control tick, and a closing record with the final pose."""

    header: dict
    ticks: List[dict] = field(default_factory=list)
    end: dict = field(default_factory=dict)

    @property
    def final_pose(self) -> Pose2:
        return Pose2(*self.end["pose"])

    @property
    def poses(self) -> List[Pose2]:
        return [Pose2(*r["pose"]) for r in self.ticks] + ([self.final_pose] if self.end else [])

    def lines(self) -> Iterable[str]:
        yield json.dumps({"kind": "header", **self.header}, sort_keys=True)
        for rec in self.ticks:
            yield json.dumps({"kind": "tick", **rec}, sort_keys=True)
        yield json.dumps({"kind": "end", **self.end}, sort_keys=True)

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "RunLog":
        header, ticks, end = None, [], None
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                kind = rec.pop("kind")
            except (json.JSONDecodeError, KeyError, AttributeError) as exc:
                raise LogFormatError(f"line {n}: bad record ({exc})") from exc
            if kind == "header":
                header = rec
            elif kind == "tick":
                ticks.append(rec)
            elif kind == "end":
                end = rec
            else:
                raise LogFormatError(f"line {n}: unknown record kind {kind!r}")
        if header is None or header.get("schema") != LOG_SCHEMA:
            raise LogFormatError("missing or foreign log header")
        if header.get("version") != LOG_VERSION:
            raise LogFormatError(f"unsupported log version {header.get('version')!r}")
        if end is None or "pose" not in end:
            raise LogFormatError("log has no end record (incomplete run?)")
        return cls(header, ticks, end)

    @classmethod
    def load(cls, path) -> "RunLog":
        return cls.loads(Path(path).read_text())


@dataclass
class Metrics:
    end_point_distance: float
    path_completed: bool
    min_clearance: float
    collision: bool
    mean_tick_ms: Optional[float] = None
    ticks: int = 0
    termination: str = ""

    def to_dict(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("mean_tick_ms")
        return d

    def format(self, include_timing: bool = False) -> str:
        out = []
        for k, v in self.to_dict(include_timing).items():
            if isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = f"{v:.3f}"
            out.append(f"{k}: {v}")
        return "\n".join(out)


# --------------------------------------------------------------------------
# teach


class PurePursuit:
    """Waypoint follower standing in for the human operator of a teach run."""

    def __init__(self, waypoints: Sequence[Tuple[float, float]], speed: float, lookahead: float,
                 omega_max: float):
        self.pts = np.asarray(waypoints, dtype=float)
        seg = np.diff(self.pts, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if self.seg_len.sum() <= 0:
            raise ScenarioError("teach path has zero length")
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])
        self.speed = speed
        self.lookahead = lookahead
        self.omega_max = omega_max
        self.progress = 0.0

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        k = int(np.searchsorted(self.cum, s, side="right") - 1)
        k = min(k, len(self.seg_len) - 1)
        while self.seg_len[k] == 0 and k > 0:
            k -= 1
        a = (s - self.cum[k]) / self.seg_len[k] if self.seg_len[k] > 0 else 0.0
        return self.pts[k] + a * (self.pts[k + 1] - self.pts[k])

    def _project(self, x: float, y: float) -> float:
        best_s, best_d = self.progress, math.inf
        p = np.array([x, y])
        for k in range(len(self.seg_len)):
            if self.cum[k + 1] < self.progress - 1e-9 or self.seg_len[k] == 0:
                continue
            a, b = self.pts[k], self.pts[k + 1]
            t = float(np.clip(np.dot(p - a, b - a) / self.seg_len[k] ** 2, 0.0, 1.0))
            d = float(np.hypot(*(a + t * (b - a) - p)))
            s = self.cum[k] + t * self.seg_len[k]
            if d < best_d - 1e-12 and s >= self.progress - 1e-9:
                best_s, best_d = s, d
            if self.cum[k] > self.progress + 2.0 * self.lookahead + 1.0:
                break
        return max(best_s, self.progress)

    def command(self, pose: Pose2, dt: float) -> Optional[VelocityCommand]:
        """Next command, or None once the end of the path is reached."""
        self.progress = self._project(pose.x, pose.y)
        end = self.pts[-1]
        remaining = math.hypot(end[0] - pose.x, end[1] - pose.y)
        if self.length - self.progress < 1e-3 or remaining < 1e-3:
            return None
        target = self.point_at(self.progress + self.lookahead)
        lx, ly = pose.to_local(float(target[0]), float(target[1]))
        dist = math.hypot(lx, ly)
        alpha = math.atan2(ly, lx)
        v = self.speed
        if self.length - self.progress <= self.lookahead:
            # approach the final waypoint directly and land on it
            v = min(self.speed, max(dist, 0.0) / dt * math.cos(alpha)) if abs(alpha) < math.pi / 2 else 0.0
            if v <= 1e-3:
                return None
        omega = 2.0 * self.speed * math.sin(alpha) / max(dist, 1e-6)
        omega = float(np.clip(omega, -self.omega_max, self.omega_max))
        return VelocityCommand(v, omega)


def _pose_list(p: Pose2) -> list:
    return [p.x, p.y, p.heading]


def _header(mode: str, scenario: Scenario) -> dict:
    return {"schema": LOG_SCHEMA, "version": LOG_VERSION, "mode": mode, "scenario": scenario.name,
            "rng_seed": scenario.rng_seed, "control_rate": scenario.control_rate}


def run_teach(scenario: Scenario) -> Tuple[KeyframeMap, RunLog]:
    """Drive the waypoint path with pure pursuit and build the keyframe map."""
    world = scenario.world
    dt = scenario.dt
    follower = PurePursuit(scenario.waypoints, scenario.teach_speed, scenario.lookahead,
                           scenario.teach_omega_max)
    builder = MapBuilder(world.intrinsics, scenario.teach)
    noise = scenario.noise
    log = RunLog(_header("teach", scenario))
    pose = scenario.start_pose
    max_ticks = int(math.ceil(scenario.duration_limit * scenario.control_rate))
    k = 0
    while True:
        t = k * dt
        frame = observe(world, pose, t, k, noise, STREAM_TEACH)
        n_before = len(builder.keyframes)
        builder.process(frame, pose)
        emitted = [kf.id for kf in builder.keyframes[n_before:]]
        reasons = builder.reasons[n_before:]
        flow, inliers = (None, None)
        if builder.measurements and builder.measurements[-1][0] == k:
            _, flow, inliers = builder.measurements[-1]
        cmd = follower.command(pose, dt)
        rec = {"tick": k, "t": t, "pose": _pose_list(pose), "features": len(frame),
               "flow": flow, "inliers": inliers, "keyframes": emitted, "reasons": reasons,
               "cmd": None if cmd is None else [cmd.linear, cmd.angular]}
        log.ticks.append(rec)
        if cmd is None or k >= max_ticks:
            break
        pose = step_unicycle(pose, cmd, dt)
        k += 1
    kmap = builder.finalize()
    log.end = {"pose": _pose_list(pose), "tick": k, "status": "finished", "keyframes": len(kmap),
               "reasons": list(builder.reasons)}
    return kmap, log


# --------------------------------------------------------------------------
# repeat


def _library_for(scenario: Scenario, library: Optional[CandidateLibrary]) -> CandidateLibrary:
    if library is not None:
        if library.config != scenario.library:
            raise ScenarioError("candidate library was generated with a different configuration")
        return library
    return generate_library(scenario.library)


def run_repeat(kmap: KeyframeMap, scenario: Scenario, library: Optional[CandidateLibrary] = None,
               teach_log: Optional[RunLog] = None) -> Tuple[RunLog, Metrics]:
    """Closed-loop repeat of a taught map from the teach start pose."""
    if kmap is None or len(kmap) < 2:
        raise ValueError("repeat needs a map with at least two keyframes")
    lib = _library_for(scenario, library)
    world = scenario.repeat_world()
    obstacles = world.obstacles
    dt = scenario.dt
    noise = scenario.noise
    blind = replace(noise, dropout_prob=1.0)
    tcfg = scenario.tracker
    radius = scenario.grid.robot_radius

    log = RunLog(_header("repeat", scenario))
    state = TrackerState()
    pose = scenario.start_pose
    max_ticks = int(math.ceil(scenario.duration_limit * scenario.control_rate))
    min_clear = math.inf
    collision = False
    tick_times = []
    termination = "duration"
    k = 0
    while True:
        t = k * dt
        clear = obstacles.clearance(pose.x, pose.y, t) - radius
        min_clear = min(min_clear, clear)
        if clear <= 0:
            collision = True
            termination = "collision"
            break
        if k >= max_ticks:
            break
        t0 = _time.perf_counter()
        in_blackout = scenario.blackout is not None and scenario.blackout[0] <= k < scenario.blackout[1]
        frame = observe(world, pose, t, k, blind if in_blackout else noise, STREAM_REPEAT)
        state, window = track(state, frame, kmap, tcfg)
        state = check_finished(state, window, kmap, tcfg)
        rec = {"tick": k, "t": t, "pose": _pose_list(pose), "features": len(frame),
               "tracked_index": state.tracked_index, "status": state.status.value,
               "inliers_l": None, "inliers_l1": None, "flow_l": None, "flow_l1": None, "radial_gap": None,
               "event": None, "p": None, "feasible": None, "path_id": None,
               "clearance": clear, "loop_search": state.loop_searched}
        if window is not None:
            rec.update(inliers_l=window.inliers_l, inliers_l1=window.inliers_l1,
                       flow_l=window.f_l, flow_l1=window.f_l1, radial_gap=window.radial_gap)
        if state.status == Status.FINISHED:
            rec["cmd"] = [0.0, 0.0]
            log.ticks.append(rec)
            tick_times.append(_time.perf_counter() - t0)
            termination = "finished"
            break
        if state.status == Status.LOST:
            cmd = VelocityCommand.stop()
        else:
            dist = movement_probabilities(window, tcfg)
            goal = select_goal(dist)
            scan = raycast_scan(obstacles, pose, t, scenario.beam_count, scenario.max_range)
            grid = build_grid(scan, scenario.grid)
            feasible = filter_collisions(lib, grid)
            lib_cmd, best = select_command(lib, feasible, goal)
            if best is None:
                cmd = VelocityCommand.stop()
            else:
                # the chosen group's angular rate is published as is; linear speed is the cruise speed
                cmd = VelocityCommand(scenario.repeat_speed, lib_cmd.angular)
            rec.update(event=EVENT_NAMES[dist.event], p=list(dist.as_tuple()),
                       feasible=int(len(feasible)), path_id=best)
        rec["cmd"] = [cmd.linear, cmd.angular]
        log.ticks.append(rec)
        tick_times.append(_time.perf_counter() - t0)
        pose = step_unicycle(pose, cmd, dt)
        k += 1

    log.end = {"pose": _pose_list(pose), "tick": k, "status": state.status.value,
               "termination": termination, "min_clearance": min_clear, "collision": collision}
    mean_ms = 1000.0 * float(np.mean(tick_times)) if tick_times else 0.0
    if teach_log is not None:
        metrics = evaluate(log, teach_log)
    else:
        goal = kmap[len(kmap) - 1].debug_pose
        epd = float("nan") if goal is None else pose.distance_to(goal)
        metrics = Metrics(epd, state.status == Status.FINISHED, min_clear, collision, None, k, termination)
    metrics.mean_tick_ms = mean_ms
    return log, metrics


# --------------------------------------------------------------------------
# evaluation


def sweep_clearance(log: RunLog, obstacles: ObstacleWorld, robot_radius: float) -> float:
    """Minimum clearance of the logged trajectory recomputed from ground-truth geometry."""
    best = math.inf
    for rec in log.ticks:
        x, y, _ = rec["pose"]
        best = min(best, obstacles.clearance(x, y, rec["t"]) - robot_radius)
    return best


def evaluate(repeat_log: RunLog, teach_log: RunLog, obstacles: Optional[ObstacleWorld] = None,
             robot_radius: float = GridConfig().robot_radius) -> Metrics:
    end = repeat_log.end
    epd = repeat_log.final_pose.distance_to(teach_log.final_pose)
    if obstacles is not None:
        min_clear = sweep_clearance(repeat_log, obstacles, robot_radius)
    elif "min_clearance" in end:
        min_clear = float(end["min_clearance"])
    else:
        clears = [r["clearance"] for r in repeat_log.ticks if r.get("clearance") is not None]
        min_clear = min(clears) if clears else math.inf
    collision = bool(end.get("collision", False)) or min_clear <= 0
    return Metrics(float(epd), end.get("status") == Status.FINISHED.value, float(min_clear), collision,
                   None, int(end.get("tick", len(repeat_log.ticks))), str(end.get("termination", "")))


TRACE_COLUMNS = ("tick", "tracked_index", "flow_l", "flow_l1", "inliers_l", "inliers_l1",
                 "event", "p_straight", "p_left", "p_right")


def trace_rows(log: RunLog) -> List[dict]:
    rows = []
    for r in log.ticks:
        p = r.get("p") or [None, None, None]
        rows.append({"tick": r["tick"], "tracked_index": r.get("tracked_index"),
                     "flow_l": r.get("flow_l"), "flow_l1": r.get("flow_l1"),
                     "inliers_l": r.get("inliers_l"), "inliers_l1": r.get("inliers_l1"),
                     "event": r.get("event"), "p_straight": p[0], "p_left": p[1], "p_right": p[2]})
    return rows


def nearest_keyframe(kmap: KeyframeMap, pose: Pose2) -> int:
    """Ground-truth nearest keyframe (by teach position) for tracking checks."""
    d = [math.inf if kf.debug_pose is None else pose.distance_to(kf.debug_pose) for kf in kmap.keyframes]
    return int(np.argmin(d))
