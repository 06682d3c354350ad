"""Keyframe tracking during repeat and flow-based movement decisions."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .perception import Frame, MatchConfig, MatchSet, feature_flow, match_frames
from .teach import KeyframeMap

STRAIGHT, LEFT, RIGHT = 0, 1, 2
EVENT_NAMES = ("straight", "left", "right")
GOALS = {STRAIGHT: (1.0, 0.0), LEFT: (1.0, 1.0), RIGHT: (1.0, -1.0)}


class Status(str, Enum):
    TRACKING = "tracking"
    LOST = "lost"
    FINISHED = "finished"


@dataclass(frozen=True)
class TrackerConfig:
    n_lost: int = 15
    loop_window: int = 5
    sigma: float = 20.0
    sigma_w: float = 2.0
    end_flow: float = 10.0
    # Arrival test on the final keyframe: median radial pixel gap (keyframe
    # minus current) must fall to this value. None disables it.
    end_radial_gap: Optional[float] = 0.0
    ratio: float = 0.8

    def __post_init__(self):
        if min(self.n_lost, self.loop_window, self.sigma, self.sigma_w, self.end_flow) <= 0:
            raise ValueError("tracker parameters must be positive")

    @property
    def match_config(self) -> MatchConfig:
        return MatchConfig(ratio=self.ratio)


@dataclass(frozen=True)
class FlowWindow:
    f_l: float
    f_l1: Optional[float]
    inliers_l: int
    inliers_l1: int
    radial_gap: Optional[float] = None


@dataclass(frozen=True)
class TrackerState:
    tracked_index: int = 0
    status: Status = Status.TRACKING
    last_inlier_counts: Tuple[int, int] = (0, 0)
    frames_since_ok: int = 0
    loop_searched: bool = False


@dataclass(frozen=True)
class MovementDistribution:
    p_straight: float
    p_left: float
    p_right: float

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.p_straight, self.p_left, self.p_right)

    @property
    def event(self) -> int:
        """Most probable event; ties prefer straight, then left."""
        p = self.as_tuple()
        best = max(p)
        return next(k for k in (STRAIGHT, LEFT, RIGHT) if p[k] == best)


def _match(kmap: KeyframeMap, index: int, frame: Frame, cfg: TrackerConfig) -> MatchSet:
    # keyframe as query, live view as reference: positive flow = keyframe lies to the left
    return match_frames(kmap[index].features, frame, cfg.match_config)


def radial_gap(matches: MatchSet, cx: float) -> float:
    """Median of |u_kf - cx| - |u_cur + f - cx| with f the mean flow.

    Adding the mean flow back to the live pixels removes the heading
    difference, leaving the expansion/contraction due to the along-track
    offset: positive while the keyframe is still ahead.
    """
    u_kf = matches.query_pixels[:, 0]
    u_cur = matches.reference_pixels[:, 0]
    shift = float(np.mean(u_kf - u_cur))
    return float(np.median(np.abs(u_kf - cx) - np.abs(u_cur + shift - cx)))


def _window(kmap: KeyframeMap, l: int, frame: Frame, cfg: TrackerConfig,
            m_l: Optional[MatchSet] = None, m_l1: Optional[MatchSet] = None) -> FlowWindow:
    m_l = _match(kmap, l, frame, cfg) if m_l is None else m_l
    f_l, n_l = feature_flow(m_l)
    f_l1, n_l1 = None, 0
    if l + 1 < len(kmap):
        m_l1 = _match(kmap, l + 1, frame, cfg) if m_l1 is None else m_l1
        n_l1 = m_l1.inlier_count
        if n_l1:
            f_l1 = feature_flow(m_l1)[0]
    gap = radial_gap(m_l, kmap.intrinsics.cx) if l == len(kmap) - 1 else None
    return FlowWindow(f_l, f_l1, n_l, n_l1, gap)


def track(state: TrackerState, frame: Frame, kmap: KeyframeMap,
          cfg: TrackerConfig = TrackerConfig()) -> Tuple[TrackerState, Optional[FlowWindow]]:
    """Advance the tracked keyframe with one live frame.

    Returns the new state and the flow window around the tracked keyframe, or
    ``None`` for the window when tracking is lost.
    """
    if state.status == Status.FINISHED:
        raise ValueError("tracker already finished")
    k = len(kmap)
    l = state.tracked_index
    m_l = _match(kmap, l, frame, cfg)
    m_next = _match(kmap, l + 1, frame, cfg) if l + 1 < k else None
    n_l = m_l.inlier_count
    n_next = m_next.inlier_count if m_next is not None else 0

    # the final keyframe is taken as soon as it has been reached, even if the
    # previous one still matches better (it usually does while the view closes in)
    reached_end = (l + 1 == k - 1 and cfg.end_radial_gap is not None and n_next >= cfg.n_lost
                   and radial_gap(m_next, kmap.intrinsics.cx) <= cfg.end_radial_gap)
    if n_next > n_l or reached_end:
        new_l, best = l + 1, n_next
        window = _window(kmap, new_l, frame, cfg, m_l=m_next) if best else None
    else:
        new_l, best = l, n_l
        window = _window(kmap, l, frame, cfg, m_l=m_l, m_l1=m_next) if best else None

    if best >= cfg.n_lost:
        return TrackerState(new_l, Status.TRACKING, (n_l, n_next), 0, False), window

    # local loop detection around the last tracked keyframe
    lo, hi = max(0, l - cfg.loop_window), min(k - 1, l + cfg.loop_window)
    counts = {i: (n_l if i == l else n_next if i == l + 1 else _match(kmap, i, frame, cfg).inlier_count)
              for i in range(lo, hi + 1)}
    # ties: nearest to the last tracked keyframe, then lower index
    found = max(counts, key=lambda i: (counts[i], -abs(i - l), -i))
    if counts[found] >= cfg.n_lost:
        return (TrackerState(found, Status.TRACKING, (n_l, n_next), 0, True),
                _window(kmap, found, frame, cfg))
    return TrackerState(l, Status.LOST, (n_l, n_next), state.frames_since_ok + 1, True), None


def event_weights(sigma_w: float) -> Tuple[float, float]:
    return 1.0, math.exp(-1.0 / (2.0 * sigma_w ** 2))


def raw_scores(window: FlowWindow, cfg: TrackerConfig = TrackerConfig()) -> Tuple[float, float, float]:
    """Unnormalised straight/left/right scores from the flow window."""
    flows = [window.f_l] if window.f_l1 is None else [window.f_l, window.f_l1]
    weights = event_weights(cfg.sigma_w)
    s = [0.0, 0.0, 0.0]
    for w, f in zip(weights, flows):
        g = math.exp(-f * f / (2.0 * cfg.sigma ** 2))
        s[STRAIGHT] += w * g
        if f > 0:
            s[LEFT] += w * (1.0 - g)
        elif f < 0:
            s[RIGHT] += w * (1.0 - g)
    return s[0], s[1], s[2]


def movement_probabilities(window: FlowWindow, cfg: TrackerConfig = TrackerConfig()) -> MovementDistribution:
    s = raw_scores(window, cfg)
    total = sum(s)
    return MovementDistribution(s[0] / total, s[1] / total, s[2] / total)


def select_goal(dist: MovementDistribution) -> Tuple[float, float]:
    """Local goal point in the robot frame for the most probable event."""
    return GOALS[dist.event]


def check_finished(state: TrackerState, window: Optional[FlowWindow], kmap: KeyframeMap,
                   cfg: TrackerConfig = TrackerConfig()) -> TrackerState:
    if state.status != Status.TRACKING or window is None:
        return state
    if state.tracked_index != len(kmap) - 1:
        return state
    if abs(window.f_l) > cfg.end_flow or window.inliers_l < cfg.n_lost:
        return state
    if cfg.end_radial_gap is not None and window.radial_gap is not None \
            and window.radial_gap > cfg.end_radial_gap:
        return state
    return replace(state, status=Status.FINISHED)
