import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowvtr.geometry import Pose2, step_unicycle
from flowvtr.perception import Frame, observe
from flowvtr.planner import generate_library, select_command
from flowvtr.teach import Keyframe, KeyframeMap, build_map
from flowvtr.tracker import (
    LEFT,
    RIGHT,
    STRAIGHT,
    FlowWindow,
    MovementDistribution,
    Status,
    TrackerConfig,
    TrackerState,
    check_finished,
    event_weights,
    movement_probabilities,
    raw_scores,
    select_goal,
    track,
)

from conftest import INTR, distant_field
from test_perception import unit_rows

CFG = TrackerConfig(sigma=20.0, sigma_w=2.0)
flows = st.floats(-300, 300, allow_nan=False)


# ---------------------------------------------------------------- movement probabilities

@pytest.mark.parametrize("f_l,f_l1,expected", [
    (0.0, 0.0, (1.0, 0.0, 0.0)),
    (40.0, 40.0, (0.135335, 0.864665, 0.0)),
    (-30.0, 10.0, (0.586165, 0.055085, 0.358750)),
])
def test_probability_examples(f_l, f_l1, expected):
    p = movement_probabilities(FlowWindow(f_l, f_l1, 50, 50), CFG).as_tuple()
    # quoted to 6 decimals (from rounded intermediates), so agreement is to ~1e-6
    assert p == pytest.approx(expected, abs=1e-6)


def test_raw_score_example():
    assert raw_scores(FlowWindow(-30.0, 10.0, 50, 50), CFG) == pytest.approx((1.103453, 0.103696, 0.675348), abs=1e-6)


def test_single_flow_uses_only_nearest_term():
    p = movement_probabilities(FlowWindow(40.0, None, 50, 0), CFG)
    assert p.as_tuple() == pytest.approx((math.exp(-2), 1 - math.exp(-2), 0.0), abs=1e-12)
    assert sum(raw_scores(FlowWindow(40.0, None, 50, 0), CFG)) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(flows, flows, st.floats(0.5, 50), st.floats(0.1, 10))
def test_raw_scores_sum_to_weight_total(f_l, f_l1, sigma, sigma_w):
    cfg = TrackerConfig(sigma=sigma, sigma_w=sigma_w)
    s = raw_scores(FlowWindow(f_l, f_l1, 50, 50), cfg)
    assert all(v >= 0 for v in s)
    assert sum(s) == pytest.approx(sum(event_weights(sigma_w)), abs=1e-12)
    p = movement_probabilities(FlowWindow(f_l, f_l1, 50, 50), cfg).as_tuple()
    assert sum(p) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(flows, st.one_of(st.none(), flows))
def test_antisymmetry(f_l, f_l1):
    p = movement_probabilities(FlowWindow(f_l, f_l1, 50, 50), CFG)
    q = movement_probabilities(FlowWindow(-f_l, None if f_l1 is None else -f_l1, 50, 50), CFG)
    assert q.p_straight == pytest.approx(p.p_straight, abs=1e-12)
    assert q.p_left == pytest.approx(p.p_right, abs=1e-12)
    assert q.p_right == pytest.approx(p.p_left, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(flows, flows)
def test_straight_probability_non_increasing_in_flow(a, b):
    small, large = sorted([abs(a), abs(b)])
    p_small = movement_probabilities(FlowWindow(small, 0.0, 50, 50), CFG).p_straight
    p_large = movement_probabilities(FlowWindow(math.copysign(large, b), 0.0, 50, 50), CFG).p_straight
    assert p_large <= p_small + 1e-15


@given(st.floats(0.05, 1e3))
def test_nearest_keyframe_weighs_more(sigma_w):
    w0, w1 = event_weights(sigma_w)
    assert w0 > w1 > 0


# ---------------------------------------------------------------- goal selection

@pytest.mark.parametrize("p,goal", [
    ((1.0, 0.0, 0.0), (1.0, 0.0)),
    ((0.1, 0.8, 0.1), (1.0, 1.0)),
    ((0.4, 0.3, 0.3), (1.0, 0.0)),
    ((0.1, 0.1, 0.8), (1.0, -1.0)),
    ((0.2, 0.4, 0.4), (1.0, 1.0)),      # tie: left before right
    ((0.4, 0.4, 0.2), (1.0, 0.0)),      # tie: straight first
])
def test_select_goal(p, goal):
    assert select_goal(MovementDistribution(*p)) == goal


def test_event_codes():
    assert MovementDistribution(0.5, 0.2, 0.3).event == STRAIGHT
    assert MovementDistribution(0.2, 0.5, 0.3).event == LEFT
    assert MovementDistribution(0.2, 0.3, 0.5).event == RIGHT


# ---------------------------------------------------------------- keyframe tracking

def disjoint_map(sizes=(80, 80, 80, 80), seed=0):
    """Keyframes whose features share no descriptors.

    Tests size a keyframe to exactly the overlap they want: features missing
    from the live view could otherwise pick up occasional spurious matches.
    """
    rng = np.random.default_rng(seed)
    kfs = []
    for i, n in enumerate(sizes):
        f = Frame(rng.uniform(50, 600, (n, 2)), unit_rows(rng, n), np.arange(n) + 1000 * i, i, float(i))
        kfs.append(Keyframe(i, f, 0.0 if i < len(sizes) - 1 else None, n))
    return KeyframeMap(kfs, INTR)


def live_view(kmap, counts, shift=0.0):
    """A live frame containing the first ``counts[i]`` features of keyframe ``i``."""
    px, desc, ids = [], [], []
    for i, n in counts.items():
        f = kmap[i].features
        px.append(f.pixels[:n] - [shift, 0.0])
        desc.append(f.descriptors[:n])
        ids.append(f.landmark_ids[:n])
    return Frame(np.vstack(px), np.vstack(desc), np.concatenate(ids), 99, 9.9)


def test_track_moves_to_better_next_keyframe():
    kmap = disjoint_map((80, 42, 57, 80))
    state, window = track(TrackerState(1), live_view(kmap, {1: 42, 2: 57}), kmap, CFG)
    assert state.tracked_index == 2 and state.status == Status.TRACKING
    assert state.last_inlier_counts == (42, 57)
    assert window.inliers_l == 57


def test_track_keeps_index_on_tie():
    kmap = disjoint_map((80, 40, 40, 80))
    state, window = track(TrackerState(1), live_view(kmap, {1: 40, 2: 40}), kmap, CFG)
    assert state.tracked_index == 1
    assert window.inliers_l == 40 and window.inliers_l1 == 40


def test_track_lost_below_threshold():
    kmap = disjoint_map((80, 8, 6, 80))
    state, window = track(TrackerState(1), live_view(kmap, {1: 8, 2: 6}), kmap, CFG)
    assert state.status == Status.LOST and window is None
    assert state.loop_searched
    assert state.tracked_index == 1 and state.frames_since_ok == 1


def test_local_loop_search_recovers():
    kmap = disjoint_map(sizes=(60, 60, 3, 2, 60, 40, 60, 60, 60, 60))
    state, window = track(TrackerState(2), live_view(kmap, {2: 3, 3: 2, 5: 40}), kmap, CFG)
    assert state.status == Status.TRACKING and state.tracked_index == 5 and state.loop_searched
    assert window.inliers_l == 40


def test_loop_search_is_local():
    kmap = disjoint_map(sizes=(60, 3) + (60,) * 7 + (50, 60, 60))
    state, _ = track(TrackerState(1), live_view(kmap, {1: 3, 9: 50}), kmap, CFG)
    assert state.status == Status.LOST     # keyframe 9 is outside the +-5 window


def test_window_flows_and_final_keyframe():
    kmap = disjoint_map((80, 50, 30, 50))
    _, window = track(TrackerState(1), live_view(kmap, {1: 50, 2: 30}, shift=7.0), kmap, CFG)
    # keyframe pixels sit 7 px right of the live ones
    assert window.f_l == pytest.approx(7.0) and window.f_l1 == pytest.approx(7.0)
    state, window = track(TrackerState(3), live_view(kmap, {3: 50}), kmap, CFG)
    assert state.tracked_index == 3 and window.f_l1 is None and window.inliers_l1 == 0


def test_track_refuses_finished_state():
    kmap = disjoint_map()
    with pytest.raises(ValueError):
        track(TrackerState(3, Status.FINISHED), live_view(kmap, {3: 50}), kmap, CFG)


# ---------------------------------------------------------------- termination

def test_check_finished_examples():
    kmap = disjoint_map()
    cfg = TrackerConfig(end_flow=10.0, end_radial_gap=None)
    last = TrackerState(3)
    assert check_finished(last, FlowWindow(2.0, None, 40, 0), kmap, cfg).status == Status.FINISHED
    assert check_finished(TrackerState(2), FlowWindow(0.0, 0.0, 40, 40), kmap, cfg).status == Status.TRACKING
    assert check_finished(TrackerState(3, Status.LOST), None, kmap, cfg).status == Status.LOST
    assert check_finished(last, FlowWindow(12.0, None, 40, 0), kmap, cfg).status == Status.TRACKING
    assert check_finished(last, FlowWindow(2.0, None, 10, 0), kmap, cfg).status == Status.TRACKING


def test_check_finished_waits_for_radial_gap():
    kmap = disjoint_map()
    cfg = TrackerConfig(end_flow=10.0, end_radial_gap=0.0)
    assert check_finished(TrackerState(3), FlowWindow(2.0, None, 40, 0, 3.5), kmap, cfg).status == Status.TRACKING
    assert check_finished(TrackerState(3), FlowWindow(2.0, None, 40, 0, -0.5), kmap, cfg).status == Status.FINISHED


def test_config_rejects_nonpositive():
    with pytest.raises(ValueError):
        TrackerConfig(n_lost=0)
    with pytest.raises(ValueError):
        TrackerConfig(sigma_w=0.0)


# ---------------------------------------------------------------- closed-loop sign

@pytest.fixture(scope="module")
def library():
    return generate_library()


@pytest.mark.parametrize("offset", [-0.3, -0.15, -0.08, 0.08, 0.15, 0.3])
def test_one_control_step_reduces_flow(offset, library):
    """Turning toward the chosen event shrinks the flow against the tracked keyframe."""
    world = distant_field(n=150, bearing_limit=0.5)
    poses = [Pose2(0, 0, 0), Pose2(0.3, 0, 0)]
    kmap = build_map([observe(world, p, i, i) for i, p in enumerate(poses)], INTR, poses=poses)
    pose = Pose2(0.0, 0.0, offset)
    state, window = track(TrackerState(0), observe(world, pose, 0.0, 0), kmap, CFG)
    assert state.status == Status.TRACKING
    dist = movement_probabilities(window, CFG)
    assert dist.event == (RIGHT if offset > 0 else LEFT)
    cmd, _ = select_command(library, library.path_ids, select_goal(dist))
    assert math.copysign(1, cmd.angular) == -math.copysign(1, offset)
    after = step_unicycle(pose, cmd, 0.1)
    _, window2 = track(state, observe(world, after, 0.1, 1), kmap, CFG)
    assert abs(window2.f_l) < abs(window.f_l)
