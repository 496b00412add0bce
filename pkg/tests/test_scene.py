import json
import math

import numpy as np
import pytest
from helpers import simple_scene, static_agent
from hypothesis import given
from hypothesis import strategies as st

from corridor.scene import (
    KINDS,
    AgentTrack,
    gen_scene,
    lane_filter,
    load_scene,
    obstacle_points_at,
    polyline_distance,
    sample_contour,
    save_scene,
    scene_from_dict,
    scene_to_dict,
    to_local_frame,
    to_world_frame,
)

coords = st.floats(-100, 100, allow_nan=False)


def test_sample_contour_even_division():
    np.testing.assert_allclose(sample_contour([(0, 0), (1, 0)], False, 0.5), [(0, 0), (0.5, 0), (1, 0)])


def test_sample_contour_closed_square_dedups_vertices():
    square = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert len(sample_contour(square, True, 0.5)) == 8
    assert len(sample_contour(square + [(0, 0)], True, 0.5)) == 8


def test_sample_contour_short_segment_keeps_endpoints():
    np.testing.assert_allclose(sample_contour([(0, 0), (0.3, 0)], False, 0.5), [(0, 0), (0.3, 0)])


def test_sample_contour_rejects_empty():
    with pytest.raises(ValueError):
        sample_contour(np.zeros((0, 2)), False, 0.5)


@given(st.lists(st.tuples(coords, coords), min_size=2, max_size=6), st.floats(0.05, 5.0), st.booleans())
def test_sample_contour_spacing(points, delta, closed):
    s = sample_contour(points, closed, delta)
    gaps = np.linalg.norm(np.diff(s, axis=0), axis=1)
    assert np.all(gaps <= delta + 1e-9)
    # every input vertex survives
    for p in points:
        assert np.min(np.linalg.norm(s - np.array(p), axis=1)) < 1e-9


def test_lane_filter_examples():
    crossing = np.array([[10.0, -5.0], [10.0, 5.0]])
    far = np.array([[-20.0, 10.0], [20.0, 10.0]])
    tangent = np.array([[-20.0, 0.25], [20.0, 0.25]])  # moving ego runs along y=0
    scene = simple_scene(v=3.0, lanes=(crossing, far, tangent))
    kept = lane_filter(scene, (-5.0, 5.0))
    assert len(kept) == 1 and np.array_equal(kept[0], far)
    # the oracle for the tangent lane: polyline distance is exactly the margin
    assert polyline_distance(scene.ego_log[:, 1:3], tangent) == pytest.approx(0.25)


def test_obstacle_points_examples():
    assert len(obstacle_points_at(simple_scene(), 1.0, 0.5)) == 0
    one = simple_scene(agents=(static_agent("a", 10, 0, 0.3),))
    obs = obstacle_points_at(one, 1.0, 0.5)
    assert len(obs) == 24 and set(obs.tags) == {"agent"}
    curb = np.array([[0.0, 3.0], [10.0, 3.0]])
    obs = obstacle_points_at(simple_scene(curbs=(curb,)), 1.0, 0.5)
    assert len(obs.select("curb")) == 21


def test_agent_outside_coverage_is_absent():
    scene = simple_scene(agents=(static_agent("a", 10, 0, times=(0.0, 1.0)),))
    assert len(obstacle_points_at(scene, 2.0, 0.5)) == 0


def test_obstacle_points_at_stored_pose_needs_no_interpolation():
    poses = np.array([[0.0, 0, 0, 0], [1.0, 4, 2, 0.5], [2.0, 9, 3, 1.0]])
    scene = simple_scene(agents=(AgentTrack("a", 2.0, 1.0, poses),))
    from corridor.geometry import OrientedRect, rect_vertices

    direct = sample_contour(rect_vertices(OrientedRect(4, 2, 0.5, 4, 2)), True, 0.5)
    np.testing.assert_array_equal(obstacle_points_at(scene, 1.0, 0.5).points, direct)


def test_heading_interpolation_shortest_arc():
    poses = np.array([[0.0, 0, 0, math.pi - 0.1], [1.0, 0, 0, -math.pi + 0.1]])
    a = AgentTrack("a", 1.0, 1.0, poses)
    assert abs(abs(a.pose_at(0.5)[2]) - math.pi) < 1e-9


def test_to_local_frame_examples():
    np.testing.assert_allclose(to_local_frame([(3.0, 4.0)], (0, 0, 0)), [(3, 4)])
    np.testing.assert_allclose(to_local_frame([(1.0, 2.0)], (1, 2, 0)), [(0, 0)])
    c, s = math.cos(math.pi / 2), math.sin(math.pi / 2)
    expected = np.array([[c, s], [-s, c]]) @ np.array([1.0, 0.0])
    np.testing.assert_allclose(to_local_frame([(1.0, 0.0)], (0, 0, math.pi / 2)), [expected], atol=1e-15)
    np.testing.assert_allclose(expected, [0, -1], atol=1e-15)


@given(st.lists(st.tuples(coords, coords), min_size=1, max_size=8), coords, coords, st.floats(-10, 10))
def test_frame_round_trip(points, px, py, th):
    pose = (px, py, th)
    back = to_world_frame(to_local_frame(points, pose), pose)
    np.testing.assert_allclose(back, np.array(points, float).reshape(-1, 2), atol=1e-9)


@pytest.mark.parametrize("kind", KINDS)
def test_gen_scene_deterministic(kind):
    a = json.dumps(scene_to_dict(gen_scene(7, kind)))
    b = json.dumps(scene_to_dict(gen_scene(7, kind)))
    assert a == b


def test_gen_scene_rejects_unknown_kind():
    with pytest.raises(ValueError):
        gen_scene(0, "roundabout")


def test_straight_curbs_bracket_ego():
    s = gen_scene(3, "straight")
    assert len(s.curbs) == 2
    origin = s.ego_pose_at(0.0)
    ys = [to_local_frame(c, origin)[:, 1] for c in s.curbs]
    near = [y[np.abs(to_local_frame(c, origin)[:, 0]) < 20] for y, c in zip(ys, s.curbs)]
    assert (near[0] < 0).all() and (near[1] > 0).all()


def test_cut_in_has_one_crossing_agent():
    s = gen_scene(11, "cut-in")
    assert len(s.agents) == 1
    origin = s.ego_pose_at(0.0)
    lateral = [to_local_frame(a.pose_at(t)[:2], origin)[0, 1] - to_local_frame(s.ego_pose_at(t)[:2], origin)[0, 1]
               for a in s.agents for t in np.arange(-2.0, 5.0, 0.5)]
    assert max(lateral) > 2.5 and min(np.abs(lateral)) < 0.5


def test_scene_json_round_trip(tmp_path):
    s = gen_scene(2, "narrow")
    save_scene(s, tmp_path / "s.json")
    back = load_scene(tmp_path / "s.json")
    assert json.dumps(scene_to_dict(back)) == json.dumps(scene_to_dict(load_scene(tmp_path / "s.json")))
    np.testing.assert_allclose(back.ego_log, s.ego_log, rtol=1e-8)


def test_scene_rejects_unknown_keys():
    d = scene_to_dict(simple_scene())
    d["extra"] = 1
    with pytest.raises(ValueError):
        scene_from_dict(d)


def test_scene_validation():
    with pytest.raises(ValueError):
        AgentTrack("a", 1.0, 1.0, np.array([[1.0, 0, 0, 0], [0.5, 0, 0, 0]]))
    with pytest.raises(ValueError):
        AgentTrack("a", 0.0, 1.0, np.array([[0.0, 0, 0, 0]]))
