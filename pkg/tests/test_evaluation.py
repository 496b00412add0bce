import math

import numpy as np
import pytest
from helpers import simple_scene, static_agent
from hypothesis import given
from hypothesis import strategies as st

from corridor.evaluation import (
    GridSpec,
    Polyline,
    aggregate,
    collision_flags,
    collision_rates,
    evaluate,
    l2_metric,
    load_report,
    rasterize,
    save_report,
)
from corridor.geometry import (
    EgoFootprint,
    OrientedRect,
    interior_distance,
    rect_vertices,
)
from corridor.scene import KINDS, gen_scene

SPEC = GridSpec(0.1, (40.0, 40.0))
FP = EgoFootprint()


def test_rasterize_examples():
    assert rasterize([], SPEC).count() == 0
    assert rasterize([OrientedRect(0, 0, 0, 1, 1)], SPEC).count() == 100
    a, b = OrientedRect(-5, 0, 0.3, 2, 1), OrientedRect(5, 2, 1.1, 3, 1.5)
    assert rasterize([a, b], SPEC).count() == rasterize([a], SPEC).count() + rasterize([b], SPEC).count()


def test_polyline_stroke_is_one_cell():
    line = rasterize([Polyline(np.array([[-0.98, 0.05], [0.98, 0.05]]))], SPEC)
    assert line.count() == 20


@given(
    st.floats(-5, 5), st.floats(-5, 5), st.floats(-math.pi, math.pi), st.floats(0.2, 6), st.floats(0.2, 6),
    st.floats(0, 2), st.floats(0, 2),
)
def test_rasterize_monotone(cx, cy, th, l, w, dl, dw):
    small = rasterize([OrientedRect(cx, cy, th, l, w)], SPEC).cells
    big = rasterize([OrientedRect(cx, cy, th, l + dl, w + dw)], SPEC).cells
    assert np.all(big[small])


@given(
    st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi),
    st.floats(0.5, 5), st.floats(0.5, 3),
)
def test_deep_overlaps_survive_resolution_changes(dx, dy, th_a, th_b, l, w):
    a = OrientedRect(0, 0, th_a, 4, 2)
    b = OrientedRect(dx, dy, th_b, l, w)
    # depth of the deepest vertex of either rectangle inside the other
    depth = max(
        max(interior_distance(v, a) for v in rect_vertices(b)),
        max(interior_distance(v, b) for v in rect_vertices(a)),
        interior_distance(b.center, a) if interior_distance(b.center, a) > 0 else 0.0,
    )
    for res in (0.2, 0.1, 0.05):
        if depth > 2 * math.sqrt(2) * res:
            spec = GridSpec(res, (20.0, 20.0))
            assert np.any(rasterize([a], spec).cells & rasterize([b], spec).cells)


def test_far_ego_no_collisions():
    scene = simple_scene(agents=(static_agent("a", 30, 30),), curbs=(np.array([[-10, 20.0], [10, 20.0]]),))
    acr, ccr = collision_rates(np.zeros((6, 4)), FP, scene, SPEC)
    assert not acr.any() and not ccr.any()


def test_constructed_agent_collision_at_t2():
    agent = static_agent("a", 10.0, 0.0, times=(0.9, 1.1))
    scene = simple_scene(agents=(agent,))
    traj = np.zeros((6, 4))
    traj[1, 0] = 9.0  # overlap only at t=2 (1.0 s)
    a, c = collision_flags(traj, FP, scene, SPEC)
    assert a.tolist() == [False, True, False, False, False, False] and not c.any()
    acr, _ = collision_rates(traj, FP, scene, SPEC)
    assert acr.tolist() == [0, 1, 1, 1, 1, 1]


def test_curb_straddle():
    scene = simple_scene(curbs=(np.array([[-20.0, 0.42], [20.0, 0.42]]),))
    _, c = collision_flags(np.zeros((6, 4)), FP, scene, SPEC)
    assert c.all()


def test_flags_equal_full_raster_intersection():
    scene = gen_scene(6, "narrow")
    traj = scene.future_states().copy()
    traj[:, 1] += np.linspace(0, 2.5, 6)
    a, c = collision_flags(traj, FP, scene, SPEC)
    from corridor.evaluation import _planning_frame_scene

    for k, x in enumerate(traj):
        ego = rasterize([FP.rect_at(*x[:3])], SPEC).cells
        boxes, curbs = _planning_frame_scene(scene, (k + 1) * scene.dt)
        assert a[k] == bool(np.any(ego & rasterize(boxes, SPEC).cells))
        assert c[k] == bool(np.any(ego & rasterize([Polyline(cb) for cb in curbs], SPEC).cells))


@pytest.mark.parametrize("kind", KINDS)
def test_ground_truth_inside_clean_corridor_has_no_collisions(kind):
    from corridor.annotation import annotate_corridor
    from corridor.geometry import rect_to_halfspaces

    for seed in range(3):
        scene = gen_scene(seed, kind)
        corr = annotate_corridor(scene)
        gt = scene.future_states()
        inside = all(
            rect_to_halfspaces(r).contains(rect_vertices(FP.rect_at(*x[:3])), tol=1e-9).all()
            for r, x in zip(corr, gt)
        )
        if inside and not corr.flagged:
            acr, ccr = collision_rates(gt, FP, scene, GridSpec())
            assert not acr.any() and not ccr.any()


def test_l2_examples():
    gt = np.zeros((6, 4))
    assert l2_metric(gt, gt)[1] == 0
    per_t, avg = l2_metric(gt + [0.3, 0, 0, 0], gt)
    np.testing.assert_allclose(per_t, 0.3)
    assert avg == pytest.approx(0.3)
    off = np.zeros((3, 4))
    off[:, 0] = [0.1, 0.2, 0.3]
    assert l2_metric(off, np.zeros((3, 4)))[1] == pytest.approx(0.2)
    with pytest.raises(ValueError):
        l2_metric(gt[:5], gt)


def test_aggregate_and_report_round_trip(tmp_path):
    rows = [
        (np.array([0, 1, 1, 1, 1, 1.0]), np.zeros(6), np.full(6, 0.5)),
        (np.zeros(6), np.array([0, 0, 0, 1, 1, 1.0]), np.full(6, 1.5)),
    ]
    rep = aggregate(rows, [0.01, 0.03])
    assert rep.acr_avg == pytest.approx(0.5)
    assert rep.ccr_avg == pytest.approx((0 + 0.5 + 0.5) / 3)
    assert rep.l2_avg == pytest.approx(1.0)
    assert all(0 <= r <= 1 for r in rep.acr_per_t + rep.ccr_per_t)
    assert aggregate(rows[::-1], [0.03, 0.01]).to_dict() == rep.to_dict()
    save_report(rep, tmp_path / "m.json")
    assert load_report(tmp_path / "m.json").count == 2


def test_evaluate_defaults_to_logged_future():
    scene = gen_scene(0, "straight")
    acr, ccr, l2 = evaluate(scene.future_states(), scene, SPEC)
    np.testing.assert_allclose(l2, 0, atol=1e-12)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(0.0)
