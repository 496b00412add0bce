import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import central_difference, relative_error

from corridor.annotation import Corridor
from corridor.experiments import loss_configs
from corridor.geometry import OrientedRect
from corridor.losses import (
    agent_safety_loss,
    area_loss,
    corridor_loss,
    decode_corridor,
    encode_corridor,
    imitation_loss,
    map_safety_loss,
)

BOX = OrientedRect(0, 0, 0, 4, 2)


def corridor_of(rect, n=6):
    return Corridor((rect,) * n)


def test_corridor_loss_examples():
    gt = corridor_of(BOX)
    assert corridor_loss(gt, gt).value == 0
    off = Corridor((OrientedRect(0.6, 0, 0, 4, 2),) + (BOX,) * 5)
    assert corridor_loss(off, gt).value == pytest.approx(0.6 / 36)
    flipped = Corridor((OrientedRect(0, 0, math.pi, 4, 2),) + (BOX,) * 5)
    assert corridor_loss(flipped, gt).value == pytest.approx(2 / 36)
    with pytest.raises(ValueError):
        corridor_loss(corridor_of(BOX, 5), gt)


def test_encoding_round_trip():
    c = Corridor((OrientedRect(1, 2, 0.3, 4, 2), OrientedRect(-1, 0, -2.9, 5, 3)))
    enc = encode_corridor(c)
    np.testing.assert_allclose(enc[:, 2] ** 2 + enc[:, 3] ** 2, 1.0)
    enc[:, 2:4] *= 3.0  # decode renormalises
    for a, b in zip(decode_corridor(enc), c):
        np.testing.assert_allclose(a.as_tuple(), b.as_tuple(), atol=1e-12)


def per_t(points_at, t, n=6):
    out = [np.zeros((0, 2))] * n
    out[t] = np.asarray(points_at, float)
    return out


def test_map_safety_examples():
    c = corridor_of(BOX)
    assert map_safety_loss(c, per_t([(10, 10)], 0)).value == 0
    assert map_safety_loss(c, per_t([(1.5, 0)], 3)).value == pytest.approx(0.5)
    assert map_safety_loss(c, per_t([(1.7, 0), (1.3, 0)], 2)).value == pytest.approx(0.7)


def test_agent_safety_examples():
    c = corridor_of(BOX)
    assert agent_safety_loss(c, per_t([(5, 5)], 1)).value == 0
    assert agent_safety_loss(c, per_t([(0, 0.8)], 1)).value == pytest.approx(0.2)
    assert agent_safety_loss(c, per_t([(2.0, 0.3)], 1)).value == 0


def test_area_loss_examples():
    tiny = corridor_of(OrientedRect(0, 0, 0, 1e-9, 1e-9))
    assert area_loss(tiny).value == pytest.approx(6.0)
    big = Corridor((OrientedRect(0, 0, 0, 30, 15),))
    assert area_loss(big, 0.01).value == pytest.approx(math.exp(-4.5))
    assert area_loss(big, 0.01).value == pytest.approx(0.011109, abs=1e-6)


def test_imitation_examples():
    gt = np.zeros((6, 4))
    assert imitation_loss(gt, gt).value == 0
    shifted = gt.copy()
    shifted[:, 0] += 0.5
    assert imitation_loss(shifted, gt).value == pytest.approx(0.25)
    one = gt.copy()
    one[2, 1] = 1.2
    assert imitation_loss(one, gt).value == pytest.approx(0.1)
    with pytest.raises(ValueError):
        imitation_loss(gt[:5], gt)


@pytest.mark.parametrize("cfg", loss_configs(8, seed=42), ids=lambda _: "cfg")
def test_gradients_match_fd(cfg):
    p = cfg["pred"]
    cases = [
        (lambda e: corridor_loss(e, cfg["gt"]).value, corridor_loss(p, cfg["gt"]).gradient, p),
        (lambda e: map_safety_loss(e, cfg["curb"]).value, map_safety_loss(p, cfg["curb"]).gradient, p),
        (lambda e: agent_safety_loss(e, cfg["agent"]).value, agent_safety_loss(p, cfg["agent"]).gradient, p),
        (lambda e: area_loss(e).value, area_loss(p).gradient, p),
        (lambda x: imitation_loss(x, cfg["demo"]).value, imitation_loss(cfg["traj"], cfg["demo"]).gradient, cfg["traj"][:, :2]),
    ]
    for f, analytic, x0 in cases:
        assert relative_error(analytic, central_difference(f, x0)) < 1e-5


def test_safety_gradient_moves_violated_edge():
    # point 0.3 inside the front edge; pushing that edge outward along its normal by d raises the loss by d
    c = corridor_of(BOX, 1)
    pts = [np.array([[1.7, 0.2]])]
    lv = map_safety_loss(c, pts)
    # front edge offset = cx + l/2, moved outward: d(cx)=d/2, d(l)=d
    directional = lv.gradient[0, 0] * 0.5 + lv.gradient[0, 4] * 1.0
    assert directional == pytest.approx(1.0)
    # and shrinking the edge toward the point by delta lowers the loss by delta
    d = 1e-3
    moved = Corridor((OrientedRect(-d / 2, 0, 0, 4 - d, 2),))
    assert lv.value - map_safety_loss(moved, pts).value == pytest.approx(d)


encodings = st.lists(
    st.tuples(
        st.floats(-10, 10), st.floats(-10, 10), st.floats(-math.pi, math.pi), st.floats(0.1, 30), st.floats(0.1, 15)
    ),
    min_size=1,
    max_size=6,
)


@given(encodings, st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20)), max_size=10))
def test_losses_nonnegative_and_area_bounded(rects, pts):
    c = Corridor(tuple(OrientedRect(*r) for r in rects))
    sets = [np.array(pts, float).reshape(-1, 2)] * len(c)
    assert map_safety_loss(c, sets).value >= 0
    assert agent_safety_loss(c, sets).value >= 0
    a = area_loss(c).value
    assert 0 < a <= len(c)
    assert corridor_loss(c, corridor_of(BOX, len(c))).value >= 0
    for lv in (map_safety_loss(c, sets), area_loss(c)):
        assert np.all(np.isfinite(lv.gradient))
