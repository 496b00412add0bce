import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import central_difference, relative_error

from corridor.dynamics import (
    PRINTED,
    linearize,
    rollout,
    rollout_linear,
    rollout_vjp,
    step,
)

states = st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(-math.pi, math.pi), st.floats(-5, 15))
controls = st.tuples(st.floats(-6, 4), st.floats(-0.5, 0.5))


def test_step_examples():
    np.testing.assert_array_equal(step([0, 0, 0, 0], [0, 0], 0.5, 2.5), [0, 0, 0, 0])
    np.testing.assert_allclose(step([0, 0, 0, 2], [0, 0], 0.5, 2.5), [1, 0, 0, 2])
    x = step([0, 0, 0, 2], [0, 0.1], 0.5, 2.5)
    assert x[2] == pytest.approx(2 * math.tan(0.1) / 2.5 * 0.5)


def test_step_rejects_singular_steering():
    with pytest.raises(ValueError):
        step([0, 0, 0, 1], [0, math.pi / 2], 0.5, 2.5)


def test_linearize_examples():
    lin = linearize([0, 0, 0, 0], [0, 0], 0.5, 2.5)
    A = np.eye(4)
    A[0, 3] = 0.5
    B = np.zeros((4, 2))
    B[3, 0] = 0.5
    np.testing.assert_allclose(lin.A, A, atol=1e-15)
    np.testing.assert_allclose(lin.B, B, atol=1e-15)
    lin = linearize([0, 0, math.pi / 2, 2], [0, 0], 0.5, 2.5)
    assert lin.A[0, 2] == pytest.approx(-1)
    assert lin.A[1, 3] == pytest.approx(0.5)
    assert lin.B[2, 1] == pytest.approx(0.4)


@given(states, controls)
def test_jacobians_match_fd(x, u):
    x, u = np.array(x), np.array(u)
    lin = linearize(x, u, 0.5, 2.7)
    for i in range(4):
        fd_x = central_difference(lambda z: step(z, u, 0.5, 2.7)[i], x)
        fd_u = central_difference(lambda w: step(x, w, 0.5, 2.7)[i], u)
        assert relative_error(lin.A[i], fd_x, floor=1.0) < 1e-6
        assert relative_error(lin.B[i], fd_u, floor=1.0) < 1e-6


@given(states, controls)
def test_linearization_exact_at_nominal(x, u):
    lin = linearize(x, u, 0.5, 2.7)
    np.testing.assert_allclose(lin(np.array(x), np.array(u)), step(x, u, 0.5, 2.7), atol=1e-12, rtol=0)


def test_printed_variant_differs_once_steering_matters():
    std = linearize([0, 0, 0.4, 3], [0, 0.2], 0.5, 2.7)
    prn = linearize([0, 0, 0.4, 3], [0, 0.2], 0.5, 2.7, variant=PRINTED)
    assert std.A[2, 3] != pytest.approx(prn.A[2, 3])
    with pytest.raises(ValueError):
        linearize([0, 0, 0, 0], [0, 0], 0.5, 2.7, variant="other")


def test_rollout_examples():
    np.testing.assert_array_equal(rollout([1, 2, 0.3, 0], np.zeros((6, 2)), 0.5, 2.5), np.tile([1, 2, 0.3, 0], (6, 1)))
    traj = rollout([0, 0, 0, 0], np.tile([2.0, 0.0], (6, 1)), 0.5, 2.5)
    np.testing.assert_allclose(traj[:, 0], [0, 0.5, 1.5, 3.0, 5.0, 7.5])
    turning = rollout([0, 0, 0, 1], np.tile([0.0, 0.2], (6, 1)), 0.5, 2.5)
    assert np.all(np.diff(np.concatenate([[0.0], turning[:, 2]])) > 0)


@given(st.floats(0, 15), st.lists(controls, min_size=1, max_size=8))
def test_straight_rollout_invariance(v0, us):
    u = np.array(us)
    u[:, 1] = 0.0
    traj = rollout([0, 0, 0, v0], u, 0.5, 2.7)
    assert np.all(traj[:, 1] == 0) and np.all(traj[:, 2] == 0)


def test_linear_rollout_matches_at_nominal():
    u = np.tile([0.5, 0.1], (6, 1))
    x0 = np.array([0, 0, 0, 5.0])
    traj = rollout(x0, u, 0.5, 2.7)
    models = [linearize(x, ui, 0.5, 2.7) for x, ui in zip(np.vstack([x0, traj[:-1]]), u)]
    np.testing.assert_allclose(rollout_linear(x0, u, models), traj, atol=1e-12)


def test_rollout_vjp_matches_fd(rng):
    x0 = np.array([0, 0, 0.2, 6.0])
    u = rng.uniform([-1, -0.2], [1, 0.2], size=(6, 2))
    w = rng.normal(size=(6, 4))
    grad = rollout_vjp(x0, u, 0.5, 2.7, w)
    fd = central_difference(lambda c: float(np.sum(w * rollout(x0, c, 0.5, 2.7))), u)
    assert relative_error(grad, fd) < 1e-6
