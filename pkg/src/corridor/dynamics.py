"""Kinematic bicycle model with forward-Euler discretisation.

States are ``(px, py, theta, v)`` and controls ``(a, delta)``. Headings are kept
continuous along a trajectory (no wrapping) so that linearisations and
quadratic tracking costs stay smooth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

STANDARD = "standard"
PRINTED = "printed"


def _check(u, dt: float, L: float):
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not L > 0:
        raise ValueError(f"wheelbase must be positive, got {L}")
    if abs(u[1]) >= math.pi / 2:
        raise ValueError(f"steering angle {u[1]} hits the tangent singularity")


def step(x, u, dt: float, L: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check(u, dt, L)
    px, py, th, v = x
    a, delta = u
    return np.array(
        [
            px + v * math.cos(th) * dt,
            py + v * math.sin(th) * dt,
            th + v * math.tan(delta) / L * dt,
            v + a * dt,
        ]
    )


@dataclass(frozen=True)
class LinearDynamics:
    """``x_next = A @ x + B @ u + c`` around a nominal point."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray

    def __call__(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u + self.c


def linearize(x_nom, u_nom, dt: float, L: float, variant: str = STANDARD) -> LinearDynamics:
    """Jacobians of :func:`step` plus the affine remainder.

    ``variant="printed"`` evaluates the heading-rate partials at the heading
    instead of the steering angle. That form is kept only for comparison;
    its A and B are not the Jacobians of :func:`step`.
    """
    x_nom = np.asarray(x_nom, dtype=float)
    u_nom = np.asarray(u_nom, dtype=float)
    _check(u_nom, dt, L)
    _, _, th, v = x_nom
    delta = u_nom[1]
    if variant == STANDARD:
        ang = delta
    elif variant == PRINTED:
        ang = th
    else:
        raise ValueError(f"unknown linearisation variant {variant!r}")
    c, s = math.cos(th), math.sin(th)
    A = np.eye(4)
    A[0, 2] = -v * s * dt
    A[0, 3] = c * dt
    A[1, 2] = v * c * dt
    A[1, 3] = s * dt
    A[2, 3] = math.tan(ang) / L * dt
    B = np.zeros((4, 2))
    B[2, 1] = v / (L * math.cos(ang) ** 2) * dt
    B[3, 0] = dt
    rem = step(x_nom, u_nom, dt, L) - A @ x_nom - B @ u_nom
    return LinearDynamics(A, B, rem)


def rollout(x0, controls, dt: float, L: float) -> np.ndarray:
    """States ``x_1..x_N``; state ``t`` is produced by ``controls[t-1]``."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    out = np.empty((len(controls), 4))
    x = np.asarray(x0, dtype=float)
    for t, u in enumerate(controls):
        x = step(x, u, dt, L)
        out[t] = x
    return out


def rollout_linear(x0, controls, models: list[LinearDynamics]) -> np.ndarray:
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    out = np.empty((len(controls), 4))
    x = np.asarray(x0, dtype=float)
    for t, (u, m) in enumerate(zip(controls, models)):
        x = m(x, u)
        out[t] = x
    return out


def rollout_vjp(x0, controls, dt: float, L: float, dL_dstates) -> np.ndarray:
    """Gradient of a scalar w.r.t. the controls, given its gradient w.r.t. rolled-out states."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    dL_dstates = np.asarray(dL_dstates, dtype=float)
    states = np.vstack([np.asarray(x0, dtype=float), rollout(x0, controls, dt, L)])
    grad_u = np.zeros_like(controls)
    adj = np.zeros(4)
    for t in range(len(controls) - 1, -1, -1):
        adj = adj + dL_dstates[t]
        jac = linearize(states[t], controls[t], dt, L)
        grad_u[t] = jac.B.T @ adj
        adj = jac.A.T @ adj
    return grad_u
