"""Corridor, safety, area and imitation losses with analytic gradients.

Corridors are differentiated through their encoding: one row
``(cx, cy, cos theta, sin theta, l, w)`` per timestamp. The heading pair is
renormalised before use, so gradients are valid for unnormalised encodings
too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotation import Corridor
from .geometry import OrientedRect


@dataclass(frozen=True)
class LossValue:
    value: float
    gradient: np.ndarray


def encode_corridor(corridor: Corridor) -> np.ndarray:
    return np.array(
        [[r.cx, r.cy, np.cos(r.theta), np.sin(r.theta), r.l, r.w] for r in corridor], dtype=float
    ).reshape(-1, 6)


def decode_corridor(encoding) -> Corridor:
    enc = np.asarray(encoding, dtype=float).reshape(-1, 6)
    return Corridor(
        tuple(OrientedRect(e[0], e[1], float(np.arctan2(e[3], e[2])), e[4], e[5]) for e in enc)
    )


def as_encoding(corridor) -> np.ndarray:
    if isinstance(corridor, Corridor):
        return encode_corridor(corridor)
    return np.asarray(corridor, dtype=float).reshape(-1, 6)


def _positions(traj) -> np.ndarray:
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    return traj[:, :2]


def corridor_loss(pred, gt) -> LossValue:
    """Mean absolute error over the 6N encoded elements."""
    p, g = as_encoding(pred), as_encoding(gt)
    if p.shape != g.shape:
        raise ValueError(f"corridor lengths differ: {len(p)} vs {len(g)}")
    diff = p - g
    return LossValue(float(np.abs(diff).mean()), np.sign(diff) / diff.size)


def _interior_depth(points: np.ndarray, enc_row: np.ndarray):
    """Depths of points inside one encoded rectangle plus d(depth)/d(encoding).

    Returns ``(depth, grad)`` with depth shape (k,) (zero outside) and grad
    shape (k, 6).
    """
    cx, cy, c_raw, s_raw, l, w = enc_row
    r = np.hypot(c_raw, s_raw)
    c, s = c_raw / r, s_raw / r
    dx, dy = points[:, 0] - cx, points[:, 1] - cy
    x = c * dx + s * dy
    y = -s * dx + c * dy
    d = np.stack([l / 2 - x, l / 2 + x, w / 2 - y, w / 2 + y], axis=1)
    j = np.argmin(d, axis=1)
    depth = d[np.arange(len(points)), j]
    inside = depth > 0
    depth = np.where(inside, depth, 0.0)

    # partials of the local coordinates w.r.t. (cx, cy, c, s)
    dx_dp = np.zeros((len(points), 6))
    dy_dp = np.zeros((len(points), 6))
    dx_dp[:, 0], dx_dp[:, 1] = -c, -s
    dy_dp[:, 0], dy_dp[:, 1] = s, -c
    dxdc, dxds = dx, dy
    dydc, dyds = dy, -dx
    # chain through the normalisation (c, s) = (c_raw, s_raw) / r
    jn = np.array([[s * s, -c * s], [-c * s, c * c]]) / r
    dx_dp[:, 2] = dxdc * jn[0, 0] + dxds * jn[1, 0]
    dx_dp[:, 3] = dxdc * jn[0, 1] + dxds * jn[1, 1]
    dy_dp[:, 2] = dydc * jn[0, 0] + dyds * jn[1, 0]
    dy_dp[:, 3] = dydc * jn[0, 1] + dyds * jn[1, 1]

    grad = np.zeros((len(points), 6))
    for edge, (sign_local, axis, size_col) in enumerate(((-1, "x", 4), (1, "x", 4), (-1, "y", 5), (1, "y", 5))):
        m = inside & (j == edge)
        if not np.any(m):
            continue
        base = dx_dp if axis == "x" else dy_dp
        grad[m] = sign_local * base[m]
        grad[m, size_col] += 0.5
    return depth, grad


def _safety_loss(corridor, point_sets) -> LossValue:
    enc = as_encoding(corridor)
    if len(point_sets) != len(enc):
        raise ValueError("need one point set per corridor timestamp")
    value = 0.0
    grad = np.zeros_like(enc)
    for t, pts in enumerate(point_sets):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            continue
        depth, g = _interior_depth(pts, enc[t])
        i = int(np.argmax(depth))  # first index wins ties
        if depth[i] > 0:
            value += float(depth[i])
            grad[t] = g[i]
    return LossValue(value, grad)


def map_safety_loss(corridor, curb_points) -> LossValue:
    """Sum over timestamps of the deepest curb-point intrusion."""
    return _safety_loss(corridor, curb_points)


def agent_safety_loss(corridor, agent_vertices) -> LossValue:
    """Sum over timestamps of the deepest agent-vertex intrusion."""
    return _safety_loss(corridor, agent_vertices)


def area_loss(corridor, alpha: float = 0.01) -> LossValue:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    enc = as_encoding(corridor)
    l, w = enc[:, 4], enc[:, 5]
    e = np.exp(-alpha * w * l)
    grad = np.zeros_like(enc)
    grad[:, 4] = -alpha * w * e
    grad[:, 5] = -alpha * l * e
    return LossValue(float(e.sum()), grad)


def imitation_loss(traj, gt) -> LossValue:
    """Mean absolute position error; gradient w.r.t. ``traj`` positions (N, 2)."""
    p, g = _positions(traj), _positions(gt)
    if p.shape != g.shape:
        raise ValueError(f"trajectory lengths differ: {len(p)} vs {len(g)}")
    diff = p - g
    return LossValue(float(np.abs(diff).mean()), np.sign(diff) / diff.size)
