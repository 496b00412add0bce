"""Maximum empty rectangle solver and corridor annotation / refinement."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._json import dumps
from .geometry import OrientedRect, wrap_angle
from .scene import (
    Scene,
    lane_filter,
    obstacle_points_at,
    to_local_frame,
    to_world_frame,
)

ANCHOR_TOL = 1e-6
DEGENERATE_SIZE = 0.2


class BlockedAnchorError(ValueError):
    """An obstacle point coincides with the MER anchor."""


@dataclass(frozen=True)
class MerBoundary:
    l_max: float = 30.0
    w_max: float = 15.0

    def __post_init__(self):
        if not (self.l_max > 0 and self.w_max > 0):
            raise ValueError("MER boundary must have positive extents")


@dataclass(frozen=True)
class Corridor:
    rects: tuple[OrientedRect, ...]
    degenerate: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "rects", tuple(self.rects))
        flags = tuple(bool(f) for f in self.degenerate) or (False,) * len(self.rects)
        if len(flags) != len(self.rects):
            raise ValueError("one degenerate flag per rectangle required")
        object.__setattr__(self, "degenerate", flags)

    def __len__(self):
        return len(self.rects)

    def __getitem__(self, i):
        return self.rects[i]

    def __iter__(self):
        return iter(self.rects)

    @property
    def flagged(self) -> bool:
        return any(self.degenerate)


def solve_mer(points, boundary: MerBoundary, anchor=(0.0, 0.0)) -> tuple[float, float, float, float]:
    """Largest axis-aligned rectangle around ``anchor`` with no point strictly inside.

    The search box is ``boundary`` centred on the anchor. Every left edge is
    either the box edge or a point abscissa left of the anchor (likewise for
    the right edge); for each pair of vertical edges the vertical extent is
    then forced by the points lying strictly between them. Ties in area go to
    the smallest ``(x_min, y_min)``.

    Returns ``(x_min, x_max, y_min, y_max)``.
    """
    ax, ay = float(anchor[0]), float(anchor[1])
    bx0, bx1 = ax - boundary.l_max / 2.0, ax + boundary.l_max / 2.0
    by0, by1 = ay - boundary.w_max / 2.0, ay + boundary.w_max / 2.0
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) and np.min(np.hypot(pts[:, 0] - ax, pts[:, 1] - ay)) <= ANCHOR_TOL:
        raise BlockedAnchorError(f"obstacle point within {ANCHOR_TOL} m of anchor {anchor}")
    inside = (pts[:, 0] > bx0) & (pts[:, 0] < bx1) & (pts[:, 1] > by0) & (pts[:, 1] < by1)
    pts = pts[inside]
    pts = pts[np.argsort(pts[:, 0], kind="stable")]
    px, py = pts[:, 0], pts[:, 1]

    lo_cands = np.unique(np.concatenate([[bx0], px[px <= ax]]))
    hi_cands = np.unique(np.concatenate([px[px >= ax], [bx1]]))

    best = None  # (area, x_lo, y_lo, x_hi, y_hi)
    for x_lo in lo_cands:
        sel = px > x_lo
        qx, qy = px[sel], py[sel]
        # running bounds as points enter the open x-interval (x_lo, x_hi)
        top = np.minimum.accumulate(np.concatenate([[by1], np.where(qy > ay, qy, by1)]))
        bot = np.maximum.accumulate(np.concatenate([[by0], np.where(qy < ay, qy, by0)]))
        level = np.logical_or.accumulate(np.concatenate([[False], qy == ay]))
        count = np.searchsorted(qx, hi_cands, side="left")
        y_hi, y_lo, on_line = top[count], bot[count], level[count]
        width = hi_cands - x_lo
        area_full = width * (y_hi - y_lo)
        # a point level with the anchor splits the interval: keep the better half
        area_below = width * (ay - y_lo)
        area_above = width * (y_hi - ay)
        use_above = on_line & (area_above > area_below)
        use_below = on_line & ~use_above
        y_top = np.where(use_below, ay, y_hi)
        y_bot = np.where(use_above, ay, y_lo)
        area = np.where(use_below, area_below, np.where(use_above, area_above, area_full))

        k = _argbest(area, y_bot)
        cand = (float(area[k]), float(x_lo), float(y_bot[k]), float(hi_cands[k]), float(y_top[k]))
        if best is None or cand[0] > best[0] or (cand[0] == best[0] and (cand[1], cand[2]) < (best[1], best[2])):
            best = cand
    _, x_lo, y_lo, x_hi, y_hi = best
    return (x_lo, x_hi, y_lo, y_hi)


def _argbest(area: np.ndarray, y_min: np.ndarray) -> int:
    top = area.max()
    ties = np.flatnonzero(area == top)
    return int(ties[np.argmin(y_min[ties])])


def mer_area(box) -> float:
    x_lo, x_hi, y_lo, y_hi = box
    return (x_hi - x_lo) * (y_hi - y_lo)


def _box_to_rect(box, frame_pose) -> OrientedRect:
    """Local axis-aligned box -> rectangle in the frame that ``frame_pose`` lives in."""
    x_lo, x_hi, y_lo, y_hi = box
    center_local = np.array([[(x_lo + x_hi) / 2.0, (y_lo + y_hi) / 2.0]])
    c = to_world_frame(center_local, frame_pose)[0]
    return OrientedRect(c[0], c[1], frame_pose[2], x_hi - x_lo, y_hi - y_lo)


def _degenerate_rect(pose) -> OrientedRect:
    return OrientedRect(pose[0], pose[1], pose[2], DEGENERATE_SIZE, DEGENERATE_SIZE)


def annotate_corridor(
    scene: Scene,
    delta_obs: float = 0.5,
    boundary: MerBoundary = MerBoundary(),
    t_ego: tuple[float, float] = (-5.0, 5.0),
) -> Corridor:
    """Ground-truth corridor in the planning frame (ego pose at t=0).

    At each future timestamp the obstacles are expressed in the frame of the
    logged ego pose, the MER is solved around the ego, and the box is mapped
    back with the ego heading. A blocked anchor is retried once with half the
    sampling step; if it persists, a 0.2 m degenerate rectangle is emitted and
    flagged.
    """
    lanes = lane_filter(scene, t_ego)
    origin = scene.ego_pose_at(0.0)
    rects, flags = [], []
    for k in range(1, scene.horizon + 1):
        t = k * scene.dt
        pose = scene.ego_pose_at(t)
        box = None
        for step in (delta_obs, delta_obs / 2.0):
            obs = obstacle_points_at(scene, t, step, lanes)
            local = to_local_frame(obs.points, pose)
            try:
                box = solve_mer(local, boundary)
                break
            except BlockedAnchorError:
                continue
        rect_world = _degenerate_rect(pose) if box is None else _box_to_rect(box, pose)
        c = to_local_frame(rect_world.center, origin)[0]
        rects.append(OrientedRect(c[0], c[1], wrap_angle(pose[2] - origin[2]), rect_world.l, rect_world.w))
        flags.append(box is None)
    return Corridor(tuple(rects), tuple(flags))


def refine_corridor(predicted: Corridor, perceived_obstacles) -> Corridor:
    """Shrink each rectangle so no perceived point is strictly inside it.

    The MER is re-solved in each predicted rectangle's frame, anchored at its
    centre, with the predicted size as the boundary.
    """
    if len(perceived_obstacles) != len(predicted):
        raise ValueError("need one obstacle set per corridor timestamp")
    rects, flags = [], []
    for rect, pts in zip(predicted, perceived_obstacles):
        pose = (rect.cx, rect.cy, rect.theta)
        local = to_local_frame(np.asarray(pts, dtype=float).reshape(-1, 2), pose)
        try:
            box = solve_mer(local, MerBoundary(rect.l, rect.w))
        except BlockedAnchorError:
            rects.append(_degenerate_rect(pose))
            flags.append(True)
            continue
        if mer_area(box) == rect.l * rect.w:
            rects.append(rect)
        else:
            rects.append(_box_to_rect(box, pose))
        flags.append(False)
    return Corridor(tuple(rects), tuple(flags))


def corridor_in_frame(corridor: Corridor, pose) -> list[OrientedRect]:
    """Express planning-frame rectangles in the frame whose pose (in planning coordinates) is ``pose``."""
    out = []
    for r in corridor:
        c = to_local_frame(r.center, pose)[0]
        out.append(OrientedRect(c[0], c[1], r.theta - pose[2], r.l, r.w))
    return out


def corridor_to_world(corridor: Corridor, origin) -> list[OrientedRect]:
    out = []
    for r in corridor:
        c = to_world_frame(r.center, origin)[0]
        out.append(OrientedRect(c[0], c[1], r.theta + origin[2], r.l, r.w))
    return out


# ---------------------------------------------------------------------------
# JSON

_RECT_KEYS = ("cx", "cy", "theta", "l", "w")


def corridor_to_records(corridor: Corridor) -> list[dict]:
    return [dict(zip(_RECT_KEYS, r.as_tuple())) for r in corridor]


def corridor_from_records(records) -> Corridor:
    if not isinstance(records, list):
        raise ValueError("corridor file must hold a JSON list")
    rects = []
    for rec in records:
        if not isinstance(rec, dict) or set(rec) != set(_RECT_KEYS):
            raise ValueError(f"corridor records need exactly the keys {_RECT_KEYS}")
        rects.append(OrientedRect(*(float(rec[k]) for k in _RECT_KEYS)))
    return Corridor(tuple(rects))


def save_corridor(corridor: Corridor, path) -> None:
    Path(path).write_text(dumps(corridor_to_records(corridor)), encoding="utf-8")


def load_corridor(path) -> Corridor:
    return corridor_from_records(json.loads(Path(path).read_text(encoding="utf-8")))
