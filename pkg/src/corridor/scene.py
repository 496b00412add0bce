"""Scene container, obstacle point extraction and the synthetic scenario generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics
from ._json import dumps
from .geometry import (
    EgoFootprint,
    OrientedRect,
    rect_vertices,
    rects_overlap,
    rotation,
    wrap_angle,
)

KINDS = ("straight", "turn", "cut-in", "narrow")
LANE_OVERLAP_MARGIN = 0.25
TAGS = ("agent", "curb", "lane")


@dataclass(frozen=True)
class AgentTrack:
    id: str
    half_length: float
    half_width: float
    poses: np.ndarray  # (k, 4): t, px, py, theta

    def __post_init__(self):
        poses = np.atleast_2d(np.asarray(self.poses, dtype=float))
        object.__setattr__(self, "poses", poses)
        if poses.ndim != 2 or poses.shape[1] != 4:
            raise ValueError("agent poses must be rows of (t, px, py, theta)")
        if not (self.half_length > 0 and self.half_width > 0):
            raise ValueError(f"agent {self.id}: dimensions must be positive")
        if np.any(np.diff(poses[:, 0]) <= 0):
            raise ValueError(f"agent {self.id}: pose timestamps must be strictly increasing")

    def pose_at(self, t: float):
        """Interpolated (px, py, theta), or None outside the track's coverage."""
        return interpolate_pose(self.poses, t)

    def box_at(self, t: float) -> OrientedRect | None:
        pose = self.pose_at(t)
        if pose is None:
            return None
        return OrientedRect(pose[0], pose[1], pose[2], 2 * self.half_length, 2 * self.half_width)


@dataclass(frozen=True)
class Scene:
    dt: float
    horizon: int
    wheelbase: float
    ego_log: np.ndarray  # (k, 5): t, px, py, theta, v
    agents: tuple[AgentTrack, ...] = ()
    curbs: tuple[np.ndarray, ...] = ()
    lanes: tuple[np.ndarray, ...] = ()
    footprint: EgoFootprint = field(default_factory=EgoFootprint)

    def __post_init__(self):
        log = np.atleast_2d(np.asarray(self.ego_log, dtype=float))
        object.__setattr__(self, "ego_log", log)
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "curbs", tuple(np.asarray(c, dtype=float) for c in self.curbs))
        object.__setattr__(self, "lanes", tuple(np.asarray(c, dtype=float) for c in self.lanes))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        if log.shape[1] != 5:
            raise ValueError("ego_log rows must be (t, px, py, theta, v)")
        if np.any(np.diff(log[:, 0]) <= 0):
            raise ValueError("ego_log timestamps must be strictly increasing")
        if not np.any(np.isclose(log[:, 0], 0.0, atol=1e-9)):
            raise ValueError("ego_log must contain t=0")
        if log[-1, 0] < self.horizon * self.dt - 1e-9:
            raise ValueError("ego_log does not cover the planning horizon")

    def ego_pose_at(self, t: float) -> np.ndarray:
        pose = interpolate_pose(self.ego_log[:, [0, 1, 2, 3]], t)
        if pose is None:
            raise ValueError(f"t={t} outside the ego log")
        return pose

    def ego_state_at(self, t: float) -> np.ndarray:
        pose = self.ego_pose_at(t)
        v = float(np.interp(t, self.ego_log[:, 0], self.ego_log[:, 4]))
        return np.array([pose[0], pose[1], pose[2], v])

    def future_states(self) -> np.ndarray:
        """Ground-truth ego states at t = dt..N*dt in the planning frame."""
        origin = self.ego_pose_at(0.0)
        states = np.array([self.ego_state_at(k * self.dt) for k in range(1, self.horizon + 1)])
        return world_states_to_local(states, origin)

    def initial_state(self) -> np.ndarray:
        """Ego state at t=0 expressed in its own (planning) frame."""
        return np.array([0.0, 0.0, 0.0, self.ego_state_at(0.0)[3]])


@dataclass(frozen=True)
class ObstaclePointSet:
    points: np.ndarray  # (k, 2)
    tags: np.ndarray  # (k,) of "agent" | "curb" | "lane"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "tags", np.asarray(self.tags, dtype=object).reshape(-1))
        if len(pts) != len(self.tags):
            raise ValueError("points and tags differ in length")
        if not np.all(np.isfinite(pts)):
            raise ValueError("obstacle points must be finite")

    def __len__(self):
        return len(self.points)

    def select(self, tag: str) -> np.ndarray:
        return self.points[self.tags == tag]


# ---------------------------------------------------------------------------
# pose interpolation and frames


def interpolate_pose(poses: np.ndarray, t: float, tol: float = 1e-9):
    """Linear position and shortest-arc heading between bracketing rows of (t, px, py, theta)."""
    times = poses[:, 0]
    if t < times[0] - tol or t > times[-1] + tol:
        return None
    i = int(np.searchsorted(times, t))
    if i < len(times) and abs(times[i] - t) <= tol:
        return poses[i, 1:4].copy()
    if i > 0 and abs(times[i - 1] - t) <= tol:
        return poses[i - 1, 1:4].copy()
    i = min(max(i, 1), len(times) - 1)
    t0, t1 = times[i - 1], times[i]
    s = (t - t0) / (t1 - t0)
    p = (1 - s) * poses[i - 1, 1:3] + s * poses[i, 1:3]
    dth = wrap_angle(poses[i, 3] - poses[i - 1, 3])
    return np.array([p[0], p[1], poses[i - 1, 3] + s * dth])


def to_local_frame(points, pose) -> np.ndarray:
    """``R(-theta) @ (p - (px, py))`` for each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
    return (pts - np.asarray(pose[:2], dtype=float)) @ rotation(pose[2])


def to_world_frame(points, pose) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
    return pts @ rotation(pose[2]).T + np.asarray(pose[:2], dtype=float)


def world_states_to_local(states, pose) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=float)).copy()
    states[:, :2] = to_local_frame(states[:, :2], pose)
    states[:, 2] = states[:, 2] - pose[2]
    return states


def local_states_to_world(states, pose) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=float)).copy()
    states[:, :2] = to_world_frame(states[:, :2], pose)
    states[:, 2] = states[:, 2] + pose[2]
    return states


# ---------------------------------------------------------------------------
# contours and obstacle selection


def sample_contour(polyline, closed: bool, delta_obs: float) -> np.ndarray:
    """Vertices plus evenly spaced samples so that consecutive samples are <= delta_obs apart."""
    pts = np.asarray(polyline, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("empty polyline")
    if not delta_obs > 0:
        raise ValueError("delta_obs must be positive")
    if closed and len(pts) > 1 and np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    if len(pts) == 1:
        return pts.copy()
    ends = np.vstack([pts[1:], pts[:1]]) if closed else pts[1:]
    out = []
    for a, b in zip(pts, ends):
        n = max(1, math.ceil(np.linalg.norm(b - a) / delta_obs - 1e-9))
        s = np.arange(n)[:, None] / n
        out.append(a + s * (b - a))
    if not closed:
        out.append(pts[-1:])
    samples = np.vstack(out)
    keep = np.ones(len(samples), dtype=bool)
    keep[1:] = np.any(np.abs(np.diff(samples, axis=0)) > 1e-12, axis=1)
    return samples[keep]


def _point_segment_distance(p, a, b):
    """Distances from points p (k,2) to segments a->b (m,2); returns (k, m)."""
    ab = b - a
    ap = p[:, None, :] - a[None, :, :]
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("kmj,mj->km", ap, ab) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(p[:, None, :] - closest, axis=2)


def _segments_cross(a0, a1, b0, b1) -> bool:
    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (
            r[..., 0] - p[..., 0]
        )

    A0, A1 = a0[:, None], a1[:, None]
    B0, B1 = b0[None], b1[None]
    d1, d2 = orient(A0, A1, B0), orient(A0, A1, B1)
    d3, d4 = orient(B0, B1, A0), orient(B0, B1, A1)
    return bool(np.any((d1 * d2 < 0) & (d3 * d4 < 0)))


def polyline_distance(p, q) -> float:
    """Minimum distance between two polylines (0 if they cross)."""
    p = np.asarray(p, dtype=float).reshape(-1, 2)
    q = np.asarray(q, dtype=float).reshape(-1, 2)
    if len(p) > 1 and len(q) > 1 and _segments_cross(p[:-1], p[1:], q[:-1], q[1:]):
        return 0.0
    best = math.inf
    if len(q) > 1:
        best = min(best, float(_point_segment_distance(p, q[:-1], q[1:]).min()))
    if len(p) > 1:
        best = min(best, float(_point_segment_distance(q, p[:-1], p[1:]).min()))
    if len(p) == 1 and len(q) == 1:
        best = float(np.linalg.norm(p[0] - q[0]))
    return best


def ego_path(scene: Scene, t_ego: tuple[float, float]) -> np.ndarray:
    log = scene.ego_log
    t0 = max(t_ego[0], log[0, 0])
    t1 = min(t_ego[1], log[-1, 0])
    inner = log[(log[:, 0] > t0) & (log[:, 0] < t1), 1:3]
    start = scene.ego_pose_at(t0)[:2]
    end = scene.ego_pose_at(t1)[:2]
    return np.vstack([start, inner, end])


def lane_filter(
    scene: Scene, t_ego: tuple[float, float], margin: float = LANE_OVERLAP_MARGIN
) -> list[np.ndarray]:
    """Lanes the ego neither crosses nor approaches within ``margin`` during ``t_ego``."""
    path = ego_path(scene, t_ego)
    return [lane for lane in scene.lanes if polyline_distance(path, lane) > margin + 1e-12]


def obstacle_points_at(
    scene: Scene, t: float, delta_obs: float, retained_lanes=None
) -> ObstaclePointSet:
    """World-frame obstacle samples at time ``t``.

    Agents without a pose covering ``t`` are treated as absent.
    """
    lanes = scene.lanes if retained_lanes is None else retained_lanes
    chunks, tags = [], []
    for agent in scene.agents:
        box = agent.box_at(t)
        if box is None:
            continue
        pts = sample_contour(rect_vertices(box), True, delta_obs)
        chunks.append(pts)
        tags += ["agent"] * len(pts)
    for tag, lines in (("curb", scene.curbs), ("lane", lanes)):
        for line in lines:
            pts = sample_contour(line, False, delta_obs)
            chunks.append(pts)
            tags += [tag] * len(pts)
    points = np.vstack(chunks) if chunks else np.zeros((0, 2))
    return ObstaclePointSet(points, np.array(tags, dtype=object))


def agent_boxes_at(scene: Scene, t: float) -> list[OrientedRect]:
    return [b for b in (a.box_at(t) for a in scene.agents) if b is not None]


# ---------------------------------------------------------------------------
# synthetic scenarios


LANE_WIDTH = 3.5


class _Road:
    """Arc-length parameterised reference line (the ego's simulated path)."""

    def __init__(self, states: np.ndarray):
        self.xy = states[:, :2]
        self.theta = states[:, 2]
        seg = np.linalg.norm(np.diff(self.xy, axis=0), axis=1)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])

    def pose(self, s: float, offset: float = 0.0):
        s = float(np.clip(s, self.s[0], self.s[-1]))
        x = np.interp(s, self.s, self.xy[:, 0])
        y = np.interp(s, self.s, self.xy[:, 1])
        th = np.interp(s, self.s, np.unwrap(self.theta))
        return np.array([x - offset * math.sin(th), y + offset * math.cos(th), th])

    def offset_line(self, offset: float) -> np.ndarray:
        n = np.stack([-np.sin(self.theta), np.cos(self.theta)], axis=1)
        return self.xy + offset * n


def _simulate(x0, controls, dt, L):
    states = np.vstack([x0, dynamics.rollout(x0, controls, dt, L)])
    return states


def gen_scene(
    seed: int,
    kind: str,
    dt: float = 0.5,
    horizon: int = 6,
    wheelbase: float = 2.7,
    footprint: EgoFootprint | None = None,
) -> Scene:
    """Deterministic synthetic scenario of the given kind."""
    if kind not in KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {KINDS}")
    footprint = footprint or EgoFootprint()
    rng = np.random.default_rng([int(seed), KINDS.index(kind)])

    t_lo, t_hi = -5.0, max(5.0, horizon * dt)
    pad = 10.0
    times = np.arange(t_lo - pad, t_hi + pad + dt / 2, dt)
    n_steps = len(times) - 1

    if kind == "narrow":
        v0 = rng.uniform(3.0, 5.0)
    elif kind == "turn":
        v0 = rng.uniform(4.0, 7.0)
    else:
        v0 = rng.uniform(6.0, 10.0)
    controls = np.zeros((n_steps, 2))
    if kind == "turn":
        delta = rng.choice([-1.0, 1.0]) * rng.uniform(0.04, 0.08)
        t_turn = rng.uniform(-4.0, -1.0)
        controls[times[:-1] >= t_turn, 1] = delta
    else:
        accel = rng.uniform(-0.3, 0.3)
        controls[:, 0] = accel
        # v0 is the speed at times[0]; keep it positive over the whole simulated window
        if v0 + accel * (times[-1] - times[0]) < 1.0:
            controls[:, 0] = 0.0
    heading0 = rng.uniform(-math.pi, math.pi)
    x_start = np.array([rng.uniform(-50, 50), rng.uniform(-50, 50), heading0, v0])
    states = _simulate(x_start, controls, dt, wheelbase)
    road = _Road(states)

    keep = (times >= t_lo - 1e-9) & (times <= t_hi + 1e-9)
    log_t = np.round(times[keep], 9)
    log_states = states[keep]
    ego_log = np.column_stack([log_t, log_states])

    curbs, lanes = [], []
    if kind == "narrow":
        half = rng.uniform(1.5, 2.0)
        curbs = [road.offset_line(-half), road.offset_line(half)]
    elif kind == "turn":
        # unmarked carriageway with a wide shoulder: a long box must fit the bend
        right = -LANE_WIDTH / 2 - rng.uniform(1.2, 1.8)
        left = 1.5 * LANE_WIDTH + rng.uniform(0.2, 0.8)
        curbs = [road.offset_line(right), road.offset_line(left)]
    else:
        right = -LANE_WIDTH / 2 - rng.uniform(0.2, 0.8)
        left = 1.5 * LANE_WIDTH + rng.uniform(0.2, 0.8)
        curbs = [road.offset_line(right), road.offset_line(left)]
        lanes = [road.offset_line(LANE_WIDTH / 2)]

    def track(agent_id, s0, speed, offset_fn, hl, hw):
        poses = []
        for t in log_t:
            s = s0 + speed * t
            off, doff = offset_fn(t)
            p = road.pose(s, off)
            th = p[2] + math.atan2(doff, max(speed, 0.1))
            poses.append((t, p[0], p[1], th))
        return AgentTrack(agent_id, hl, hw, np.array(poses))

    def clear_of_ego(agent: AgentTrack) -> bool:
        for row in ego_log:
            box = agent.box_at(row[0])
            ego = footprint.rect_at(row[1], row[2], row[3])
            # keep a buffer so the logged ego never grazes an agent
            if box is not None and rects_overlap(
                OrientedRect(box.cx, box.cy, box.theta, box.l + 1.0, box.w + 0.4), ego
            ):
                return False
        return True

    s_ego0 = float(np.interp(0.0, times, road.s))
    v_ego0 = float(np.interp(0.0, times, states[:, 3]))
    agents: list[AgentTrack] = []

    def dims():
        return rng.uniform(2.0, 2.4), rng.uniform(0.85, 1.0)

    if kind == "straight":
        for _ in range(20):
            hl, hw = dims()
            gap = rng.uniform(18.0, 28.0)
            speed = v_ego0 + rng.uniform(-0.5, 1.0)
            cand = track("lead", s_ego0 + gap, speed, lambda t: (0.0, 0.0), hl, hw)
            if clear_of_ego(cand):
                agents.append(cand)
                break
        hl, hw = dims()
        cand = track(
            "left", s_ego0 + rng.uniform(-15.0, 25.0), v_ego0 + rng.uniform(-2.0, 2.0),
            lambda t: (LANE_WIDTH, 0.0), hl, hw,
        )
        if clear_of_ego(cand):
            agents.append(cand)
    elif kind == "turn":
        hl, hw = dims()
        cand = track(
            "left", s_ego0 + rng.uniform(-10.0, 20.0), v_ego0 + rng.uniform(-1.0, 1.0),
            lambda t: (LANE_WIDTH, 0.0), hl, hw,
        )
        if clear_of_ego(cand):
            agents.append(cand)
    elif kind == "cut-in":
        for attempt in range(50):
            hl, hw = dims()
            gap = rng.uniform(12.0, 18.0) + attempt
            dv = rng.uniform(0.5, 2.0)
            t_a = rng.uniform(-1.0, 1.0)
            dur = 3.0
            speed = v_ego0 + dv

            def offset_fn(t, t_a=t_a, dur=dur):
                if t <= t_a:
                    return LANE_WIDTH, 0.0
                if t >= t_a + dur:
                    return 0.0, 0.0
                u = (t - t_a) / dur
                # smoothstep lateral profile
                off = LANE_WIDTH * (1 - (3 * u**2 - 2 * u**3))
                doff = -LANE_WIDTH * (6 * u - 6 * u**2) / dur
                return off, doff

            cand = track("cut-in", s_ego0 + gap, speed, offset_fn, hl, hw)
            if clear_of_ego(cand):
                agents.append(cand)
                break
        else:  # pragma: no cover - generator always finds a gap within the attempts
            raise RuntimeError("could not place cut-in agent")
    elif kind == "narrow":
        half = float(np.min(np.abs(_lateral_offsets(curbs[1], road))))
        for i in range(int(rng.integers(2, 4))):
            hl, hw = dims()
            side = rng.choice([-1.0, 1.0])
            cand = track(
                f"parked-{i}", s_ego0 + rng.uniform(-5.0, 30.0), 0.0,
                lambda t, side=side, hw=hw: (side * (half + hw + 0.3), 0.0), hl, hw,
            )
            if clear_of_ego(cand):
                agents.append(cand)

    return Scene(
        dt=dt,
        horizon=horizon,
        wheelbase=wheelbase,
        ego_log=ego_log,
        agents=tuple(agents),
        curbs=tuple(curbs),
        lanes=tuple(lanes),
        footprint=footprint,
    )


def _lateral_offsets(line, road: _Road) -> np.ndarray:
    d = line - road.xy
    n = np.stack([-np.sin(road.theta), np.cos(road.theta)], axis=1)
    return np.einsum("ij,ij->i", d, n)


# ---------------------------------------------------------------------------
# JSON


_SCENE_KEYS = {"dt", "horizon", "wheelbase", "ego_log", "agents", "curbs", "lanes", "footprint"}
_AGENT_KEYS = {"id", "half_length", "half_width", "poses"}
_FOOTPRINT_KEYS = {"half_length", "half_width"}


def _check_keys(obj, expected, what):
    if not isinstance(obj, dict):
        raise ValueError(f"{what} must be a JSON object")
    unknown = set(obj) - expected
    missing = expected - set(obj)
    if unknown:
        raise ValueError(f"unknown {what} keys: {sorted(unknown)}")
    if missing:
        raise ValueError(f"missing {what} keys: {sorted(missing)}")


def scene_to_dict(scene: Scene) -> dict:
    return {
        "dt": scene.dt,
        "horizon": int(scene.horizon),
        "wheelbase": scene.wheelbase,
        "ego_log": scene.ego_log.tolist(),
        "agents": [
            {
                "id": a.id,
                "half_length": a.half_length,
                "half_width": a.half_width,
                "poses": a.poses.tolist(),
            }
            for a in scene.agents
        ],
        "curbs": [c.tolist() for c in scene.curbs],
        "lanes": [c.tolist() for c in scene.lanes],
        "footprint": {
            "half_length": scene.footprint.half_length,
            "half_width": scene.footprint.half_width,
        },
    }


def scene_from_dict(obj: dict) -> Scene:
    _check_keys(obj, _SCENE_KEYS, "scene")
    for a in obj["agents"]:
        _check_keys(a, _AGENT_KEYS, "agent")
    _check_keys(obj["footprint"], _FOOTPRINT_KEYS, "footprint")
    return Scene(
        dt=float(obj["dt"]),
        horizon=int(obj["horizon"]),
        wheelbase=float(obj["wheelbase"]),
        ego_log=np.asarray(obj["ego_log"], dtype=float),
        agents=tuple(
            AgentTrack(str(a["id"]), float(a["half_length"]), float(a["half_width"]), np.asarray(a["poses"], dtype=float))
            for a in obj["agents"]
        ),
        curbs=tuple(np.asarray(c, dtype=float).reshape(-1, 2) for c in obj["curbs"]),
        lanes=tuple(np.asarray(c, dtype=float).reshape(-1, 2) for c in obj["lanes"]),
        footprint=EgoFootprint(
            float(obj["footprint"]["half_length"]), float(obj["footprint"]["half_width"])
        ),
    )


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(dumps(scene_to_dict(scene)), encoding="utf-8")


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
