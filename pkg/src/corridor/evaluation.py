"""BEV rasterisation, collision rates, L2 error and solve-time statistics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._json import dumps
from .geometry import EgoFootprint, OrientedRect
from .scene import Scene, agent_boxes_at, to_local_frame

HORIZON_STEPS = (2, 4, 6)  # 1 s / 2 s / 3 s at dt = 0.5


@dataclass(frozen=True)
class GridSpec:
    """Cell lattice of pitch ``resolution`` with edges on multiples of it, centred on the origin."""

    resolution: float = 0.1
    extent: tuple[float, float] = (100.0, 100.0)

    def __post_init__(self):
        if not self.resolution > 0 or min(self.extent) <= 0:
            raise ValueError("grid resolution and extent must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (
            int(round(self.extent[1] / self.resolution)),
            int(round(self.extent[0] / self.resolution)),
        )

    @property
    def origin(self) -> np.ndarray:
        """World coordinates of the lower-left grid corner."""
        return -np.asarray(self.extent, dtype=float) / 2.0


@dataclass
class BevGrid:
    spec: GridSpec
    cells: np.ndarray  # (rows=y, cols=x) bool

    @property
    def resolution(self) -> float:
        return self.spec.resolution

    @property
    def extent(self) -> tuple[float, float]:
        return self.spec.extent

    def count(self) -> int:
        return int(self.cells.sum())


@dataclass(frozen=True)
class Polyline:
    points: np.ndarray
    stroke: float | None = None  # defaults to one cell


def _window(spec: GridSpec, lo, hi):
    """Index ranges of cells whose centres may fall inside the box [lo, hi]."""
    res = spec.resolution
    rows, cols = spec.shape
    o = spec.origin
    c0 = max(0, int(np.floor((lo[0] - o[0]) / res)) - 1)
    c1 = min(cols, int(np.ceil((hi[0] - o[0]) / res)) + 1)
    r0 = max(0, int(np.floor((lo[1] - o[1]) / res)) - 1)
    r1 = min(rows, int(np.ceil((hi[1] - o[1]) / res)) + 1)
    return r0, r1, c0, c1


def _centres(spec: GridSpec, r0, r1, c0, c1):
    res = spec.resolution
    o = spec.origin
    xs = o[0] + (np.arange(c0, c1) + 0.5) * res
    ys = o[1] + (np.arange(r0, r1) + 0.5) * res
    return np.meshgrid(xs, ys)


def _rect_mask(spec: GridSpec, rect: OrientedRect):
    from .geometry import rect_vertices

    v = rect_vertices(rect)
    r0, r1, c0, c1 = _window(spec, v.min(axis=0), v.max(axis=0))
    if r0 >= r1 or c0 >= c1:
        return (r0, r1, c0, c1), np.zeros((max(r1 - r0, 0), max(c1 - c0, 0)), dtype=bool)
    X, Y = _centres(spec, r0, r1, c0, c1)
    dx, dy = X - rect.cx, Y - rect.cy
    c, s = np.cos(rect.theta), np.sin(rect.theta)
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    mask = (np.abs(lx) < rect.l / 2.0) & (np.abs(ly) < rect.w / 2.0)
    return (r0, r1, c0, c1), mask


def _polyline_mask(spec: GridSpec, line: Polyline, lo=None, hi=None):
    pts = np.asarray(line.points, dtype=float).reshape(-1, 2)
    half = (line.stroke if line.stroke is not None else spec.resolution) / 2.0
    if lo is None:
        lo, hi = pts.min(axis=0) - half, pts.max(axis=0) + half
    r0, r1, c0, c1 = _window(spec, lo, hi)
    if r0 >= r1 or c0 >= c1 or len(pts) == 0:
        return (r0, r1, c0, c1), np.zeros((max(r1 - r0, 0), max(c1 - c0, 0)), dtype=bool)
    X, Y = _centres(spec, r0, r1, c0, c1)
    P = np.stack([X.ravel(), Y.ravel()], axis=1)
    if len(pts) == 1:
        d = np.linalg.norm(P - pts[0], axis=1)
    else:
        a, b = pts[:-1], pts[1:]
        # only segments near the window matter
        near = (np.minimum(a, b) <= np.asarray(hi) + half).all(axis=1) & (
            np.maximum(a, b) >= np.asarray(lo) - half
        ).all(axis=1)
        if not np.any(near):
            return (r0, r1, c0, c1), np.zeros(X.shape, dtype=bool)
        a, b = a[near], b[near]
        ab = b - a
        denom = np.where((ab**2).sum(1) > 0, (ab**2).sum(1), 1.0)
        t = np.clip(((P[:, None, :] - a[None]) * ab[None]).sum(2) / denom, 0.0, 1.0)
        d = np.linalg.norm(P[:, None, :] - (a[None] + t[..., None] * ab[None]), axis=2).min(axis=1)
    return (r0, r1, c0, c1), (d <= half + 1e-12).reshape(X.shape)


def rasterize(shapes, spec: GridSpec = GridSpec()) -> BevGrid:
    """Occupancy by centre sampling: rectangles strictly contain the centre, polylines within half a stroke."""
    cells = np.zeros(spec.shape, dtype=bool)
    for shape in shapes:
        if isinstance(shape, OrientedRect):
            (r0, r1, c0, c1), m = _rect_mask(spec, shape)
        else:
            line = shape if isinstance(shape, Polyline) else Polyline(np.asarray(shape, dtype=float))
            (r0, r1, c0, c1), m = _polyline_mask(spec, line)
        if m.size:
            cells[r0:r1, c0:c1] |= m
    return BevGrid(spec, cells)


def _planning_frame_scene(scene: Scene, t: float):
    origin = scene.ego_pose_at(0.0)
    boxes = []
    for b in agent_boxes_at(scene, t):
        c = to_local_frame(b.center, origin)[0]
        boxes.append(OrientedRect(c[0], c[1], b.theta - origin[2], b.l, b.w))
    curbs = [to_local_frame(c, origin) for c in scene.curbs]
    return boxes, curbs


def collision_flags(
    traj, footprint: EgoFootprint, scene: Scene, spec: GridSpec = GridSpec()
) -> tuple[np.ndarray, np.ndarray]:
    """Per-timestamp agent and curb collision flags for a planning-frame trajectory.

    Only the cells under the ego footprint are examined; they lie on the same
    lattice as :func:`rasterize`, so the result equals intersecting full rasters.
    """
    traj = np.atleast_2d(np.asarray(traj, dtype=float))
    agent_hits = np.zeros(len(traj), dtype=bool)
    curb_hits = np.zeros(len(traj), dtype=bool)
    for k, x in enumerate(traj):
        t = (k + 1) * scene.dt
        ego = footprint.rect_at(x[0], x[1], x[2])
        win, ego_mask = _rect_mask(spec, ego)
        if not ego_mask.any():
            continue
        r0, r1, c0, c1 = win
        X, Y = _centres(spec, r0, r1, c0, c1)
        lo = np.array([X.min(), Y.min()]) - spec.resolution
        hi = np.array([X.max(), Y.max()]) + spec.resolution
        boxes, curbs = _planning_frame_scene(scene, t)
        for b in boxes:
            bw, bm = _rect_mask(spec, b)
            if _overlaps(win, ego_mask, bw, bm):
                agent_hits[k] = True
                break
        for c in curbs:
            cw, cm = _polyline_mask(spec, Polyline(c), lo, hi)
            if _overlaps(win, ego_mask, cw, cm):
                curb_hits[k] = True
                break
    return agent_hits, curb_hits


def _overlaps(wa, ma, wb, mb) -> bool:
    r0, r1 = max(wa[0], wb[0]), min(wa[1], wb[1])
    c0, c1 = max(wa[2], wb[2]), min(wa[3], wb[3])
    if r0 >= r1 or c0 >= c1:
        return False
    a = ma[r0 - wa[0] : r1 - wa[0], c0 - wa[2] : c1 - wa[2]]
    b = mb[r0 - wb[0] : r1 - wb[0], c0 - wb[2] : c1 - wb[2]]
    return bool(np.any(a & b))


def collision_rates(traj, footprint: EgoFootprint, scene: Scene, spec: GridSpec = GridSpec()):
    """Cumulative per-timestamp collision indicators (1.0 once a collision has occurred)."""
    agent, curb = collision_flags(traj, footprint, scene, spec)
    return (
        np.logical_or.accumulate(agent).astype(float),
        np.logical_or.accumulate(curb).astype(float),
    )


def l2_metric(traj, gt) -> tuple[np.ndarray, float]:
    a = np.atleast_2d(np.asarray(traj, dtype=float))[:, :2]
    b = np.atleast_2d(np.asarray(gt, dtype=float))[:, :2]
    if a.shape != b.shape:
        raise ValueError(f"trajectory lengths differ: {len(a)} vs {len(b)}")
    per_t = np.linalg.norm(a - b, axis=1)
    return per_t, float(per_t.mean())


@dataclass
class MetricsReport:
    acr_per_t: list[float]
    ccr_per_t: list[float]
    acr_avg: float
    ccr_avg: float
    l2_per_t: list[float]
    l2_avg: float
    solve_time_stats: dict[str, float]
    count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _horizon_average(per_t: np.ndarray) -> float:
    idx = [k - 1 for k in HORIZON_STEPS if k <= len(per_t)]
    if not idx:
        return float(per_t.mean()) if len(per_t) else 0.0
    return float(np.mean(per_t[idx]))


def aggregate(rows, solve_times=()) -> MetricsReport:
    """Batch report from per-scene ``(acr_per_t, ccr_per_t, l2_per_t)`` rows."""
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to aggregate")
    acr = np.mean([r[0] for r in rows], axis=0)
    ccr = np.mean([r[1] for r in rows], axis=0)
    l2 = np.mean([r[2] for r in rows], axis=0)
    times = np.asarray(list(solve_times), dtype=float)
    stats = (
        {
            "mean": float(times.mean()),
            "median": float(np.median(times)),
            "p95": float(np.percentile(times, 95)),
            "max": float(times.max()),
        }
        if len(times)
        else {}
    )
    return MetricsReport(
        acr_per_t=acr.tolist(),
        ccr_per_t=ccr.tolist(),
        acr_avg=_horizon_average(acr),
        ccr_avg=_horizon_average(ccr),
        l2_per_t=l2.tolist(),
        l2_avg=_horizon_average(l2),
        solve_time_stats=stats,
        count=len(rows),
    )


def evaluate(traj, scene: Scene, spec: GridSpec = GridSpec(), gt=None):
    gt = scene.future_states() if gt is None else gt
    acr, ccr = collision_rates(traj, scene.footprint, scene, spec)
    l2, _ = l2_metric(traj, gt)
    return acr, ccr, l2


def save_report(report: MetricsReport, path) -> None:
    Path(path).write_text(dumps(report.to_dict()), encoding="utf-8")


def load_report(path) -> MetricsReport:
    return MetricsReport(**json.loads(Path(path).read_text(encoding="utf-8")))


