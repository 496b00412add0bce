"""Reusable experiment drivers: safety suite, random requests, timing, fitting and FD checks."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import qp
from .annotation import Corridor, annotate_corridor
from .config import Settings
from .evaluation import collision_flags
from .geometry import EgoFootprint, OrientedRect
from .losses import (
    agent_safety_loss,
    area_loss,
    corridor_loss,
    encode_corridor,
    imitation_loss,
    map_safety_loss,
)
from .planner import PlannerConfig, PlanRequest, plan, plan_gradients
from .scene import KINDS, Scene, gen_scene, to_local_frame

# ---------------------------------------------------------------------------
# references


def _normals(states: np.ndarray) -> np.ndarray:
    return np.stack([-np.sin(states[:, 2]), np.cos(states[:, 2])], axis=1)


def lateral_shift(reference: np.ndarray, offsets: np.ndarray, x_init=None) -> np.ndarray:
    """Shift a reference sideways by per-step offsets (positive = left of travel)."""
    ref = np.array(reference, dtype=float)
    ref[:, :2] += np.asarray(offsets, dtype=float)[:, None] * _normals(reference)
    return ref


def smoothstep_offsets(magnitude: float, N: int) -> np.ndarray:
    # zero lateral offset and lateral speed at t=0, full offset at the horizon
    u = np.arange(1, N + 1) / N
    return magnitude * (3 * u**2 - 2 * u**3)


def curb_crossing_reference(scene: Scene, rng: np.random.Generator) -> np.ndarray:
    """Ground-truth future pushed sideways until its footprint crosses a curb by 0.3-1.0 m."""
    gt = scene.future_states()
    side = float(rng.choice([-1.0, 1.0]))
    origin = scene.ego_pose_at(0.0)
    last = gt[-1, :2]
    normal = _normals(gt)[-1]
    gaps = []
    for curb in scene.curbs:
        local = to_local_frame(curb, origin)
        on_side = (local - last) @ normal * side > 0
        if np.any(on_side):
            gaps.append(float(np.min(np.linalg.norm(local[on_side] - last, axis=1))))
    clearance = (min(gaps) if gaps else 3.0) - scene.footprint.half_width
    magnitude = clearance + rng.uniform(0.3, 1.0)
    return lateral_shift(gt, smoothstep_offsets(side * magnitude, len(gt)))


# ---------------------------------------------------------------------------
# safety suite


@dataclass
class SafetyRow:
    seed: int
    kind: str
    status: str
    reference_collisions: int
    optimized_collisions: int
    optimized_curb_collisions: int
    optimized_agent_collisions: int
    corridor_flagged: bool


@dataclass
class SafetySummary:
    rows: list[SafetyRow]

    @property
    def optimal_curb_collisions(self) -> int:
        return sum(r.optimized_curb_collisions for r in self.rows if r.status == qp.OPTIMAL)

    @property
    def dominance_violations(self) -> list[SafetyRow]:
        return [r for r in self.rows if r.optimized_collisions > r.reference_collisions]

    def to_dict(self) -> dict:
        statuses: dict[str, int] = {}
        for r in self.rows:
            statuses[r.status] = statuses.get(r.status, 0) + 1
        return {
            "scenes": len(self.rows),
            "statuses": statuses,
            "optimal_curb_collisions": self.optimal_curb_collisions,
            "dominance_violations": len(self.dominance_violations),
            "reference_collisions": sum(r.reference_collisions for r in self.rows),
            "optimized_collisions": sum(r.optimized_collisions for r in self.rows),
            "rows": [asdict(r) for r in self.rows],
        }


def safety_case(seed: int, kind: str, settings: Settings = Settings()) -> SafetyRow:
    scene = gen_scene(seed, kind)
    ann = settings.annotation
    corridor = annotate_corridor(scene, ann.delta_obs, ann.boundary, ann.t_ego)
    rng = np.random.default_rng([seed, 7])
    ref = curb_crossing_reference(scene, rng)
    res = plan(PlanRequest(scene.initial_state(), ref, corridor, scene.footprint), settings.planner)
    ra, rc = collision_flags(ref, scene.footprint, scene, settings.grid)
    oa, oc = collision_flags(res.trajectory, scene.footprint, scene, settings.grid)
    return SafetyRow(
        seed, kind, res.status,
        int(ra.sum() + rc.sum()), int(oa.sum() + oc.sum()), int(oc.sum()), int(oa.sum()),
        corridor.flagged,
    )


def safety_suite(count: int = 50, seed: int = 0, settings: Settings = Settings()) -> SafetySummary:
    rows = [safety_case(seed + i, KINDS[i % len(KINDS)], settings) for i in range(count)]
    return SafetySummary(rows)


# ---------------------------------------------------------------------------
# randomized requests (fallback robustness)


def random_request(rng: np.random.Generator, N: int = 6, dt: float = 0.5) -> PlanRequest:
    """A plan request drawn from a deliberately hostile distribution.

    Mixes sensible corridors with tiny, misplaced, rotated and degenerate ones
    and references that may be far outside or wildly oscillating.
    """
    v0 = rng.uniform(0.0, 15.0)
    x_init = np.array([0.0, 0.0, rng.uniform(-0.3, 0.3), v0])
    mode = rng.integers(0, 4)
    t = np.arange(1, N + 1) * dt
    if mode == 0:
        ref = np.column_stack([v0 * t, np.zeros(N), np.zeros(N), np.full(N, v0)])
    elif mode == 1:
        ref = np.column_stack([v0 * t, rng.normal(0, 3, N), rng.normal(0, 0.5, N), np.full(N, v0)])
    elif mode == 2:
        ref = np.column_stack([rng.uniform(-30, 60, N), rng.uniform(-20, 20, N), rng.uniform(-np.pi, np.pi, N), rng.uniform(0, 20, N)])
    else:
        ref = np.column_stack([np.zeros(N), np.zeros(N), np.zeros(N), np.zeros(N)])
    rects, flags = [], []
    kind = rng.integers(0, 4)
    for k in range(N):
        if kind == 0:  # wide and roughly aligned
            rects.append(OrientedRect(v0 * t[k], 0.0, 0.0, 30.0, 6.0))
        elif kind == 1:  # narrower than the ego
            rects.append(OrientedRect(v0 * t[k], rng.normal(0, 1), rng.normal(0, 0.3), rng.uniform(0.5, 6), rng.uniform(0.3, 2.0)))
        elif kind == 2:  # far away from everything
            rects.append(OrientedRect(rng.uniform(-80, 80), rng.uniform(-80, 80), rng.uniform(-np.pi, np.pi), rng.uniform(1, 30), rng.uniform(1, 15)))
        else:  # degenerate placeholder boxes
            rects.append(OrientedRect(v0 * t[k], 0.0, 0.0, 0.2, 0.2))
        flags.append(kind == 3)
    return PlanRequest(x_init, ref, Corridor(tuple(rects), tuple(flags)), EgoFootprint())


@dataclass
class RobustnessReport:
    requests: int
    statuses: dict[str, int]
    exceptions: list[str]


def fallback_robustness(count: int = 1000, seed: int = 0, cfg: PlannerConfig = PlannerConfig()) -> RobustnessReport:
    rng = np.random.default_rng(seed)
    statuses: dict[str, int] = {}
    exceptions = []
    for i in range(count):
        req = random_request(rng, cfg.N, cfg.dt)
        try:
            res = plan(req, cfg)
        except Exception as exc:  # noqa: BLE001 - counting every escape is the point
            exceptions.append(f"{i}: {type(exc).__name__}: {exc}")
            continue
        statuses[res.status] = statuses.get(res.status, 0) + 1
    return RobustnessReport(count, statuses, exceptions)


# ---------------------------------------------------------------------------
# runtime


@dataclass
class RuntimeReport:
    samples: int
    median_ms: float
    p95_ms: float
    max_ms: float
    statuses: dict[str, int]


def runtime_benchmark(count: int = 200, seed: int = 0, settings: Settings = Settings()) -> RuntimeReport:
    """Wall time of complete plans (assemble, solve, rollout) on synthetic scenes."""
    requests = []
    for i in range(count):
        scene = gen_scene(seed + i, KINDS[i % len(KINDS)])
        ann = settings.annotation
        corridor = annotate_corridor(scene, ann.delta_obs, ann.boundary, ann.t_ego)
        ref = curb_crossing_reference(scene, np.random.default_rng([seed + i, 7])) if i % 2 else scene.future_states()
        requests.append(PlanRequest(scene.initial_state(), ref, corridor, scene.footprint))
    plan(requests[0], settings.planner)  # warm-up
    times, statuses = [], {}
    for req in requests:
        start = time.perf_counter()
        res = plan(req, settings.planner)
        times.append(time.perf_counter() - start)
        statuses[res.status] = statuses.get(res.status, 0) + 1
    ms = np.asarray(times) * 1e3
    return RuntimeReport(count, float(np.median(ms)), float(np.percentile(ms, 95)), float(ms.max()), statuses)


# ---------------------------------------------------------------------------
# weight fitting


def noisy_reference(scene: Scene, rng: np.random.Generator, sigma: float = 0.6) -> np.ndarray:
    """Ground truth with correlated lateral/longitudinal noise, mimicking an imperfect upstream planner."""
    gt = scene.future_states()
    N = len(gt)
    lat = np.cumsum(rng.normal(0.0, sigma, N)) / np.sqrt(np.arange(1, N + 1))
    lon = rng.normal(0.0, sigma, N)
    ref = lateral_shift(gt, lat)
    heading = np.stack([np.cos(gt[:, 2]), np.sin(gt[:, 2])], axis=1)
    ref[:, :2] += lon[:, None] * heading
    return ref


def fit_dataset(count: int = 20, seed: int = 0, settings: Settings = Settings(), kind: str = "cut-in"):
    """Pairs (request, demonstration) from cut-in scenes whose initial plan is optimal."""
    data = []
    s = seed
    while len(data) < count:
        scene = gen_scene(s, kind)
        ann = settings.annotation
        corridor = annotate_corridor(scene, ann.delta_obs, ann.boundary, ann.t_ego)
        ref = noisy_reference(scene, np.random.default_rng([s, 11]))
        req = PlanRequest(scene.initial_state(), ref, corridor, scene.footprint)
        s += 1
        if plan(req, settings.planner).status == qp.OPTIMAL:
            data.append((req, scene.future_states()))
        if s - seed > 20 * count:
            raise RuntimeError("could not assemble an all-optimal fit dataset")
    return data


# ---------------------------------------------------------------------------
# finite-difference gradient checks


def _fd(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b), initial=0.0) / max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor))


@dataclass
class GradCheck:
    name: str
    cases: int
    max_rel_err: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.cases > 0 and self.max_rel_err < self.threshold


def _random_corridor(rng, N):
    rects = [
        OrientedRect(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-np.pi, np.pi), rng.uniform(2, 8), rng.uniform(1, 4))
        for _ in range(N)
    ]
    return Corridor(tuple(rects))


def _depth_table(points, rect):
    local = (points - rect.center) @ np.array(
        [[np.cos(rect.theta), -np.sin(rect.theta)], [np.sin(rect.theta), np.cos(rect.theta)]]
    )
    return np.stack(
        [rect.l / 2 - local[:, 0], rect.l / 2 + local[:, 0], rect.w / 2 - local[:, 1], rect.w / 2 + local[:, 1]], axis=1
    )


def _safety_points_ok(points, rect, gap=1e-3) -> bool:
    d = _depth_table(points, rect)
    srt = np.sort(d, axis=1)
    depth = srt[:, 0]
    if np.any(np.abs(depth) < gap):  # on an edge
        return False
    inside = depth > 0
    if np.any(srt[inside, 1] - srt[inside, 0] < gap):  # tie between two edges
        return False
    pos = np.sort(depth[inside])[::-1]
    if len(pos) > 1 and pos[0] - pos[1] < gap:  # tie for the deepest point
        return False
    return True


def loss_configs(count: int, seed: int = 0, N: int = 6):
    """Random non-degenerate loss inputs: kinks are at least 1e-3 away."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        pred = _random_corridor(rng, N)
        gt = _random_corridor(rng, N)
        enc_p, enc_g = encode_corridor(pred), encode_corridor(gt)
        if np.min(np.abs(enc_p - enc_g)) < 1e-3:
            continue
        curb, agent = [], []
        ok = True
        for r in pred:
            c = r.center + rng.uniform(-6, 6, size=(8, 2))
            a = r.center + rng.uniform(-6, 6, size=(8, 2))
            ok &= _safety_points_ok(c, r) and _safety_points_ok(a, r)
            curb.append(c)
            agent.append(a)
        traj = rng.normal(0, 5, size=(N, 4))
        demo = traj + rng.normal(0, 1, size=(N, 4))
        if not ok or np.min(np.abs(traj[:, :2] - demo[:, :2])) < 1e-3:
            continue
        out.append({"pred": enc_p, "gt": enc_g, "curb": curb, "agent": agent, "traj": traj, "demo": demo})
    return out


def loss_gradcheck(count: int = 50, seed: int = 0) -> list[GradCheck]:
    worst = {k: 0.0 for k in ("corridor", "map", "agent", "area", "imitation")}
    for cfg in loss_configs(count, seed):
        p = cfg["pred"]
        checks = {
            "corridor": (lambda e: corridor_loss(e, cfg["gt"]).value, corridor_loss(p, cfg["gt"]).gradient, p),
            "map": (lambda e: map_safety_loss(e, cfg["curb"]).value, map_safety_loss(p, cfg["curb"]).gradient, p),
            "agent": (lambda e: agent_safety_loss(e, cfg["agent"]).value, agent_safety_loss(p, cfg["agent"]).gradient, p),
            "area": (lambda e: area_loss(e).value, area_loss(p).gradient, p),
            "imitation": (
                lambda x: imitation_loss(x, cfg["demo"]).value,
                imitation_loss(cfg["traj"], cfg["demo"]).gradient,
                cfg["traj"][:, :2],
            ),
        }
        for name, (f, analytic, x0) in checks.items():
            worst[name] = max(worst[name], rel_err(analytic, _fd(f, x0)))
    return [GradCheck(f"{k}_loss", count, v, 1e-5) for k, v in worst.items()]


def random_qp(rng, n_max: int = 6, m_max: int = 8, margin: float = 1e-3):
    """Strictly convex QP whose solution is strictly complementary by ``margin``."""
    while True:
        n = int(rng.integers(2, n_max + 1))
        m = int(rng.integers(1, m_max + 1))
        M = rng.normal(size=(n, n))
        H = M @ M.T + 0.5 * np.eye(n)
        g = rng.normal(size=n) * 2
        A = rng.normal(size=(m, n))
        b = rng.normal(size=m) + 0.5
        p = qp.QpProblem(H, g, None, None, A, b)
        sol = qp.solve(p)
        if sol.status != qp.OPTIMAL:
            continue
        gap = b - A @ sol.z
        if np.all((sol.lam > margin) | (gap > margin)) and np.sum(sol.lam > margin) < n:  # vertex solutions have dz/dg = 0
            return p, sol


def qp_gradcheck(count: int = 50, seed: int = 0, h: float = 1e-6) -> list[GradCheck]:
    rng = np.random.default_rng(seed)
    worst = {"g": 0.0, "b_in": 0.0, "H_diag": 0.0, "A_in": 0.0}
    inactive_nonzero = 0
    for _ in range(count):
        p, sol = random_qp(rng)
        w = rng.normal(size=p.n)
        grads = qp.backward(p, sol, w)

        def loss(H=p.H, g=p.g, A=p.A_in, b=p.b_in):
            s = qp.solve(qp.QpProblem(H, g, None, None, A, b))
            return float(w @ s.z)

        worst["g"] = max(worst["g"], rel_err(grads.dL_dg, _fd(lambda x: loss(g=x), p.g, h)))
        worst["b_in"] = max(worst["b_in"], rel_err(grads.dL_dbin, _fd(lambda x: loss(b=x), p.b_in, h)))

        def with_diag(d):
            H = p.H.copy()
            H[np.diag_indices(p.n)] = d
            return loss(H=H)

        worst["H_diag"] = max(worst["H_diag"], rel_err(np.diag(grads.dL_dH), _fd(with_diag, np.diag(p.H), h)))
        worst["A_in"] = max(worst["A_in"], rel_err(grads.dL_dAin, _fd(lambda x: loss(A=x), p.A_in, h)))
        inactive = sol.lam <= 1e-7
        inactive_nonzero += int(np.count_nonzero(grads.dL_dbin[inactive]))
    out = [GradCheck(f"qp_{k}", count, v, 1e-4) for k, v in worst.items()]
    out.append(GradCheck("qp_inactive_rows_zero", count, float(inactive_nonzero), 0.5))
    return out


def e2e_loss(req: PlanRequest, cfg: PlannerConfig, demo, Q, R, margins=None) -> float:
    """Imitation loss of the single-pass plan; ``margins`` freezes the footprint inflation."""
    if margins is not None:
        cfg = replace(cfg, rollout_retries=0)
    res = plan(req, replace(cfg, Q_diag=tuple(Q), R_diag=tuple(R)), margins=margins)
    if res.status != qp.OPTIMAL:
        raise ValueError("plan degraded during finite differencing")
    return imitation_loss(res.trajectory, demo).value


def e2e_gradcheck(count: int = 10, seed: int = 0, settings: Settings = Settings(), h: float = 1e-6) -> GradCheck:
    cfg = settings.planner
    worst = 0.0
    for req, demo in fit_dataset(count, seed, settings):
        g = plan_gradients(req, cfg, demo)
        # margins picked by rollout tightening are held fixed, as in the analytic gradient
        m = plan(req, cfg).margins
        Q, R = np.asarray(cfg.Q_diag, float), np.asarray(cfg.R_diag, float)
        fQ = _fd(lambda q: e2e_loss(req, cfg, demo, q, R, m), Q, h)
        fR = _fd(lambda r: e2e_loss(req, cfg, demo, Q, r, m), R, h)
        worst = max(worst, rel_err(np.concatenate([g.Q_diag, g.R_diag]), np.concatenate([fQ, fR])))
    return GradCheck("end_to_end_QR", count, worst, 1e-3)


def all_gradchecks(seed: int = 0, settings: Settings = Settings()) -> list[GradCheck]:
    return [*loss_gradcheck(50, seed), *qp_gradcheck(50, seed), e2e_gradcheck(10, seed, settings)]

