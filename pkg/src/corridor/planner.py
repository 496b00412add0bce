"""Corridor-constrained tracking QP, its forward plan and gradients through it.

Decision vector ``z = (x_1..x_N, u_0..u_{N-1})`` with 4 state and 2 control
entries per step. The dynamics are linearised once around the reference
(finite-differenced speeds, zero nominal controls) and enter as equality
rows; the corridor enters through 16 footprint rows per step followed by 4N
control-bound rows.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dynamics, qp
from ._json import dumps
from .annotation import Corridor
from .geometry import (
    EgoFootprint,
    edge_distances,
    footprint_constraint_rows,
    footprint_rows_jacobian,
    rect_to_halfspaces,
    rect_vertices,
)
from .losses import imitation_loss

log = logging.getLogger(__name__)

PASSTHROUGH = "reference-passthrough"


@dataclass(frozen=True)
class PlannerConfig:
    Q_diag: tuple[float, float, float, float] = (1.0, 1.0, 0.5, 0.5)
    R_diag: tuple[float, float] = (0.1, 0.1)
    u_min: tuple[float, float] = (-6.0, -0.6)
    u_max: tuple[float, float] = (4.0, 0.6)
    dt: float = 0.5
    N: int = 6
    L: float = 2.7
    tol: float = qp.DEFAULT_TOL
    slack_weight: float = qp.DEFAULT_SLACK_WEIGHT
    footprint_margin: float = 0.15
    rollout_clearance: float = 0.1
    rollout_retries: int = 2
    linearization: str = dynamics.STANDARD

    def __post_init__(self):
        if len(self.Q_diag) != 4 or len(self.R_diag) != 2:
            raise ValueError("Q_diag needs 4 weights and R_diag 2")
        if min(self.Q_diag) < 0 or min(self.R_diag) <= 0:
            raise ValueError("Q_diag must be >= 0 and R_diag > 0")
        if not all(lo < hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("u_min must be below u_max componentwise")
        if self.N < 1 or self.dt <= 0 or self.L <= 0:
            raise ValueError("invalid horizon, step or wheelbase")
        if self.footprint_margin < 0 or self.rollout_clearance < 0 or self.rollout_retries < 0:
            raise ValueError("footprint_margin, rollout_clearance and rollout_retries must be non-negative")


@dataclass(frozen=True)
class PlanRequest:
    x_init: np.ndarray
    reference: np.ndarray  # (N, 4) tracked states
    corridor: Corridor
    footprint: EgoFootprint = field(default_factory=EgoFootprint)

    def __post_init__(self):
        x0 = np.asarray(self.x_init, dtype=float).reshape(-1)
        ref = np.atleast_2d(np.asarray(self.reference, dtype=float))
        object.__setattr__(self, "x_init", x0)
        object.__setattr__(self, "reference", ref)
        if x0.shape != (4,) or not np.all(np.isfinite(x0)):
            raise ValueError("x_init must be 4 finite numbers")
        if ref.ndim != 2 or ref.shape[1] != 4 or not np.all(np.isfinite(ref)):
            raise ValueError("reference must be finite (N, 4) states")
        if len(ref) != len(self.corridor):
            raise ValueError(
                f"reference length {len(ref)} does not match corridor length {len(self.corridor)}"
            )


@dataclass
class PlanResult:
    trajectory: np.ndarray
    controls: np.ndarray
    status: str
    solve_time: float
    problem: qp.QpProblem | None = None
    solution: qp.QpSolution | None = None
    margins: np.ndarray | None = None  # per-step footprint inflation used by the final QP

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "solve_time_s": self.solve_time,
            "controls": self.controls.tolist(),
            "trajectory": self.trajectory.tolist(),
        }


def reference_from_positions(x_init, positions, dt: float) -> np.ndarray:
    """Complete a position-only reference with chord headings and finite-difference speeds."""
    x_init = np.asarray(x_init, dtype=float)
    pos = np.atleast_2d(np.asarray(positions, dtype=float))[:, :2]
    pts = np.vstack([x_init[:2], pos])
    d = np.diff(pts, axis=0)
    heading = np.arctan2(d[:, 1], d[:, 0])
    still = np.hypot(d[:, 0], d[:, 1]) < 1e-9
    # hold the previous heading while standing still
    prev = x_init[2]
    for i in range(len(heading)):
        if still[i]:
            heading[i] = prev
        prev = heading[i]
    heading = np.unwrap(np.concatenate([[x_init[2]], heading]))[1:]
    speed = np.hypot(d[:, 0], d[:, 1]) / dt
    return np.column_stack([pos, heading, speed])


def _unwrap_to(theta, target):
    return theta + 2 * np.pi * np.round((target - theta) / (2 * np.pi))


def nominal_states(req: PlanRequest, dt: float) -> np.ndarray:
    """Linearisation points: reference positions and headings, finite-differenced speeds."""
    ref = req.reference.copy()
    heads = np.unwrap(np.concatenate([[req.x_init[2]], ref[:, 2]]))[1:]
    pts = np.vstack([req.x_init[:2], ref[:, :2]])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1) / dt
    speeds = np.empty(len(ref))
    speeds[:-1] = seg[1:]
    speeds[-1] = seg[-1]
    ref[:, 2] = heads
    ref[:, 3] = speeds
    return ref


def state_index(t: int) -> slice:
    """Slice of x_t (t = 1..N) inside z."""
    return slice(4 * (t - 1), 4 * t)


def control_index(t: int, N: int) -> slice:
    """Slice of u_t (t = 0..N-1) inside z."""
    return slice(4 * N + 2 * t, 4 * N + 2 * t + 2)


def corridor_rows(N: int) -> np.ndarray:
    return np.arange(16 * N)


def _margins(cfg: PlannerConfig, margins) -> np.ndarray:
    if margins is None:
        return np.full(cfg.N, cfg.footprint_margin)
    m = np.asarray(margins, dtype=float).reshape(-1)
    if m.shape != (cfg.N,) or np.any(m < 0):
        raise ValueError("margins must be N non-negative numbers")
    return m


def assemble(
    req: PlanRequest, cfg: PlannerConfig, nominal: np.ndarray | None = None, margins=None
) -> qp.QpProblem:
    N = len(req.reference)
    if N != cfg.N:
        raise ValueError(f"request horizon {N} differs from configured N={cfg.N}")
    n = 6 * N
    nom = nominal_states(req, cfg.dt) if nominal is None else np.asarray(nominal, dtype=float)
    Q = np.asarray(cfg.Q_diag, dtype=float)
    R = np.asarray(cfg.R_diag, dtype=float)

    target = req.reference.copy()
    target[:, 2] = _unwrap_to(target[:, 2], nom[:, 2])
    H = np.zeros((n, n))
    g = np.zeros(n)
    for t in range(1, N + 1):
        i = state_index(t)
        H[i, i] = 2.0 * np.diag(Q)
        g[i] = -2.0 * Q * target[t - 1]
    for t in range(N):
        j = control_index(t, N)
        H[j, j] = 2.0 * np.diag(R)

    A_eq = np.zeros((4 * N, n))
    b_eq = np.zeros(4 * N)
    u0 = np.zeros(2)
    for t in range(N):
        x_nom = req.x_init if t == 0 else nom[t - 1]
        lin = dynamics.linearize(x_nom, u0, cfg.dt, cfg.L, cfg.linearization)
        r = slice(4 * t, 4 * t + 4)
        A_eq[r, state_index(t + 1)] = np.eye(4)
        A_eq[r, control_index(t, N)] = -lin.B
        if t == 0:
            b_eq[r] = lin.A @ req.x_init + lin.c
        else:
            A_eq[r, state_index(t)] = -lin.A
            b_eq[r] = lin.c

    margins = _margins(cfg, margins)
    A_in = np.zeros((16 * N + 4 * N, n))
    b_in = np.zeros(16 * N + 4 * N)
    for t in range(1, N + 1):
        fp = req.footprint.inflated(margins[t - 1])
        G, h = footprint_constraint_rows(rect_to_halfspaces(req.corridor[t - 1]), fp, nom[t - 1, 2])
        rows = slice(16 * (t - 1), 16 * t)
        A_in[rows, state_index(t).start : state_index(t).start + 3] = G
        b_in[rows] = h
    u_max = np.asarray(cfg.u_max, dtype=float)
    u_min = np.asarray(cfg.u_min, dtype=float)
    for t in range(N):
        r0 = 16 * N + 4 * t
        j = control_index(t, N)
        A_in[r0 : r0 + 2, j] = np.eye(2)
        b_in[r0 : r0 + 2] = u_max
        A_in[r0 + 2 : r0 + 4, j] = -np.eye(2)
        b_in[r0 + 2 : r0 + 4] = -u_min
    return qp.QpProblem(H, g, A_eq, b_eq, A_in, b_in)


def rollout_clearance(req: PlanRequest, trajectory: np.ndarray) -> np.ndarray:
    """Per-step distance from the un-inflated footprint to its rectangle's boundary (negative = outside)."""
    out = np.empty(len(trajectory))
    for t, (x, rect) in enumerate(zip(trajectory, req.corridor)):
        verts = rect_vertices(req.footprint.rect_at(x[0], x[1], x[2]))
        out[t] = edge_distances(verts, rect).min()
    return out


def plan(
    req: PlanRequest, cfg: PlannerConfig, nominal: np.ndarray | None = None, margins=None
) -> PlanResult:
    """Solve the hard QP, fall back to slack-relaxed corridor rows, then to the reference.

    The linearised corridor rows are checked against the nonlinear rollout;
    steps whose real clearance falls short of ``cfg.rollout_clearance`` get
    their footprint margin raised by the shortfall and the QP is re-solved
    (same linearisation, at most ``cfg.rollout_retries`` times).
    """
    start = time.perf_counter()
    problem = sol = None
    status = PASSTHROUGH
    try:
        m = _margins(cfg, margins)
        problem = assemble(req, cfg, nominal, m)
        sol = qp.solve(problem, cfg.tol)
        if sol.status == qp.OPTIMAL:
            status = qp.OPTIMAL
        else:
            sol = qp.solve_soft(problem, corridor_rows(cfg.N), cfg.slack_weight, cfg.tol)
            if sol.status == qp.SOFT:
                status = qp.SOFT
        if status != PASSTHROUGH:
            solver = (
                (lambda p: qp.solve(p, cfg.tol))
                if status == qp.OPTIMAL
                else (lambda p: qp.solve_soft(p, corridor_rows(cfg.N), cfg.slack_weight, cfg.tol))
            )
            for _ in range(cfg.rollout_retries):
                controls = sol.z[4 * cfg.N :].reshape(cfg.N, 2)
                trajectory = dynamics.rollout(req.x_init, controls, cfg.dt, cfg.L)
                allowed = sol.slack.reshape(cfg.N, 16).max(axis=1) if len(sol.slack) else 0.0
                short = cfg.rollout_clearance - rollout_clearance(req, trajectory) - allowed
                if not np.any(short > 1e-9):
                    break
                cand = m + np.maximum(short, 0.0)
                p2 = assemble(req, cfg, nominal, cand)
                s2 = solver(p2)
                if s2.status != sol.status:
                    break  # tightening broke the solve: keep the last plan
                m, problem, sol = cand, p2, s2
        if status != PASSTHROUGH:
            controls = sol.z[4 * cfg.N :].reshape(cfg.N, 2)
            trajectory = dynamics.rollout(req.x_init, controls, cfg.dt, cfg.L)
            if not np.all(np.isfinite(trajectory)):
                raise FloatingPointError("non-finite rollout")
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("planner degraded to reference passthrough: %s", exc)
        status = PASSTHROUGH
    if status == PASSTHROUGH:
        controls = np.zeros((len(req.reference), 2))
        trajectory = req.reference.copy()
        m = None
    return PlanResult(trajectory, controls, status, time.perf_counter() - start, problem, sol, m)


@dataclass
class PlanGradients:
    loss: float
    Q_diag: np.ndarray
    R_diag: np.ndarray
    reference: np.ndarray  # (N, 4), through the tracking cost only
    corridor: np.ndarray  # (N, 5) over (cx, cy, theta, l, w)


def plan_gradients(
    req: PlanRequest, cfg: PlannerConfig, demonstration, result: PlanResult | None = None
) -> PlanGradients:
    """Imitation loss of the optimised trajectory and its gradients.

    The linearisation point is held fixed, so the reference gradient only
    covers the reference's role as tracking target.
    """
    result = plan(req, cfg) if result is None else result
    if result.status != qp.OPTIMAL:
        raise ValueError(f"cannot differentiate a {result.status!r} plan")
    N = cfg.N
    lv = imitation_loss(result.trajectory, demonstration)
    dL_dstates = np.zeros((N, 4))
    dL_dstates[:, :2] = lv.gradient
    dL_du = dynamics.rollout_vjp(req.x_init, result.controls, cfg.dt, cfg.L, dL_dstates)
    dL_dz = np.zeros(6 * N)
    dL_dz[4 * N :] = dL_du.ravel()
    grads = qp.backward(result.problem, result.solution, dL_dz)

    Q = np.asarray(cfg.Q_diag, dtype=float)
    nom = nominal_states(req, cfg.dt)
    target = req.reference.copy()
    target[:, 2] = _unwrap_to(target[:, 2], nom[:, 2])
    diagH = np.diag(grads.dL_dH)
    dQ = np.zeros(4)
    dR = np.zeros(2)
    d_ref = np.zeros((N, 4))
    for t in range(1, N + 1):
        i = state_index(t)
        dQ += 2.0 * diagH[i] - 2.0 * target[t - 1] * grads.dL_dg[i]
        d_ref[t - 1] = -2.0 * Q * grads.dL_dg[i]
    for t in range(N):
        dR += 2.0 * diagH[control_index(t, N)]

    margins = _margins(cfg, result.margins)
    d_cor = np.zeros((N, 5))
    for t in range(1, N + 1):
        rows = slice(16 * (t - 1), 16 * t)
        cols = slice(state_index(t).start, state_index(t).start + 3)
        fp = req.footprint.inflated(margins[t - 1])
        dG, dh = footprint_rows_jacobian(req.corridor[t - 1], fp, nom[t - 1, 2])
        gA = grads.dL_dAin[rows, cols]
        gb = grads.dL_dbin[rows]
        d_cor[t - 1] = np.einsum("prc,rc->p", dG, gA) + dh @ gb
    return PlanGradients(lv.value, dQ, dR, d_ref, d_cor)


@dataclass
class FitResult:
    Q_diag: np.ndarray
    R_diag: np.ndarray
    history: list[float]
    skipped: list[int]


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("CORRIDOR_THREADS", "1")))
    except ValueError:
        return 1


def _evaluate(dataset, cfg):
    def one(sample):
        req, demo = sample
        res = plan(req, cfg)
        if res.status != qp.OPTIMAL:
            return None
        return plan_gradients(req, cfg, demo, res)

    workers = _workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, dataset))
    return [one(s) for s in dataset]


def fit_weights(dataset, cfg: PlannerConfig, steps: int, lr: float) -> FitResult:
    """Projected gradient descent of the mean imitation loss over Q_diag and R_diag."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    Q = np.asarray(cfg.Q_diag, dtype=float)
    R = np.asarray(cfg.R_diag, dtype=float)
    history, skipped = [], []
    for k in range(steps + 1):
        cur = replace(cfg, Q_diag=tuple(Q), R_diag=tuple(R))
        results = _evaluate(dataset, cur)
        ok = [r for r in results if r is not None]
        skipped.append(len(results) - len(ok))
        if not ok:
            raise ValueError("no sample solved to optimality")
        history.append(float(np.mean([r.loss for r in ok])))
        if k == steps:
            break
        gQ = np.mean([r.Q_diag for r in ok], axis=0)
        gR = np.mean([r.R_diag for r in ok], axis=0)
        Q = np.maximum(Q - lr * gQ, 0.0)
        R = np.maximum(R - lr * gR, 1e-6)
    return FitResult(Q, R, history, skipped)


def save_plan(result: PlanResult, path) -> None:
    Path(path).write_text(dumps(result.to_dict()), encoding="utf-8")


def load_plan(path) -> dict:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    expected = {"status", "solve_time_s", "controls", "trajectory"}
    if not isinstance(obj, dict) or set(obj) != expected:
        raise ValueError(f"plan file needs exactly the keys {sorted(expected)}")
    obj["controls"] = np.asarray(obj["controls"], dtype=float).reshape(-1, 2)
    obj["trajectory"] = np.asarray(obj["trajectory"], dtype=float).reshape(-1, 4)
    return obj
