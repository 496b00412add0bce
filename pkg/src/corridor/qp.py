"""Dense convex QP solver and its implicit (KKT) derivative.

Problems are ``min 1/2 z'Hz + g'z  s.t.  A_eq z = b_eq,  A_in z <= b_in``.
The forward solve is a Mehrotra predictor-corrector interior-point method
followed by an active-set polish, which leaves inactive multipliers exactly
zero and drives the KKT residual down to round-off.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import (
    LinAlgError,
    LinAlgWarning,
    cho_factor,
    cho_solve,
    lu_factor,
    lu_solve,
)

OPTIMAL = "optimal"
SOFT = "soft-fallback"
FAILED = "failed"

DEFAULT_TOL = 1e-8
DEFAULT_SLACK_WEIGHT = 1e3
_STALL_WINDOW = 40


class DegenerateGradientWarning(RuntimeWarning):
    """Raised when strict complementarity fails at the solution being differentiated."""


def _as2d(a, cols):
    if a is None:
        return np.zeros((0, cols))
    return np.asarray(a, dtype=float).reshape(-1, cols)


def _as1d(a):
    if a is None:
        return np.zeros(0)
    return np.asarray(a, dtype=float).reshape(-1)


@dataclass
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = self.H.shape[0]
        if self.H.shape != (n, n):
            raise ValueError("H must be square")
        self.g = _as1d(self.g)
        self.A_eq, self.b_eq = _as2d(self.A_eq, n), _as1d(self.b_eq)
        self.A_in, self.b_in = _as2d(self.A_in, n), _as1d(self.b_in)
        if self.g.shape != (n,):
            raise ValueError("g has the wrong length")
        if len(self.A_eq) != len(self.b_eq) or len(self.A_in) != len(self.b_in):
            raise ValueError("constraint matrix and right-hand side disagree")
        if np.max(np.abs(self.H - self.H.T), initial=0.0) > 1e-12:
            raise ValueError("H must be symmetric")

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def m_eq(self) -> int:
        return len(self.b_eq)

    @property
    def m_in(self) -> int:
        return len(self.b_in)

    def objective(self, z) -> float:
        return float(0.5 * z @ self.H @ z + self.g @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    status: str
    kkt_residual: float
    iterations: int = 0
    slack: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass
class QpGradients:
    dL_dH: np.ndarray
    dL_dg: np.ndarray
    dL_dAeq: np.ndarray
    dL_dbeq: np.ndarray
    dL_dAin: np.ndarray
    dL_dbin: np.ndarray


def kkt_residuals(p: QpProblem, z, nu, lam) -> dict[str, float]:
    r_stat = p.H @ z + p.g + p.A_eq.T @ nu + p.A_in.T @ lam
    gap = p.b_in - p.A_in @ z
    return {
        "stationarity": float(np.max(np.abs(r_stat), initial=0.0)),
        "equality": float(np.max(np.abs(p.A_eq @ z - p.b_eq), initial=0.0)),
        "inequality": float(max(0.0, -np.min(gap, initial=0.0))),
        "dual": float(max(0.0, -np.min(lam, initial=0.0))),
        "complementarity": float(np.max(np.abs(lam * gap), initial=0.0)),
    }


def kkt_residual(p: QpProblem, z, nu, lam) -> float:
    return max(kkt_residuals(p, z, nu, lam).values())


def _check_psd(H):
    eig = np.linalg.eigvalsh(H) if len(H) else np.zeros(0)
    if len(eig) and eig[0] < -1e-9 * max(1.0, abs(eig[-1])):
        raise ValueError(f"H is not positive semidefinite (min eigenvalue {eig[0]:.3e})")


def _solve_kkt(M, A_eq, r1, r2):
    me = len(A_eq)
    if me == 0:
        try:
            return np.linalg.solve(M, r1), np.zeros(0)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(M, r1, rcond=None)[0], np.zeros(0)
    n = len(M)
    K = np.zeros((n + me, n + me))
    K[:n, :n] = M
    K[:n, n:] = A_eq.T
    K[n:, :n] = A_eq
    rhs = np.concatenate([r1, r2])
    try:
        sol = np.linalg.solve(K, rhs)
        sol = sol + np.linalg.solve(K, rhs - K @ sol)  # one refinement step for ill-conditioned K
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def _max_step(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-x[neg] / dx[neg])))


class _NewtonSystem:
    """Primal-dual Newton system at one iterate, factorised once for both IPM solves.

    Rows with large ``lam / s`` (nearly active) stay in augmented form with
    ``-s / lam`` on the diagonal; the others are folded into the Hessian.
    Both pieces stay well conditioned as the slacks of active rows vanish.
    """

    def __init__(self, H, Ae, Ai, s, lam):
        n, me = len(H), len(Ae)
        self.n, self.me, self.Ai, self.lam = n, me, Ai, lam
        self.d = s / lam
        self.keep = self.d < 1.0
        self.fold = ~self.keep
        self.w = 1.0 / self.d[self.fold]
        self.Af, Ak = Ai[self.fold], Ai[self.keep]
        mk = len(Ak)
        K = np.zeros((n + me + mk, n + me + mk))
        K[:n, :n] = H + self.Af.T @ (self.w[:, None] * self.Af)
        K[:n, n : n + me] = Ae.T
        K[n : n + me, :n] = Ae
        K[:n, n + me :] = Ak.T
        K[n + me :, :n] = Ak
        K[n + me :, n + me :] = -np.diag(self.d[self.keep])
        self.K = K
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)
            self.lu = lu_factor(K, check_finite=False)

    def direction(self, r_d, r_e, r_i, r_c):
        n, me = self.n, self.me
        q = -r_i + r_c / self.lam
        rhs = np.concatenate([-r_d + self.Af.T @ (self.w * q[self.fold]), -r_e, q[self.keep]])
        sol = lu_solve(self.lu, rhs, check_finite=False)
        if not np.all(np.isfinite(sol)):
            sol = np.linalg.lstsq(self.K, rhs, rcond=None)[0]
        dz, dnu = sol[:n], sol[n : n + me]
        dlam = np.empty(len(self.Ai))
        dlam[self.keep] = sol[n + me :]
        dlam[self.fold] = self.w * (self.Af @ dz - q[self.fold])
        ds = -r_i - self.Ai @ dz
        return dz, dnu, ds, dlam


def _interior_point(p: QpProblem, max_iter: int):
    n, mi = p.n, p.m_in
    H, g, Ae, be, Ai, bi = p.H, p.g, p.A_eq, p.b_eq, p.A_in, p.b_in
    scale = 1.0 + max(
        np.max(np.abs(g), initial=0.0), np.max(np.abs(be), initial=0.0), np.max(np.abs(bi), initial=0.0)
    )

    # start from the equality-constrained minimiser (regularised if H is singular)
    z, nu = _solve_kkt(H + 1e-8 * np.eye(n), Ae, -g, be)
    s = np.maximum(bi - Ai @ z, 1.0) if mi else np.zeros(0)
    lam = np.ones(mi)
    if mi:
        # shift (s, lam) by one affine-scaling step so their scale matches the problem
        r_i = Ai @ z + s - bi
        r_d = H @ z + g + Ae.T @ nu + Ai.T @ lam
        _, _, ds, dlam = _NewtonSystem(H, Ae, Ai, s, lam).direction(r_d, Ae @ z - be, r_i, s * lam)
        if np.all(np.isfinite(ds)) and np.all(np.isfinite(dlam)):
            s = np.maximum(np.abs(s + ds), 1.0)
            lam = np.maximum(np.abs(lam + dlam), 1.0)
    it = 0
    mehrotra = True
    history: list[float] = []
    for it in range(1, max_iter + 1):
        r_d = H @ z + g + Ae.T @ nu + Ai.T @ lam
        r_e = Ae @ z - be
        r_i = Ai @ z + s - bi
        mu = float(s @ lam / mi) if mi else 0.0
        res = max(np.max(np.abs(r_d), initial=0.0), np.max(np.abs(r_e), initial=0.0), np.max(np.abs(r_i), initial=0.0))
        if res <= 1e-11 * scale and mu <= 1e-13 * scale:
            break
        history.append(res)
        if len(history) > _STALL_WINDOW and res > 1e-6 * scale and min(history[-_STALL_WINDOW:]) > 0.5 * min(history[:-_STALL_WINDOW]):
            # residual stuck (typically an infeasible problem): hand over to the active-set fallback
            return z, nu, lam, s, it, False
        if not np.all(np.isfinite(z)) or (mi and np.max(lam) > 1e13 * scale):
            return z, nu, lam, s, it, False

        if mi:
            system = _NewtonSystem(H, Ae, Ai, s, lam)
            dz, dnu, ds, dlam = system.direction(r_d, r_e, r_i, s * lam)
            a_aff = min(_max_step(s, ds), _max_step(lam, dlam))
            mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dlam) / mi)
            # capped so a blocked affine step cannot freeze mu (pure centring stalls)
            sigma = min((mu_aff / mu) ** 3, 0.5) if mu > 0 else 0.0
            if mehrotra:
                r_c = s * lam + ds * dlam - sigma * mu
            else:
                r_c = s * lam - 0.1 * mu
            dz, dnu, ds, dlam = system.direction(r_d, r_e, r_i, r_c)
            alpha = min(1.0, 0.995 * min(_max_step(s, ds), _max_step(lam, dlam)))
            if mehrotra and (s + alpha * ds) @ (lam + alpha * dlam) > s @ lam:
                # Mehrotra can cycle; stay on plain path-following from here on
                mehrotra = False
        else:
            dz, dnu = _solve_kkt(H, Ae, -r_d, -r_e)
            ds = dlam = np.zeros(0)
            alpha = 1.0
        z = z + alpha * dz
        nu = nu + alpha * dnu
        s = s + alpha * ds
        lam = lam + alpha * dlam
        if mi:
            # keep strictly interior
            s = np.maximum(s, 1e-300)
            lam = np.maximum(lam, 1e-300)
    else:
        return z, nu, lam, s, it, _converged(p, z, nu, lam, s, scale, loose=True)
    return z, nu, lam, s, it, True


def _converged(p, z, nu, lam, s, scale, loose=False):
    fac = 1e-6 if loose else 1e-11
    r_d = p.H @ z + p.g + p.A_eq.T @ nu + p.A_in.T @ lam
    r_i = p.A_in @ z + s - p.b_in
    mu = float(s @ lam / len(s)) if len(s) else 0.0
    return max(np.max(np.abs(r_d), initial=0.0), np.max(np.abs(r_i), initial=0.0)) <= fac * scale and mu <= fac * scale


def _data_scale(p: QpProblem) -> float:
    return max(1.0, *(np.max(np.abs(v), initial=0.0) for v in (p.g, p.b_eq, p.b_in)))


def _polish(p: QpProblem, active: np.ndarray):
    """Solve the equality-constrained QP on a guessed active set."""
    Aa = p.A_in[active]
    A = np.vstack([p.A_eq, Aa])
    b = np.concatenate([p.b_eq, p.b_in[active]])
    z, mult = _solve_kkt(p.H, A, -p.g, b)
    nu = mult[: p.m_eq]
    lam = np.zeros(p.m_in)
    lam[active] = mult[p.m_eq :]
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(lam))):
        return None
    return z, nu, lam


def _dual_active_set(p: QpProblem, max_iter: int | None = None):
    """Goldfarb-Idnani dual active-set method for strictly convex ``H``.

    Starts at the unconstrained minimiser and adds violated rows one at a
    time, dropping rows whose multiplier would turn negative. Terminates
    finitely and certifies infeasibility, which makes it a dependable
    fallback where the interior-point iteration is slow (nearly empty or
    very distant feasible sets). Returns ``(z, nu, lam)`` or ``None`` when
    ``H`` is not positive definite or the constraints are infeasible.
    """
    try:
        chol = cho_factor(p.H, check_finite=False)
    except LinAlgError:
        return None
    n, me, mi = p.n, p.m_eq, p.m_in
    # every row as n_j . z >= c_j; equalities first, oriented when they enter
    N = np.vstack([p.A_eq, -p.A_in])
    c = np.concatenate([p.b_eq, -p.b_in])
    sign = np.ones(me + mi)
    scale = 1.0 + max(np.max(np.abs(c), initial=0.0), np.max(np.abs(p.g), initial=0.0))
    viol_tol = 1e-12 * scale
    z = -cho_solve(chol, p.g, check_finite=False)
    active: list[int] = []
    u = np.zeros(0)
    max_iter = max_iter or 20 * (n + me + mi) + 100

    def directions(q):
        # primal step Jq on the null space of the active normals, dual step r
        Ginv_q = cho_solve(chol, q, check_finite=False)
        if not active:
            return Ginv_q, np.zeros(0)
        Na = (N[active] * sign[active, None]).T
        GinvN = cho_solve(chol, Na, check_finite=False)
        r = np.linalg.lstsq(Na.T @ GinvN, GinvN.T @ q, rcond=None)[0]
        return Ginv_q - GinvN @ r, r

    pending_eq = list(range(me))
    for _ in range(max_iter):
        if pending_eq:
            j = pending_eq[0]
            slack = N[j] @ z - c[j]
            if abs(slack) <= viol_tol:
                step, _ = directions(N[j])
                if np.linalg.norm(step) <= 1e-12 * max(1.0, np.linalg.norm(N[j])):
                    pending_eq.pop(0)  # dependent and consistent: never needed
                    continue
            sign[j] = 1.0 if slack <= 0 else -1.0
        else:
            slacks = N[me:] @ z - c[me:]
            slacks[[k - me for k in active if k >= me]] = np.inf
            k = int(np.argmin(slacks)) if mi else -1
            if mi == 0 or slacks[k] >= -viol_tol:
                break
            j = me + k
        nj = N[j] * sign[j]
        cj = c[j] * sign[j]
        u_new = 0.0
        while True:
            step, r = directions(nj)
            slack = nj @ z - cj
            t1, drop = np.inf, -1
            for idx, (a_idx, rv) in enumerate(zip(active, r)):
                if a_idx >= me and rv > 0 and u[idx] / rv < t1:
                    t1, drop = u[idx] / rv, idx
            curv = step @ nj
            t2 = -slack / curv if curv > 1e-14 * max(1.0, nj @ nj) else np.inf
            if not np.isfinite(t1) and not np.isfinite(t2):
                return None  # infeasible
            t = min(t1, t2)
            if np.isfinite(t2):
                z = z + t * step
            u = u - t * r
            u_new += t
            if t2 <= t1:
                active.append(j)
                u = np.append(u, u_new)
                if j < me:
                    pending_eq.pop(0)
                break
            active.pop(drop)
            u = np.delete(u, drop)
    else:
        return None
    nu = np.zeros(me)
    lam = np.zeros(mi)
    for a_idx, mult in zip(active, u):
        if a_idx < me:
            nu[a_idx] = -sign[a_idx] * mult
        else:
            lam[a_idx - me] = max(mult, 0.0)
    return z, nu, lam


def solve(p: QpProblem, tol: float = DEFAULT_TOL, max_iter: int = 200) -> QpSolution:
    """Solve ``p``; ``optimal`` when every KKT residual is within ``tol`` times the data scale (at least 1)."""
    _check_psd(p.H)
    z, nu, lam, s, it, ok = _interior_point(p, max_iter)
    best = (z, nu, lam)
    best_res = kkt_residual(p, z, nu, lam) if np.all(np.isfinite(z)) else np.inf
    if ok and p.m_in:
        gap = p.b_in - p.A_in @ z
        guesses = [lam > s, lam > np.maximum(gap, 1e-9), gap < 1e-7]
        seen = set()
        for active in guesses:
            key = active.tobytes()
            if key in seen:
                continue
            seen.add(key)
            for _ in range(10):
                cand = _polish(p, active)
                if cand is None:
                    break
                r = kkt_residual(p, *cand)
                if r < best_res:
                    best, best_res = cand, r
                if r <= tol:
                    break
                # swap rows with negative multipliers out and violated rows in
                gap = p.b_in - p.A_in @ cand[0]
                nxt = (active & (cand[2] > 0)) | (gap < 0)
                if np.array_equal(nxt, active):
                    break
                active = nxt
    elif ok:
        cand = _polish(p, np.zeros(0, dtype=bool))
        if cand is not None:
            r = kkt_residual(p, *cand)
            if r < best_res:
                best, best_res = cand, r
    if not (ok and best_res <= tol * _data_scale(p)):
        cand = _dual_active_set(p)
        if cand is not None:
            exact = _polish(p, cand[2] > 0) if p.m_in else None
            if exact is not None and kkt_residual(p, *exact) < kkt_residual(p, *cand):
                cand = exact
            r = kkt_residual(p, *cand)
            if r < best_res or not ok:
                best, best_res, ok = cand, r, True
    # absolute tol on unit-scale data, relative beyond: residuals of badly scaled problems sit at roundoff
    status = OPTIMAL if ok and best_res <= tol * _data_scale(p) else FAILED
    return QpSolution(best[0], best[1], best[2], status, float(best_res), it)


def solve_soft(
    p: QpProblem,
    slack_rows,
    slack_weight: float = DEFAULT_SLACK_WEIGHT,
    tol: float = DEFAULT_TOL,
    max_iter: int = 200,
) -> QpSolution:
    """Relax the selected inequality rows with quadratically penalised slacks ``t >= 0``."""
    if not slack_weight > 0:
        raise ValueError("slack_weight must be positive")
    rows = np.unique(np.asarray(slack_rows, dtype=int).reshape(-1))
    n, k = p.n, len(rows)
    H = np.zeros((n + k, n + k))
    H[:n, :n] = p.H
    H[n:, n:] = 2.0 * slack_weight * np.eye(k)
    g = np.concatenate([p.g, np.zeros(k)])
    A_eq = np.hstack([p.A_eq, np.zeros((p.m_eq, k))])
    A_in = np.zeros((p.m_in + k, n + k))
    A_in[: p.m_in, :n] = p.A_in
    A_in[rows, n + np.arange(k)] = -1.0
    A_in[p.m_in :, n:] = -np.eye(k)
    b_in = np.concatenate([p.b_in, np.zeros(k)])
    ext = QpProblem(H, g, A_eq, p.b_eq, A_in, b_in)
    sol = solve(ext, tol=tol, max_iter=max_iter)
    return QpSolution(
        z=sol.z[:n],
        nu=sol.nu,
        lam=sol.lam[: p.m_in],
        status=SOFT if sol.status == OPTIMAL else FAILED,
        kkt_residual=sol.kkt_residual,
        iterations=sol.iterations,
        slack=sol.z[n:],
    )


def backward(p: QpProblem, sol: QpSolution, dL_dz, margin: float = 1e-7) -> QpGradients:
    """Gradients of a scalar loss w.r.t. all problem data, by implicit differentiation.

    The KKT system restricted to the active set is differentiated; inactive
    rows get exactly zero gradient.
    """
    if sol.status != OPTIMAL:
        raise ValueError(f"refusing to differentiate a {sol.status!r} solution")
    dL_dz = np.asarray(dL_dz, dtype=float).reshape(-1)
    z, nu, lam = sol.z, sol.nu, sol.lam
    gap = p.b_in - p.A_in @ z
    if np.any((lam < margin) & (gap < margin)):
        warnings.warn(
            "strict complementarity violated; using a multiplier-thresholded active set",
            DegenerateGradientWarning,
            stacklevel=2,
        )
    active = lam > margin
    Aa = p.A_in[active]
    n, me, ma = p.n, p.m_eq, int(active.sum())
    K = np.zeros((n + me + ma, n + me + ma))
    K[:n, :n] = p.H
    K[:n, n : n + me] = p.A_eq.T
    K[:n, n + me :] = Aa.T
    K[n : n + me, :n] = p.A_eq
    K[n + me :, :n] = Aa
    rhs = np.concatenate([dL_dz, np.zeros(me + ma)])
    try:
        w = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        warnings.warn("singular KKT matrix; using least-squares adjoint", DegenerateGradientWarning, stacklevel=2)
        w = np.linalg.lstsq(K, rhs, rcond=None)[0]
    d = -w
    d_z, d_nu, d_lam = d[:n], d[n : n + me], d[n + me :]

    dL_dAin = np.zeros_like(p.A_in)
    dL_dbin = np.zeros(p.m_in)
    dL_dAin[active] = np.outer(d_lam, z) + np.outer(lam[active], d_z)
    dL_dbin[active] = -d_lam
    return QpGradients(
        dL_dH=0.5 * (np.outer(d_z, z) + np.outer(z, d_z)),
        dL_dg=d_z,
        dL_dAeq=np.outer(d_nu, z) + np.outer(nu, d_z),
        dL_dbeq=-d_nu,
        dL_dAin=dL_dAin,
        dL_dbin=dL_dbin,
    )
