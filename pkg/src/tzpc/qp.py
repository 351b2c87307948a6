"""Dense operator-splitting QP solver.

Solves::

    minimise    0.5 x'Px + q'x + const
    subject to  l <= A x <= u

with the ADMM splitting used by OSQP: Ruiz equilibration, per-row penalty
parameters, adaptive ``rho`` and a final active-set polishing step.
Everything is deterministic for identical inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

INF = 1e20

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"
NUMERICAL_ERROR = "numerical_error"


@dataclass(frozen=True, eq=False)
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    const: float = 0.0
    names: tuple = field(default=())

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.asarray(self.q, dtype=float).ravel()
        n = q.size
        A = np.asarray(self.A, dtype=float).reshape(-1, n)
        l = np.asarray(self.l, dtype=float).ravel()
        u = np.asarray(self.u, dtype=float).ravel()
        if P.shape != (n, n):
            raise ValueError(f"P has shape {P.shape}, expected ({n}, {n})")
        if l.size != A.shape[0] or u.size != A.shape[0]:
            raise ValueError("constraint bounds disagree with the row count of A")
        if np.any(l > u):
            raise ValueError("constraint lower bound exceeds upper bound")
        if np.max(np.abs(P - P.T), initial=0.0) > 1e-9 * max(1.0, np.abs(P).max(initial=0.0)):
            raise ValueError("quadratic term is not symmetric")
        if n and np.linalg.eigvalsh(P).min() < -1e-9 * max(1.0, np.abs(P).max()):
            raise ValueError("quadratic term is not positive semidefinite")
        object.__setattr__(self, "P", 0.5 * (P + P.T))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "l", np.maximum(l, -INF))
        object.__setattr__(self, "u", np.minimum(u, INF))

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x + self.const)

    def n_inequalities(self) -> int:
        """One-sided inequality count: finite bounds on rows with ``l < u``."""
        ineq = self.l < self.u
        return int(np.sum(ineq & (self.l > -INF)) + np.sum(ineq & (self.u < INF)))

    def n_equalities(self) -> int:
        return int(np.sum(self.l == self.u))


@dataclass(frozen=True)
class QpSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 25
    adaptive_rho_tolerance: float = 5.0
    scaling: int = 10
    polish: bool = True
    polish_refine_iter: int = 5
    eps_prim_inf: float = 1e-5
    check_interval: int = 5
    early_polish_factor: float = 1e3
    early_polish_interval: int = 10


@dataclass
class QpResult:
    x: np.ndarray
    y: np.ndarray
    status: str
    obj: float
    primal_res: float
    dual_res: float
    iterations: int
    polished: bool = False


def residuals(prob: QpProblem, x, y) -> tuple[float, float]:
    """Unscaled primal and dual residuals (infinity norm)."""
    Ax = prob.A @ x
    z = np.clip(Ax, prob.l, prob.u)
    prim = float(np.max(np.abs(Ax - z), initial=0.0))
    dual = float(np.max(np.abs(prob.P @ x + prob.q + prob.A.T @ y), initial=0.0))
    return prim, dual


def kkt_residuals(prob: QpProblem, x, y) -> dict:
    """Primal feasibility, stationarity, complementarity and dual sign violations."""
    Ax = prob.A @ x
    prim = float(np.max(np.maximum(prob.l - Ax, 0.0).tolist() + np.maximum(Ax - prob.u, 0.0).tolist(),
                        initial=0.0))
    stat = float(np.max(np.abs(prob.P @ x + prob.q + prob.A.T @ y), initial=0.0))
    # y_i > 0 may only pair with an active upper bound, y_i < 0 with an active lower bound
    yp, yn = np.maximum(y, 0.0), np.minimum(y, 0.0)
    up_gap = np.where(prob.u < INF, prob.u - Ax, INF)
    lo_gap = np.where(prob.l > -INF, Ax - prob.l, INF)
    comp = float(np.max(np.concatenate([np.minimum(yp * up_gap, INF), np.minimum(-yn * lo_gap, INF)]),
                        initial=0.0))
    return {"primal": prim, "stationarity": stat, "complementarity": comp}


class _Scaling:
    def __init__(self, prob: QpProblem, iters: int):
        n, m = prob.n, prob.m
        D, E = np.ones(n), np.ones(m)
        P, A, q = prob.P.copy(), prob.A.copy(), prob.q.copy()
        for _ in range(iters):
            col = np.maximum(np.abs(P).max(axis=0, initial=0.0), np.abs(A).max(axis=0, initial=0.0))
            row = np.abs(A).max(axis=1, initial=0.0)
            dD = 1.0 / np.sqrt(np.clip(np.where(col < 1e-4, 1.0, col), 1e-4, 1e4))
            dE = 1.0 / np.sqrt(np.clip(np.where(row < 1e-4, 1.0, row), 1e-4, 1e4))
            P = dD[:, None] * P * dD[None, :]
            A = dE[:, None] * A * dD[None, :]
            q = dD * q
            D *= dD
            E *= dE
        c = 1.0
        if iters:
            mean_col = np.abs(P).max(axis=0, initial=0.0).mean() if n else 0.0
            denom = max(mean_col, np.abs(q).max(initial=0.0))
            c = 1.0 / np.clip(denom if denom >= 1e-4 else 1.0, 1e-4, 1e4)
        self.D, self.E, self.c = D, E, c
        self.P, self.q, self.A = c * P, c * q, A
        self.l = np.where(prob.l > -INF, E * prob.l, -INF)
        self.u = np.where(prob.u < INF, E * prob.u, INF)


def _rho_vector(l, u, rho):
    r = np.full(l.size, rho)
    r[(l <= -INF) & (u >= INF)] = 1e-6
    r[u - l < 1e-4 * np.maximum(1.0, np.abs(l))] = 1e3 * rho
    return r


def solve_qp(prob: QpProblem, settings: QpSettings | None = None, x0=None, y0=None) -> QpResult:
    st = settings or QpSettings()
    n, m = prob.n, prob.m
    sc = _Scaling(prob, st.scaling)
    D, E, c = sc.D, sc.E, sc.c
    P, q, A, l, u = sc.P, sc.q, sc.A, sc.l, sc.u

    x = np.zeros(n) if x0 is None else np.asarray(x0, float) / D
    y = np.zeros(m) if y0 is None else c * np.asarray(y0, float) / E
    z = np.clip(A @ x, l, u)

    rho = st.rho
    rvec = _rho_vector(l, u, rho)

    def factor(rv):
        M = P + st.sigma * np.eye(n) + A.T @ (rv[:, None] * A)
        return sla.cho_factor(M, lower=True, check_finite=False)

    try:
        fac = factor(rvec)
    except np.linalg.LinAlgError:
        return QpResult(x * D, np.zeros(m), NUMERICAL_ERROR, np.nan, np.inf, np.inf, 0)

    status = MAX_ITER
    it = 0
    prim = dual = np.inf
    for it in range(1, st.max_iter + 1):
        y_prev = y
        rhs = st.sigma * x - q + A.T @ (rvec * z - y)
        xt = sla.cho_solve(fac, rhs, check_finite=False)
        zt = A @ xt
        x = st.alpha * xt + (1 - st.alpha) * x
        zr = st.alpha * zt + (1 - st.alpha) * z
        z = np.clip(zr + y / rvec, l, u)
        y = y + rvec * (zr - z)

        if it % st.check_interval and it != st.max_iter:
            continue
        if not np.all(np.isfinite(x)):
            status = NUMERICAL_ERROR
            break
        xs, ys = D * x, E * y / c
        Ax_u = (A @ x) / E
        z_u = z / E
        prim = float(np.max(np.abs(Ax_u - z_u), initial=0.0))
        Px_u = prob.P @ xs
        Aty_u = prob.A.T @ ys
        dual = float(np.max(np.abs(Px_u + prob.q + Aty_u), initial=0.0))
        eps_p = st.eps_abs + st.eps_rel * max(np.abs(Ax_u).max(initial=0.0), np.abs(z_u).max(initial=0.0))
        eps_d = st.eps_abs + st.eps_rel * max(np.abs(Px_u).max(initial=0.0), np.abs(Aty_u).max(initial=0.0),
                                              np.abs(prob.q).max(initial=0.0))
        if prim <= eps_p and dual <= eps_d:
            status = OPTIMAL
            break
        if (st.polish and it % st.early_polish_interval == 0
                and prim <= st.early_polish_factor * eps_p and dual <= st.early_polish_factor * eps_d):
            pol = _accept_polish(prob, xs, ys, st)
            if pol is not None:
                xp, yp, pp, pd = pol
                return QpResult(xp, yp, OPTIMAL, prob.objective(xp), pp, pd, it, True)
        if _primal_infeasible(prob, E * (y - y_prev) / c, st.eps_prim_inf):
            status = INFEASIBLE
            break
        if st.adaptive_rho and it % st.adaptive_rho_interval == 0:
            num = prim / max(np.abs(Ax_u).max(initial=0.0), np.abs(z_u).max(initial=0.0), 1e-10)
            den = dual / max(np.abs(Px_u).max(initial=0.0), np.abs(Aty_u).max(initial=0.0),
                             np.abs(prob.q).max(initial=0.0), 1e-10)
            new_rho = float(np.clip(rho * np.sqrt(num / max(den, 1e-10)), 1e-6, 1e6))
            if new_rho > rho * st.adaptive_rho_tolerance or new_rho < rho / st.adaptive_rho_tolerance:
                rho = new_rho
                rvec = _rho_vector(l, u, rho)
                fac = factor(rvec)

    xs, ys = D * x, E * y / c
    if status == INFEASIBLE:
        return QpResult(xs, ys, status, np.nan, prim, dual, it)
    polished = False
    if st.polish and status in (OPTIMAL, MAX_ITER) and np.all(np.isfinite(xs)):
        pol = _accept_polish(prob, xs, ys, st, max(prim, st.eps_abs), max(dual, st.eps_abs))
        if pol is not None:
            xs, ys, prim, dual = pol
            polished = True
            status = OPTIMAL
    if status == OPTIMAL and not polished:
        prim, dual = residuals(prob, xs, ys)
    return QpResult(xs, ys, status, prob.objective(xs), prim, dual, it, polished)


def _primal_infeasible(prob: QpProblem, dy: np.ndarray, eps: float) -> bool:
    norm = np.max(np.abs(dy), initial=0.0)
    if norm < 1e-12:
        return False
    # a certificate may not push against an infinite bound
    if np.any((dy > eps * norm) & (prob.u >= INF)) or np.any((dy < -eps * norm) & (prob.l <= -INF)):
        return False
    if np.max(np.abs(prob.A.T @ dy), initial=0.0) > eps * norm:
        return False
    up = np.where(prob.u < INF, prob.u, 0.0) @ np.maximum(dy, 0.0)
    lo = np.where(prob.l > -INF, prob.l, 0.0) @ np.minimum(dy, 0.0)
    return bool(up + lo < -eps * norm)


def _accept_polish(prob: QpProblem, x, y, st: QpSettings, prim_tol=None, dual_tol=None):
    """Polished point if it is a KKT point to the given tolerances, else None."""
    pol = _polish(prob, x, y, st)
    if pol is None:
        return None
    xp, yp = pol
    kk = kkt_residuals(prob, xp, yp)
    prim_tol = st.eps_abs if prim_tol is None else prim_tol
    dual_tol = st.eps_abs if dual_tol is None else dual_tol
    if kk["primal"] <= prim_tol and kk["stationarity"] <= dual_tol and kk["complementarity"] <= max(1e-7, st.eps_abs):
        pp, pd = residuals(prob, xp, yp)
        return xp, yp, pp, pd
    return None


def _polish(prob: QpProblem, x, y, st: QpSettings):
    """Solve the equality-constrained KKT system on the guessed active set."""
    Ax = prob.A @ x
    lo_act = (Ax - prob.l < -y) & (prob.l > -INF)
    up_act = (prob.u - Ax < y) & (prob.u < INF)
    eq = prob.l == prob.u
    up_act &= ~eq
    lo_act = (lo_act & ~eq) | eq
    idx = np.flatnonzero(lo_act | up_act)
    b = np.where(lo_act, prob.l, prob.u)[idx]
    Aa = prob.A[idx]
    n, k = prob.n, idx.size
    delta = 1e-7
    K_exact = np.block([[prob.P, Aa.T], [Aa, np.zeros((k, k))]])
    K_reg = K_exact + np.diag(np.concatenate([np.full(n, delta), np.full(k, -delta)]))
    rhs = np.concatenate([-prob.q, b])
    try:
        lu = sla.lu_factor(K_reg, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None
    # proximal refinement started at the ADMM iterate keeps null-space
    # components (degenerate directions) where ADMM left them
    sol = np.concatenate([x, y[idx]])
    for _ in range(st.polish_refine_iter + 1):
        sol = sol + sla.lu_solve(lu, rhs - K_exact @ sol, check_finite=False)
    if not np.all(np.isfinite(sol)):
        return None
    yp = np.zeros(prob.m)
    yp[idx] = sol[n:]
    return sol[:n], yp
