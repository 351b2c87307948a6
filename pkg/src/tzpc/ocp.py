"""Finite-horizon tube MPC problem over nominal states and inputs.

Decision vector layout (sparse formulation)::

    [ x̄_0 .. x̄_N | ū_0 .. ū_{N-1} | β (tube coefficients) | s_0 .. s_{N-1} (L1 epigraph) ]
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .qp import INF, INFEASIBLE, OPTIMAL, QpProblem, QpSettings, solve_qp
from .setalg import Ellipsoid, HPolytope, Zonotope, to_hpolytope
from .synth import NominalModel, SynthesisBundle

STRUCTURALLY_INFEASIBLE = "infeasible"


@dataclass(frozen=True, eq=False)
class OcpSpec:
    horizon: int
    nominal: NominalModel
    q_mat: np.ndarray
    r_mat: np.ndarray
    l1_input_weight: float
    p_lyap: np.ndarray
    x_tight: HPolytope
    u_tight: HPolytope
    s_rpi: Zonotope
    terminal: Ellipsoid
    x_s: np.ndarray
    u_s: np.ndarray
    terminal_facets: int = 16
    k_gain: np.ndarray | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        Q = np.atleast_2d(np.asarray(self.q_mat, dtype=float))
        R = np.atleast_2d(np.asarray(self.r_mat, dtype=float))
        if np.linalg.eigvalsh(Q).min() <= 1e-10:
            raise ValueError("Q must be positive definite")
        # R may be zero when the input is only penalised through the L1 term
        if np.linalg.eigvalsh(R).min() < -1e-10:
            raise ValueError("R must be positive semidefinite")
        if self.l1_input_weight < 0:
            raise ValueError("l1_input_weight must be nonnegative")
        if not np.allclose(self.terminal.shape, self.p_lyap, atol=1e-12):
            raise ValueError("terminal ellipsoid shape must equal the terminal cost matrix")
        object.__setattr__(self, "q_mat", Q)
        object.__setattr__(self, "r_mat", R)
        object.__setattr__(self, "x_s", np.atleast_1d(np.asarray(self.x_s, dtype=float)))
        object.__setattr__(self, "u_s", np.atleast_1d(np.asarray(self.u_s, dtype=float)))

    @property
    def n_x(self) -> int:
        return self.nominal.a_bar.shape[0]

    @property
    def n_u(self) -> int:
        return self.nominal.b_bar.shape[1]

    @classmethod
    def from_bundle(cls, bundle: SynthesisBundle, horizon: int, q_mat, r_mat,
                    l1_input_weight: float = 0.0, terminal_facets: int = 16) -> "OcpSpec":
        return cls(horizon, bundle.nominal, q_mat, r_mat, l1_input_weight, bundle.p_lyap,
                   bundle.x_tight, bundle.u_tight, bundle.s_rpi, bundle.terminal,
                   bundle.setpoint_x, bundle.setpoint_u, terminal_facets, bundle.k_gain)

    def terminal_polytope(self) -> HPolytope:
        return self._terminal_poly

    @cached_property
    def empty_set_reason(self) -> str | None:
        for name, poly in (("X ⊖ S", self.x_tight), ("U ⊖ KS", self.u_tight)):
            if poly.is_empty():
                return f"tightened set {name} is empty"
        return None

    @cached_property
    def tube_polytope(self) -> HPolytope | None:
        return to_hpolytope(self.s_rpi) if self.s_rpi.dim <= 3 else None

    @cached_property
    def _terminal_poly(self) -> HPolytope:
        if self.n_x == 1:
            r = np.sqrt(self.terminal.level / self.p_lyap[0, 0])
            c = self.x_s[0]
            return HPolytope([[1.0], [-1.0]], [c + r, -(c - r)])
        return self.terminal.inner_polytope(self.terminal_facets)

    def stage_cost(self, x, u) -> float:
        dx, du = np.asarray(x) - self.x_s, np.asarray(u) - self.u_s
        return float(dx @ self.q_mat @ dx + du @ self.r_mat @ du + self.l1_input_weight * np.abs(du).sum())

    def terminal_cost(self, x) -> float:
        dx = np.asarray(x) - self.x_s
        return float(dx @ self.p_lyap @ dx)

    def cost(self, x_bar, u_bar) -> float:
        """Objective of the tube MPC problem evaluated on nominal sequences."""
        return sum(self.stage_cost(x, u) for x, u in zip(x_bar[:-1], u_bar)) + self.terminal_cost(x_bar[-1])


@dataclass
class OcpLayout:
    n_x: int
    n_u: int
    N: int
    n_beta: int
    n_aux: int

    @property
    def ix(self) -> slice:
        return slice(0, self.n_x * (self.N + 1))

    @property
    def iu(self) -> slice:
        s = self.n_x * (self.N + 1)
        return slice(s, s + self.n_u * self.N)

    @property
    def ibeta(self) -> slice:
        s = self.iu.stop
        return slice(s, s + self.n_beta)

    @property
    def iaux(self) -> slice:
        s = self.ibeta.stop
        return slice(s, s + self.n_aux)

    @property
    def n(self) -> int:
        return self.iaux.stop

    def unpack(self, z):
        x = z[self.ix].reshape(self.N + 1, self.n_x)
        u = z[self.iu].reshape(self.N, self.n_u)
        return x, u, z[self.ibeta], z[self.iaux]

    def pack(self, x, u, beta, aux=None):
        z = np.zeros(self.n)
        z[self.ix] = np.asarray(x).ravel()
        z[self.iu] = np.asarray(u).ravel()
        z[self.ibeta] = beta
        if self.n_aux:
            z[self.iaux] = aux
        return z


@dataclass
class OcpSolution:
    u_bar: np.ndarray
    x_bar: np.ndarray
    beta: np.ndarray
    j_star: float
    status: str
    primal_res: float
    dual_res: float
    iterations: int
    qp_objective: float = np.nan
    solve_time: float = 0.0
    qp_x: np.ndarray | None = None
    qp_y: np.ndarray | None = None


def layout_for(spec: OcpSpec) -> OcpLayout:
    n_aux = spec.n_u * spec.horizon if spec.l1_input_weight > 0 else 0
    return OcpLayout(spec.n_x, spec.n_u, spec.horizon, spec.s_rpi.order, n_aux)


def _block_rows(H, N, width, offset, n_total):
    """Place ``H`` on each of ``N`` consecutive variable blocks."""
    rows = np.zeros((N * H.shape[0], n_total))
    for k in range(N):
        rows[k * H.shape[0]:(k + 1) * H.shape[0], offset + k * width:offset + (k + 1) * width] = H
    return rows


def build(spec: OcpSpec, x_now) -> QpProblem:
    x_now = np.atleast_1d(np.asarray(x_now, dtype=float))
    if x_now.shape != (spec.n_x,):
        raise ValueError(f"state has shape {x_now.shape}, expected ({spec.n_x},)")
    L = layout_for(spec)
    nx, nu, N = spec.n_x, spec.n_u, spec.horizon
    n = L.n
    A_bar, B_bar = spec.nominal.a_bar, spec.nominal.b_bar

    # objective
    P = np.zeros((n, n))
    q = np.zeros(n)
    for k in range(N):
        sx = slice(k * nx, (k + 1) * nx)
        P[sx, sx] = 2 * spec.q_mat
        q[sx] = -2 * spec.q_mat @ spec.x_s
        su = slice(L.iu.start + k * nu, L.iu.start + (k + 1) * nu)
        P[su, su] = 2 * spec.r_mat
        q[su] = -2 * spec.r_mat @ spec.u_s
    sN = slice(N * nx, (N + 1) * nx)
    P[sN, sN] = 2 * spec.p_lyap
    q[sN] = -2 * spec.p_lyap @ spec.x_s
    const = N * (spec.x_s @ spec.q_mat @ spec.x_s + spec.u_s @ spec.r_mat @ spec.u_s) \
        + spec.x_s @ spec.p_lyap @ spec.x_s
    if L.n_aux:
        q[L.iaux] = spec.l1_input_weight

    rows, lo, hi = [], [], []

    def add(Arows, l, u):
        rows.append(Arows)
        lo.append(np.broadcast_to(l, Arows.shape[0]).astype(float))
        hi.append(np.broadcast_to(u, Arows.shape[0]).astype(float))

    # nominal dynamics: x̄_{k+1} - A x̄_k - B ū_k = 0
    dyn = np.zeros((N * nx, n))
    for k in range(N):
        r = slice(k * nx, (k + 1) * nx)
        dyn[r, (k + 1) * nx:(k + 2) * nx] = np.eye(nx)
        dyn[r, k * nx:(k + 1) * nx] = -A_bar
        dyn[r, L.iu.start + k * nu:L.iu.start + (k + 1) * nu] = -B_bar
    add(dyn, 0.0, 0.0)
    # initial tube: x̄_0 + G_S β = x_now - c_S
    tube = np.zeros((nx, n))
    tube[:, :nx] = np.eye(nx)
    tube[:, L.ibeta] = spec.s_rpi.generators
    rhs = x_now - spec.s_rpi.center
    add(tube, rhs, rhs)
    # tightened inputs and states for k = 0..N-1
    Hu = spec.u_tight.normals
    add(_block_rows(Hu, N, nu, L.iu.start, n), -INF, np.tile(spec.u_tight.offsets, N))
    Hx = spec.x_tight.normals
    add(_block_rows(Hx, N, nx, 0, n), -INF, np.tile(spec.x_tight.offsets, N))
    # terminal set (inner polytope of the ellipsoid)
    term = spec.terminal_polytope()
    Ht = np.zeros((term.n_facets, n))
    Ht[:, N * nx:(N + 1) * nx] = term.normals
    add(Ht, -INF, term.offsets)
    # |β| <= 1
    if L.n_beta:
        Ib = np.zeros((L.n_beta, n))
        Ib[:, L.ibeta] = np.eye(L.n_beta)
        add(Ib, -1.0, 1.0)
    # epigraph: s_k >= |ū_k - u_s|
    if L.n_aux:
        Ep = np.zeros((2 * nu * N, n))
        for k in range(N):
            for j in range(nu):
                iu = L.iu.start + k * nu + j
                ia = L.iaux.start + k * nu + j
                r = 2 * (k * nu + j)
                Ep[r, iu], Ep[r, ia] = 1.0, -1.0
                Ep[r + 1, iu], Ep[r + 1, ia] = -1.0, -1.0
        ub = np.empty(2 * nu * N)
        us = np.tile(spec.u_s, N)
        ub[0::2], ub[1::2] = us, -us
        add(Ep, -INF, ub)
    return QpProblem(P, q, np.vstack(rows), np.concatenate(lo), np.concatenate(hi), float(const))


def structurally_infeasible(spec: OcpSpec) -> str | None:
    """Reason string if a tightened set is empty, else None."""
    return spec.empty_set_reason


def solve_ocp(spec: OcpSpec, x_now, settings: QpSettings | None = None, warm=None) -> OcpSolution:
    """Build and solve the tube MPC problem at the measured state ``x_now``.

    ``warm`` may be a previous ``OcpSolution``; its shifted sequences seed the solver.
    """
    t0 = time.perf_counter()
    L = layout_for(spec)
    reason = structurally_infeasible(spec)
    if reason:
        return OcpSolution(np.full((spec.horizon, spec.n_u), np.nan),
                           np.full((spec.horizon + 1, spec.n_x), np.nan), np.full(L.n_beta, np.nan), np.nan, STRUCTURALLY_INFEASIBLE, np.inf, np.inf, 0,
                           solve_time=time.perf_counter() - t0)
    prob = build(spec, x_now)
    x0 = y0 = None
    if warm is not None and warm.status == OPTIMAL and warm.qp_x is not None:
        x0 = shifted_guess(spec, warm, L)
        y0 = warm.qp_y
    res = solve_qp(prob, settings, x0=x0, y0=y0)
    xb, ub, beta, _ = L.unpack(res.x)
    j_star = spec.cost(xb, ub) if res.status == OPTIMAL else np.nan
    return OcpSolution(ub.copy(), xb.copy(), beta.copy(), j_star, res.status, res.primal_res,
                       res.dual_res, res.iterations, res.obj, time.perf_counter() - t0, res.x, res.y)


def shifted_guess(spec: OcpSpec, prev: OcpSolution, L: OcpLayout | None = None) -> np.ndarray:
    """Shift the previous optimum one step and append the local feedback move."""
    L = L or layout_for(spec)
    xc, uc = shifted_candidate(spec, prev)
    beta = np.zeros(L.n_beta)
    aux = np.abs(uc - spec.u_s).ravel() if L.n_aux else None
    return L.pack(xc, uc, beta, aux)


def shifted_candidate(spec: OcpSpec, prev: OcpSolution):
    """Candidate nominal sequences for the next step built from ``prev``.

    The inputs drop the first element and append ``K (x̄_N - x_s) + u_s``;
    the states follow the nominal model from ``prev.x_bar[1]``.
    """
    if spec.k_gain is None:
        raise ValueError("spec needs k_gain to build the shifted candidate")
    K = spec.k_gain
    u_tail = K @ (prev.x_bar[-1] - spec.x_s) + spec.u_s
    uc = np.vstack([prev.u_bar[1:], u_tail[None, :]])
    xc = np.empty_like(prev.x_bar)
    xc[0] = prev.x_bar[1]
    for k in range(spec.horizon):
        xc[k + 1] = spec.nominal.a_bar @ xc[k] + spec.nominal.b_bar @ uc[k]
    return xc, uc


def candidate_violation(spec: OcpSpec, x_now, xc, uc) -> dict:
    """Largest violation of each constraint group by the candidate at ``x_now``."""
    N = spec.horizon
    out = {}
    dyn = [xc[k + 1] - spec.nominal.a_bar @ xc[k] - spec.nominal.b_bar @ uc[k] for k in range(N)]
    out["dynamics"] = float(np.max(np.abs(dyn)))
    out["input"] = float(max(-spec.u_tight.min_slack(u) for u in uc))
    out["state"] = float(max(-spec.x_tight.min_slack(x) for x in xc[:-1]))
    out["terminal"] = float(-spec.terminal_polytope().min_slack(xc[-1]))
    if spec.tube_polytope is not None:
        out["tube"] = float(-spec.tube_polytope.min_slack(np.asarray(x_now) - xc[0]))
    return out
