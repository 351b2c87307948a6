"""Offline synthesis of the tube controller ingredients.

Covers the nominal model, the mismatch and disturbance zonotopes, the local
gain with its common Lyapunov matrix, the robust positive invariant tube
cross-section and the ellipsoidal terminal set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .ident import Dataset, ModelSet
from .setalg import (
    GEOM_TOL,
    Ellipsoid,
    HPolytope,
    Zonotope,
    contains_point,
    linear_map,
    merge_parallel,
    minkowski_sum,
    negate,
    pontryagin_diff,
    zonotope_from_interval,
    zonotope_subset,
)

log = logging.getLogger(__name__)

VERTEX_CAP = 2**12


class SynthesisError(RuntimeError):
    """Raised when an offline ingredient cannot be constructed."""


@dataclass(frozen=True, eq=False)
class NominalModel:
    a_bar: np.ndarray
    b_bar: np.ndarray

    @property
    def m_bar(self) -> np.ndarray:
        return np.hstack([self.a_bar, self.b_bar])

    @classmethod
    def from_matrix(cls, M, ms: ModelSet | None = None) -> "NominalModel":
        """Split ``[A B]``; if a model set is given the matrix must belong to it."""
        M = np.asarray(M, dtype=float)
        if ms is not None and not ms.m_d.contains(M):
            raise SynthesisError("nominal model is not a member of the learned model set")
        n_x = M.shape[0]
        return cls(M[:, :n_x].copy(), M[:, n_x:].copy())


@dataclass(frozen=True, eq=False)
class ErrorDynamics:
    a_k: np.ndarray
    z_phi: Zonotope

    def __post_init__(self):
        rho = float(np.max(np.abs(np.linalg.eigvals(self.a_k))))
        if rho >= 1.0:
            raise SynthesisError(f"closed-loop error dynamics are not stable (spectral radius {rho:.4g})")


@dataclass(frozen=True, eq=False)
class SynthesisBundle:
    nominal: NominalModel
    k_gain: np.ndarray
    p_lyap: np.ndarray
    z_w: Zonotope
    z_m: Zonotope
    z_eps: Zonotope
    z_phi: Zonotope
    s_rpi: Zonotope
    theta: float
    kappa: int
    terminal: Ellipsoid
    u_tight: HPolytope
    x_tight: HPolytope
    setpoint_x: np.ndarray
    setpoint_u: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def a_k(self) -> np.ndarray:
        return self.nominal.a_bar + self.nominal.b_bar @ self.k_gain


def pick_nominal(ms: ModelSet) -> NominalModel:
    return NominalModel.from_matrix(ms.m_d.center)


def residual_bounds(d: Dataset, nominal: NominalModel) -> tuple[np.ndarray, np.ndarray]:
    R = d.X_plus - nominal.m_bar @ d.D_minus
    return R.min(axis=1), R.max(axis=1)


def mismatch_sets(d: Dataset, nominal: NominalModel, zw: Zonotope, delta: float,
                  fro_norm: float) -> tuple[Zonotope, Zonotope]:
    """Zonotopes bounding ``ΔM [x; u]`` over the operating domain.

    The first comes from the residual range of the data around the nominal
    model, widened by the reflected noise set; the second covers the gap
    between arbitrary domain points and their nearest data column.
    """
    if d.T == 0:
        raise ValueError("empty dataset")
    if delta < 0:
        raise ValueError("covering radius must be nonnegative")
    lo, hi = residual_bounds(d, nominal)
    z_m = minkowski_sum(zonotope_from_interval(lo, hi), negate(zw))
    r = fro_norm * delta / 2.0
    z_eps = Zonotope(np.zeros(d.n_x), np.eye(d.n_x) * r if r > 0 else None)
    return z_m, z_eps


def symmetric_hull(z: Zonotope) -> Zonotope:
    """Smallest origin-centred zonotope of the form ``<0, [G c]>`` containing ``z``."""
    if not np.any(z.center):
        return z
    return Zonotope(np.zeros(z.dim), np.hstack([z.generators, z.center[:, None]]))


def build_phi(z_m: Zonotope, z_eps: Zonotope, zw: Zonotope) -> Zonotope:
    return merge_parallel(minkowski_sum(minkowski_sum(z_m, z_eps), zw))


def lyapunov_margin(ms: ModelSet, k_gain, p_lyap, cap: int = VERTEX_CAP) -> float:
    """Largest eigenvalue of ``A_K^T P A_K - P`` over all interval-hull vertices."""
    K = np.atleast_2d(np.asarray(k_gain, dtype=float))
    P = np.asarray(p_lyap, dtype=float)
    n_x = P.shape[0]
    worst = -np.inf
    try:
        for V in ms.i_md.vertices(cap):
            AK = V[:, :n_x] + V[:, n_x:] @ K
            worst = max(worst, float(np.linalg.eigvalsh(AK.T @ P @ AK - P).max()))
    except ValueError as exc:
        raise SynthesisError(str(exc)) from exc
    return worst


def verify_lyapunov(ms: ModelSet, k_gain, p_lyap, tol: float = 1e-9) -> bool:
    P = np.asarray(p_lyap, dtype=float)
    if np.max(np.abs(P - P.T)) > 1e-10 or np.linalg.eigvalsh(P).min() <= 0:
        raise ValueError("p_lyap must be symmetric positive definite")
    return lyapunov_margin(ms, k_gain, P) <= -tol


def _stabilizable(A, B, tol=1e-9) -> bool:
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1 - tol:
            if np.linalg.matrix_rank(np.hstack([A - lam * np.eye(n), B]), tol=1e-9) < n:
                return False
    return True


def lqr_gain(A, B, Q, R) -> tuple[np.ndarray, np.ndarray]:
    """Discrete LQR for ``u = K x``; returns ``(K, P)``."""
    A, B = np.asarray(A, float), np.asarray(B, float)
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    if not np.any(B) or not _stabilizable(A, B):
        raise SynthesisError("nominal pair (A, B) is not stabilizable")
    try:
        P = sla.solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SynthesisError(f"discrete Riccati equation did not converge: {exc}") from exc
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return K, 0.5 * (P + P.T)


def synthesize_gain(nominal: NominalModel, q_lqr, r_lqr, ms: ModelSet,
                    tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    K, P = lqr_gain(nominal.a_bar, nominal.b_bar, q_lqr, r_lqr)
    margin = lyapunov_margin(ms, K, P)
    if margin > -tol:
        raise SynthesisError(
            f"LQR candidate fails vertex Lyapunov verification (margin {margin:.3e}); "
            "retune lqr_q/lqr_r or provide K and P"
        )
    return K, P


def compute_rpi(ed: ErrorDynamics, theta: float = 0.01, kappa_max: int = 200,
                tol: float = GEOM_TOL) -> tuple[Zonotope, float, int]:
    """Outer invariant approximation ``(1-θ)^-1 (Z ⊕ A Z ⊕ ... ⊕ A^{κ-1} Z)``.

    ``κ`` is the smallest power for which ``A^κ Z ⊆ θ Z``.
    """
    if not 0 <= theta < 1:
        raise ValueError("theta must lie in [0, 1)")
    zphi = ed.z_phi
    n = zphi.dim
    target = zphi.scale(theta)
    Ak = np.eye(n)
    terms = []
    for kappa in range(1, kappa_max + 1):
        terms.append(linear_map(Ak, zphi))
        Ak = ed.a_k @ Ak
        if zonotope_subset(linear_map(Ak, zphi), target, tol):
            c = sum(t.center for t in terms) / (1 - theta)
            G = np.hstack([t.generators for t in terms]) / (1 - theta)
            return merge_parallel(Zonotope(c, G)), theta, kappa
    raise SynthesisError(f"no kappa <= {kappa_max} satisfies the contraction test at theta={theta}")


def tighten(x_set: HPolytope, u_set: HPolytope, s_rpi: Zonotope, k_gain) -> tuple[HPolytope, HPolytope]:
    """Tightened nominal constraint sets ``X ⊖ S`` and ``U ⊖ K S``."""
    return pontryagin_diff(x_set, s_rpi), pontryagin_diff(u_set, linear_map(k_gain, s_rpi))


def terminal_level(p_lyap, x_s, k_gain, x_tight: HPolytope, u_tight: HPolytope, u_s=None) -> float:
    """Largest ``α`` such that the ``P``-ellipsoid around ``x_s`` fits the tightened sets.

    Input facets are pulled back through ``u = K (x - x_s) + u_s``.
    """
    P = np.asarray(p_lyap, dtype=float)
    K = np.atleast_2d(np.asarray(k_gain, dtype=float))
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))
    u_s = np.zeros(K.shape[0]) if u_s is None else np.atleast_1d(np.asarray(u_s, dtype=float))
    Pinv = np.linalg.inv(P)
    H = np.vstack([x_tight.normals, u_tight.normals @ K])
    slack = np.concatenate([x_tight.slack(x_s), u_tight.slack(u_s)])
    bad = np.flatnonzero(slack <= 0)
    if bad.size:
        raise SynthesisError(
            f"setpoint violates {bad.size} tightened constraint(s); min slack {slack.min():.4g}"
        )
    quad = np.einsum("ij,jk,ik->i", H, Pinv, H)
    active = quad > 1e-14
    if not np.any(active):
        return np.inf
    return float(np.min(slack[active] ** 2 / quad[active]))


@dataclass
class TerminalReport:
    ok: bool
    violations: list
    checked: int
    polygon_invariant: bool | None = None

    def summary(self) -> str:
        if self.ok:
            return f"terminal conditions hold at {self.checked} points"
        return f"{len(self.violations)} violation(s), first: {self.violations[0]}"


def terminal_sample_points(terminal: Ellipsoid, samples: int, interior: bool = True) -> np.ndarray:
    """Boundary points at uniform whitened angles, optionally followed by scaled interior copies."""
    n = terminal.dim
    if n == 2:
        bnd = terminal.boundary_points(samples)
    else:
        rng = np.random.default_rng(12345)
        v = rng.standard_normal((samples, n))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        L = np.linalg.cholesky(terminal.shape)
        bnd = terminal.center + np.sqrt(terminal.level) * np.linalg.solve(L.T, v.T).T
    if not interior:
        return bnd
    pts = [bnd]
    for s in (0.75, 0.5, 0.25, 0.0):
        pts.append(terminal.center + s * (bnd - terminal.center))
    return np.vstack(pts)


def terminal_invariance_check(bundle: SynthesisBundle, samples: int = 1000, q_mat=None, r_mat=None,
                              l1_weight: float = 0.0, tol: float = 1e-8, interior: bool = True,
                              polygon_facets: int = 16) -> TerminalReport:
    """Sample the terminal conditions around the setpoint.

    At each sampled ``x̄`` with ``dx = x̄ - x_s`` and ``du = K dx``:
    the image ``x_s + A_K dx`` stays in the terminal set, ``x̄`` satisfies the
    tightened state constraints, ``u_s + du`` satisfies the tightened input
    constraints, and the terminal cost decreases by at least the stage cost
    ``dx'Q dx + du'R du + l1 |du|_1``.
    """
    term = bundle.terminal
    P = term.shape
    K = bundle.k_gain
    AK = bundle.a_k
    n_x, n_u = K.shape[1], K.shape[0]
    Q = np.eye(n_x) if q_mat is None else np.atleast_2d(q_mat)
    R = np.zeros((n_u, n_u)) if r_mat is None else np.atleast_2d(r_mat)
    xs, us = bundle.setpoint_x, bundle.setpoint_u
    pts = terminal_sample_points(term, samples, interior=interior)
    violations = []
    scale_term = max(term.level, 1.0)
    for x in pts:
        dx = x - xs
        du = K @ dx
        nxt = AK @ dx
        if nxt @ P @ nxt > term.level + tol * scale_term:
            violations.append(("image_outside_terminal", x.tolist(), float(nxt @ P @ nxt - term.level)))
        sx = bundle.x_tight.min_slack(x)
        if sx < -tol:
            violations.append(("state_constraint", x.tolist(), sx))
        su = bundle.u_tight.min_slack(us + du)
        if su < -tol:
            violations.append(("input_constraint", x.tolist(), su))
        lhs = nxt @ P @ nxt - dx @ P @ dx
        stage = dx @ Q @ dx + du @ R @ du + l1_weight * np.abs(du).sum()
        if lhs > -stage + tol * max(1.0, abs(stage)):
            violations.append(("cost_decrease", x.tolist(), float(lhs + stage)))
    poly_ok = None
    if n_x == 2 and term.level > 0:
        poly = term.inner_polytope(polygon_facets)
        verts = term.boundary_points(polygon_facets)
        imgs = xs + (verts - xs) @ AK.T
        poly_ok = bool(np.all(imgs @ poly.normals.T <= poly.offsets + tol))
    return TerminalReport(not violations, violations, len(pts), poly_ok)


def synthesize(
    dataset: Dataset,
    ms: ModelSet,
    zw: Zonotope,
    delta: float,
    x_set: HPolytope,
    u_set: HPolytope,
    x_s,
    u_s,
    *,
    nominal: NominalModel | None = None,
    k_gain=None,
    p_lyap=None,
    lqr_q=None,
    lqr_r=None,
    theta: float = 0.01,
    kappa_max: int = 200,
    alpha: float | None = None,
    symmetrize_zm: bool = False,
    lyap_tol: float = 1e-9,
) -> SynthesisBundle:
    """Run every offline step and return the bundle consumed by the controller.

    Pass ``k_gain`` and ``p_lyap`` to verify provided gains instead of
    synthesising them from ``lqr_q``/``lqr_r``.
    """
    nominal = nominal or pick_nominal(ms)
    z_m, z_eps = mismatch_sets(dataset, nominal, zw, delta, ms.fro_norm)
    zero_in_zm = contains_point(z_m, np.zeros(z_m.dim), tol=1e-12) if z_m.dim <= 3 else None
    if symmetrize_zm and not zero_in_zm:
        z_m = symmetric_hull(z_m)
    z_phi = build_phi(z_m, z_eps, zw)

    if k_gain is None:
        n_x, n_u = nominal.b_bar.shape
        q = np.eye(n_x) if lqr_q is None else lqr_q
        r = np.eye(n_u) if lqr_r is None else lqr_r
        K, P = synthesize_gain(nominal, q, r, ms, tol=lyap_tol)
    else:
        K = np.atleast_2d(np.asarray(k_gain, dtype=float))
        P = np.asarray(p_lyap, dtype=float)
        if not verify_lyapunov(ms, K, P, lyap_tol):
            raise SynthesisError(
                f"provided (K, P) fail vertex Lyapunov verification "
                f"(margin {lyapunov_margin(ms, K, P):.3e})"
            )

    ed = ErrorDynamics(nominal.a_bar + nominal.b_bar @ K, z_phi)
    s_rpi, theta, kappa = compute_rpi(ed, theta, kappa_max)
    x_tight, u_tight = tighten(x_set, u_set, s_rpi, K)
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))
    u_s = np.atleast_1d(np.asarray(u_s, dtype=float))
    alpha_max = terminal_level(P, x_s, K, x_tight, u_tight, u_s)
    if alpha is None:
        alpha = alpha_max
    elif alpha > alpha_max * (1 + 1e-9):
        log.warning("provided alpha %.4g exceeds the computed bound %.4g", alpha, alpha_max)
    meta = {
        "delta": float(delta),
        "fro_norm": float(ms.fro_norm),
        "zero_in_zm": zero_in_zm,
        "alpha_max": float(alpha_max),
        "lyapunov_margin": lyapunov_margin(ms, K, P),
    }
    log.info("synthesis: kappa=%d, alpha=%.4g, |S| generators=%d", kappa, alpha, s_rpi.order)
    return SynthesisBundle(
        nominal=nominal, k_gain=K, p_lyap=P, z_w=zw, z_m=z_m, z_eps=z_eps, z_phi=z_phi,
        s_rpi=s_rpi, theta=theta, kappa=kappa, terminal=Ellipsoid(P, x_s, alpha),
        u_tight=u_tight, x_tight=x_tight, setpoint_x=x_s, setpoint_u=u_s, meta=meta,
    )
