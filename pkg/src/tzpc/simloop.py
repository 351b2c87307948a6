"""Receding-horizon closed loop against a hidden plant, with auditing and metrics."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import lsq_linear

from .ident import ModelSet, Trajectory
from .ocp import OcpSolution, OcpSpec, candidate_violation, shifted_candidate, solve_ocp
from .qp import OPTIMAL, QpSettings
from .setalg import HPolytope, Zonotope, interval_hull, matzono_apply, minkowski_sum
from .synth import SynthesisBundle

TUBE_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class Plant:
    """Ground-truth system. Only the simulator touches this object."""

    a_true: np.ndarray
    b_true: np.ndarray
    noise_set: Zonotope
    rng_seed: int = 0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.a_true, dtype=float))
        B = np.asarray(self.b_true, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"plant matrices have inconsistent shapes {A.shape}, {B.shape}")
        if self.noise_set.dim != A.shape[0]:
            raise ValueError("noise set dimension differs from the state dimension")
        object.__setattr__(self, "a_true", A)
        object.__setattr__(self, "b_true", B)

    @property
    def n_x(self) -> int:
        return self.a_true.shape[0]

    @property
    def n_u(self) -> int:
        return self.b_true.shape[1]


def sample_noise(zw: Zonotope, rng) -> np.ndarray:
    beta = rng.uniform(-1.0, 1.0, zw.order)
    return zw.center + zw.generators @ beta


def step_plant(p: Plant, x, u, w) -> np.ndarray:
    return p.a_true @ np.asarray(x, dtype=float) + p.b_true @ np.atleast_1d(u) + np.asarray(w, dtype=float)


def generate_trajectories(plant: Plant, zx: Zonotope, zu: Zonotope, n_traj: int, traj_len: int,
                          rng) -> list:
    """Open-loop experiments: initial states uniform in ``zx``, inputs uniform in ``zu``.

    ``traj_len`` counts state samples, so each trajectory adds ``traj_len - 1`` data columns.
    """
    if n_traj < 1 or traj_len < 2:
        raise ValueError("need at least one trajectory with at least two state samples")
    out = []
    for _ in range(n_traj):
        x = sample_noise(zx, rng)
        xs, us = [x], []
        for _ in range(traj_len - 1):
            u = sample_noise(zu, rng)
            x = step_plant(plant, x, u, sample_noise(plant.noise_set, rng))
            xs.append(x)
            us.append(u)
        out.append(Trajectory(np.array(xs), np.array(us)))
    return out


def distance_to_zonotope(z: Zonotope, x) -> float:
    """Euclidean distance from ``x`` to ``z`` (bounded least squares over the coefficients)."""
    r = np.asarray(x, dtype=float) - z.center
    if z.order == 0:
        return float(np.linalg.norm(r))
    sol = lsq_linear(z.generators, r, bounds=(-1.0, 1.0), method="bvls")
    return float(np.linalg.norm(z.generators @ sol.x - r))


@dataclass
class StepRecord:
    t: int
    x: np.ndarray
    x_bar: np.ndarray
    u: np.ndarray
    u_bar: np.ndarray
    j_star: float
    status: str
    solve_time: float
    slack_x: float
    slack_u: float
    slack_tube: float
    dist_setpoint_tube: float = np.nan
    shift_violation: float = np.nan


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    seed: int | None = None
    aborted: bool = False
    message: str = ""

    def __len__(self):
        return len(self.records)

    def array(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def all_optimal(self) -> bool:
        return not self.aborted and all(r.status == OPTIMAL for r in self.records)

    def same_as(self, other: "RunLog") -> bool:
        """Bitwise comparison of every logged quantity except wall-clock time."""
        if len(self) != len(other) or self.aborted != other.aborted:
            return False
        for a, b in zip(self.records, other.records):
            for name in ("x", "x_bar", "u", "u_bar"):
                if getattr(a, name).tobytes() != getattr(b, name).tobytes():
                    return False
            for name in ("t", "status"):
                if getattr(a, name) != getattr(b, name):
                    return False
            for name in ("j_star", "slack_x", "slack_u", "slack_tube"):
                if np.float64(getattr(a, name)).tobytes() != np.float64(getattr(b, name)).tobytes():
                    return False
        return True


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_runlog_csv(log: RunLog, path, timing: bool = False) -> None:
    """Write one row per step. ``solve_ms`` is ``nan`` unless ``timing`` is set,
    so repeated runs produce identical bytes."""
    if not log.records:
        raise ValueError("empty run log")
    r0 = log.records[0]
    nx, nu = r0.x.size, r0.u.size
    header = (["t"] + [f"x{i + 1}" for i in range(nx)] + [f"xbar{i + 1}" for i in range(nx)]
              + [f"u{i + 1}" for i in range(nu)] + [f"ubar{i + 1}" for i in range(nu)]
              + ["j_star", "status", "solve_ms", "slack_x", "slack_u", "slack_tube"])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in log.records:
            ms = _fmt(r.solve_time * 1e3) if timing else "nan"
            w.writerow([r.t] + [_fmt(v) for v in (*r.x, *r.x_bar, *r.u, *r.u_bar, r.j_star)]
                       + [r.status, ms] + [_fmt(v) for v in (r.slack_x, r.slack_u, r.slack_tube)])


def read_runlog_csv(path) -> RunLog:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]

    def cols(prefix):
        return [i for i, h in enumerate(header) if h.rstrip("0123456789") == prefix]

    ix, ixb, iu, iub = cols("x"), cols("xbar"), cols("u"), cols("ubar")
    pos = {h: i for i, h in enumerate(header)}
    log = RunLog()
    for r in body:
        log.records.append(StepRecord(
            t=int(r[0]),
            x=np.array([float(r[i]) for i in ix]), x_bar=np.array([float(r[i]) for i in ixb]),
            u=np.array([float(r[i]) for i in iu]), u_bar=np.array([float(r[i]) for i in iub]),
            j_star=float(r[pos["j_star"]]), status=r[pos["status"]],
            solve_time=float(r[pos["solve_ms"]]) / 1e3,
            slack_x=float(r[pos["slack_x"]]), slack_u=float(r[pos["slack_u"]]),
            slack_tube=float(r[pos["slack_tube"]]),
        ))
    log.aborted = bool(log.records) and log.records[-1].status != OPTIMAL
    return log


def run_closed_loop(plant: Plant, x0, bundle: SynthesisBundle, spec: OcpSpec, steps: int, seed: int,
                    x_set: HPolytope, u_set: HPolytope, settings: QpSettings | None = None,
                    warm_start: bool = True) -> RunLog:
    """Apply the tube controller to ``plant`` for ``steps`` steps.

    The controller side sees only ``bundle`` and ``spec``. A non-optimal
    solve is logged and ends the run.
    """
    rng = np.random.default_rng(seed)
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    K = bundle.k_gain
    s_tube = spec.tube_polytope
    setpoint_tube = bundle.s_rpi.translate(bundle.setpoint_x)
    log = RunLog(seed=seed)
    prev: OcpSolution | None = None
    for t in range(steps):
        shift_v = np.nan
        if prev is not None:
            xc, uc = shifted_candidate(spec, prev)
            shift_v = max(candidate_violation(spec, x, xc, uc).values())
        sol = solve_ocp(spec, x, settings, prev if warm_start else None)
        dist_s = distance_to_zonotope(setpoint_tube, x)
        if sol.status != OPTIMAL:
            nan_u = np.full(plant.n_u, np.nan)
            log.records.append(StepRecord(t, x.copy(), np.full(plant.n_x, np.nan), nan_u, nan_u.copy(),
                                          np.nan, sol.status, sol.solve_time, x_set.min_slack(x), np.nan,
                                          np.nan, dist_s, shift_v))
            log.aborted = True
            log.message = f"OCP returned status '{sol.status}' at t={t}"
            break
        xb0, ub0 = sol.x_bar[0], sol.u_bar[0]
        u = ub0 + K @ (x - xb0)
        e = x - xb0
        slack_tube = s_tube.min_slack(e) if s_tube is not None else -distance_to_zonotope(bundle.s_rpi, e)
        log.records.append(StepRecord(t, x.copy(), xb0.copy(), u.copy(), ub0.copy(), sol.j_star, sol.status,
                                      sol.solve_time, x_set.min_slack(x), u_set.min_slack(u), slack_tube,
                                      dist_s, shift_v))
        x = step_plant(plant, x, u, sample_noise(plant.noise_set, rng))
        prev = sol
    return log


def reachable_illustration(ms: ModelSet, log: RunLog, zw: Zonotope) -> list:
    """One-step reachable sets from each logged ``(x(t), u(t))`` under the model set."""
    if not log.records:
        raise ValueError("empty run log")
    out = []
    for r in log.records:
        if r.status != OPTIMAL:
            break
        z = matzono_apply(ms.m_d, np.concatenate([r.x, r.u]))
        out.append(minkowski_sum(z, zw))
    return out


def write_reach_csv(sets, path, dim: int | None = None) -> None:
    if not sets and dim is None:
        raise ValueError("no reachable sets to write and no dimension given")
    n = sets[0].dim if sets else dim
    header = ["t"] + [f"{b}{i + 1}" for i in range(n) for b in ("lo", "hi")]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t, z in enumerate(sets):
            lo, hi = interval_hull(z)
            w.writerow([t + 1] + [_fmt(v) for pair in zip(lo, hi) for v in pair])


@dataclass
class DecayReport:
    no_transient: bool
    rate: float
    fit_points: int
    decrease_margins: np.ndarray
    max_tube_violation: float
    max_setpoint_tube_dist: float


def decay_metrics(log: RunLog, bundle: SynthesisBundle, spec: OcpSpec | None = None,
                  zero_tol: float = 1e-6) -> DecayReport:
    """Exponential-decay fit on the nominal state plus cost-decrease and tube audits.

    ``decrease_margins[t] = J*(t+1) - J*(t) + l(x̄*(t|t), ū*(t|t))``; values at or
    below zero mean the optimal cost drops by at least the stage cost.
    """
    recs = [r for r in log.records if r.status == OPTIMAL]
    if len(recs) < 3:
        raise ValueError("decay metrics need at least 3 optimal steps")
    xs = bundle.setpoint_x
    err = np.array([np.linalg.norm(r.x_bar - xs) for r in recs])
    scale = max(1.0, float(np.linalg.norm(xs)))
    small = err <= zero_tol * scale
    if small[0]:
        no_transient, rate, npts = True, np.nan, 0
    else:
        end = int(np.argmax(small)) if small.any() else len(err)
        npts = end
        if npts >= 2:
            rate = float(np.polyfit(np.arange(npts), np.log(err[:npts]), 1)[0])
        else:
            rate = np.nan
        no_transient = False
    margins = np.array([])
    if spec is not None:
        j = np.array([r.j_star for r in recs])
        stage = np.array([spec.stage_cost(r.x_bar, r.u_bar) for r in recs])
        margins = j[1:] - j[:-1] + stage[:-1]
    tube = bundle.s_rpi
    viol = max(distance_to_zonotope(tube.translate(r.x_bar), r.x) for r in recs)
    dist_s = max(distance_to_zonotope(tube.translate(xs), r.x) for r in recs[len(recs) // 2:])
    return DecayReport(no_transient, rate, npts, margins, viol, dist_s)


__all__ = [
    "Plant", "RunLog", "StepRecord", "DecayReport", "sample_noise", "step_plant", "run_closed_loop",
    "reachable_illustration", "decay_metrics", "distance_to_zonotope", "write_runlog_csv",
    "read_runlog_csv", "write_reach_csv", "generate_trajectories",
]
