"""Pipeline stages that read and write the artifact tree of one scenario.

Layout under the output directory::

    data/traj_0000.csv ...   open-loop experiments
    modelset.json            learned model set and covering radius
    bundle.json              offline synthesis results
    run_<seed>.csv           closed-loop logs
    reach_<seed>.csv         interval hulls of the one-step reachable sets
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import (
    bundle_from_dict,
    bundle_to_dict,
    modelset_from_dict,
    modelset_to_dict,
    read_json,
    write_json,
)
from .config import ScenarioConfig
from .ident import (
    Dataset,
    Trajectory,
    assemble,
    check_rank,
    covering_radius,
    learn_model_set,
    read_trajectory_csv,
    write_trajectory_csv,
)
from .ocp import OcpSpec, solve_ocp
from .qp import OPTIMAL, QpSettings
from .setalg import (
    Ellipsoid,
    contains_points,
    interval_hull,
    linear_map,
    minkowski_sum,
    support_many,
    to_hpolytope,
)
from .simloop import (
    Plant,
    RunLog,
    generate_trajectories,
    read_runlog_csv,
    reachable_illustration,
    run_closed_loop,
    sample_noise,
    step_plant,
    write_reach_csv,
    write_runlog_csv,
)
from .synth import (
    SynthesisBundle,
    SynthesisError,
    ErrorDynamics,
    build_phi,
    compute_rpi,
    lqr_gain,
    lyapunov_margin,
    mismatch_sets,
    pick_nominal,
    symmetric_hull,
    synthesize,
    terminal_invariance_check,
    terminal_level,
    tighten,
)

log = logging.getLogger(__name__)


class MissingPrerequisite(RuntimeError):
    pass


def make_plant(cfg: ScenarioConfig) -> Plant:
    return Plant(cfg.a_true, cfg.b_true, cfg.noise_zonotope())


def solver_settings(cfg: ScenarioConfig) -> QpSettings:
    return QpSettings(eps_abs=cfg.eps_abs, eps_rel=cfg.eps_rel, max_iter=cfg.max_iter)


def generate_data(cfg: ScenarioConfig) -> list:
    """Experiments on the true plant according to the configured input policy.

    ``lattice`` starts one trajectory from every lattice point of ``Z_x × Z_u``
    (first input taken from the lattice, later inputs uniform); ``n_traj`` is
    then ignored.
    """
    plant = make_plant(cfg)
    rng = np.random.default_rng(cfg.data_seed)
    zx, zu = cfg.zx.zonotope(), cfg.zu.zonotope()
    if cfg.traj_len < 2:
        raise ValueError("data.traj_len counts state samples and must be at least 2 to record a transition")
    if cfg.input_policy == "uniform":
        return generate_trajectories(plant, zx, zu, cfg.n_traj, cfg.traj_len, rng)
    lo = np.concatenate([interval_hull(zx)[0], interval_hull(zu)[0]])
    hi = np.concatenate([interval_hull(zx)[1], interval_hull(zu)[1]])
    axes = [np.linspace(a, b, cfg.lattice_points) for a, b in zip(lo, hi)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)
    nx = cfg.n_x
    keep = contains_points(to_hpolytope(zx), pts[:, :nx]) & contains_points(to_hpolytope(zu), pts[:, nx:])
    out = []
    for p in pts[keep]:
        x = p[:nx]
        xs, us = [x], []
        for k in range(cfg.traj_len - 1):
            u = p[nx:] if k == 0 else sample_noise(zu, rng)
            x = step_plant(plant, x, u, sample_noise(plant.noise_set, rng))
            xs.append(x)
            us.append(u)
        out.append(Trajectory(np.array(xs), np.array(us)))
    return out


def _synth_kwargs(cfg: ScenarioConfig) -> dict:
    kw = dict(theta=cfg.theta, kappa_max=cfg.kappa_max, symmetrize_zm=cfg.symmetrize_zm)
    if cfg.gain_mode == "provided":
        kw.update(k_gain=cfg.k_gain, p_lyap=cfg.p_lyap)
    else:
        kw.update(lqr_q=cfg.lqr_q, lqr_r=cfg.lqr_r)
    if cfg.alpha_mode == "provided":
        kw["alpha"] = cfg.alpha
    return kw


def make_ocp_spec(cfg: ScenarioConfig, bundle: SynthesisBundle) -> OcpSpec:
    return OcpSpec.from_bundle(bundle, cfg.horizon, cfg.q_mat, cfg.r_mat, cfg.l1_weight, cfg.facets)


# -- stages -----------------------------------------------------------------

def stage_generate(cfg: ScenarioConfig, out: Path) -> list:
    data_dir = Path(out) / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    for old in data_dir.glob("traj_*.csv"):
        old.unlink()
    trs = generate_data(cfg)
    for i, tr in enumerate(trs):
        write_trajectory_csv(tr, data_dir / f"traj_{i:04d}.csv")
    log.info("wrote %d trajectories to %s", len(trs), data_dir)
    return trs


def load_dataset(out: Path) -> Dataset:
    files = sorted((Path(out) / "data").glob("traj_*.csv"))
    if not files:
        raise MissingPrerequisite(f"no data in {Path(out) / 'data'}; run 'generate-data' first")
    return assemble(read_trajectory_csv(f) for f in files)


def stage_learn(cfg: ScenarioConfig, out: Path):
    d = load_dataset(out)
    ms = learn_model_set(d, cfg.noise_zonotope())
    delta = covering_radius(d, cfg.zx.zonotope(), cfg.zu.zonotope(), cfg.covering_grid)
    write_json(modelset_to_dict(ms, delta), Path(out) / "modelset.json")
    log.info("model set: T=%d, ||I_M||_F=%.4g, delta=%.4g", d.T, ms.fro_norm, delta)
    return ms, delta


def load_modelset(out: Path):
    path = Path(out) / "modelset.json"
    if not path.exists():
        raise MissingPrerequisite(f"{path} not found; run 'learn' first")
    return modelset_from_dict(read_json(path))


def stage_offline(cfg: ScenarioConfig, out: Path) -> SynthesisBundle:
    d = load_dataset(out)
    ms, delta = load_modelset(out)
    bundle = synthesize(d, ms, cfg.noise_zonotope(), delta, cfg.mathcal_x.hpolytope(), cfg.mathcal_u.hpolytope(),
                        cfg.x_s, cfg.u_s, **_synth_kwargs(cfg))
    write_json(bundle_to_dict(bundle), Path(out) / "bundle.json")
    return bundle


def load_bundle(out: Path) -> SynthesisBundle:
    path = Path(out) / "bundle.json"
    if not path.exists():
        raise MissingPrerequisite(f"{path} not found; run 'offline' first")
    return bundle_from_dict(read_json(path))


def simulate_seed(cfg: ScenarioConfig, bundle: SynthesisBundle, seed: int, steps: int) -> RunLog:
    spec = make_ocp_spec(cfg, bundle)
    return run_closed_loop(make_plant(cfg), cfg.x0, bundle, spec, steps, seed,
                           cfg.mathcal_x.hpolytope(), cfg.mathcal_u.hpolytope(), solver_settings(cfg))


def stage_simulate(cfg: ScenarioConfig, out: Path, seeds=None, steps=None, timing: bool = False) -> dict:
    bundle = load_bundle(out)
    seeds = cfg.seeds if seeds is None else seeds
    steps = cfg.steps if steps is None else steps
    logs = {}
    for seed in seeds:
        run = simulate_seed(cfg, bundle, seed, steps)
        write_runlog_csv(run, Path(out) / f"run_{seed}.csv", timing=timing)
        if run.aborted:
            log.error("seed %d: %s", seed, run.message)
        logs[seed] = run
    return logs


def stage_reach(cfg: ScenarioConfig, out: Path, seeds=None) -> dict:
    ms, _ = load_modelset(out)
    seeds = cfg.seeds if seeds is None else seeds
    zw = cfg.noise_zonotope()
    sets = {}
    for seed in seeds:
        path = Path(out) / f"run_{seed}.csv"
        if not path.exists():
            raise MissingPrerequisite(f"{path} not found; run 'simulate' first")
        run = read_runlog_csv(path)
        sets[seed] = reachable_illustration(ms, run, zw)
        write_reach_csv(sets[seed], Path(out) / f"reach_{seed}.csv", cfg.n_x)
    return sets


# -- checks -------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    ok: bool | None  # None means skipped
    detail: str

    def line(self) -> str:
        tag = "SKIP" if self.ok is None else ("PASS" if self.ok else "FAIL")
        return f"[{tag}] {self.name}: {self.detail}"


def run_checks(cfg: ScenarioConfig, lyap_tol: float = 1e-9, terminal_samples: int = 1000) -> list:
    """Verify every standing requirement of the scheme on freshly generated data."""
    res: list[CheckResult] = []

    def skip(*names):
        for n in names:
            res.append(CheckResult(n, None, "skipped after an earlier failure"))

    later = ["lyapunov_vertices", "error_dynamics_stable", "rpi_certificate", "setpoint_tightened",
             "setpoint_equilibrium", "terminal_set", "initial_feasibility"]
    if cfg.traj_len < 2:
        res.append(CheckResult("data_rank", False,
                               f"trajectories with {cfg.traj_len} sample(s) hold no transitions, T = 0 < {cfg.n_x + cfg.n_u}"))
        skip("model_set", *later)
        return res
    d = assemble(generate_data(cfg))
    s = np.linalg.svd(d.D_minus, compute_uv=False)
    rank_ok = check_rank(d)
    need = d.n_x + d.n_u
    ratio = s[need - 1] / s[0] if s.size >= need and s[0] > 0 else 0.0
    res.append(CheckResult("data_rank", rank_ok,
                           f"rank(D_minus) {'=' if rank_ok else '<'} {need}, sigma_min/sigma_max = {ratio:.3e}, "
                           f"T = {d.T}"))
    if not rank_ok:
        skip("model_set", *later)
        return res
    zw = cfg.noise_zonotope()
    ms = learn_model_set(d, zw)
    delta = covering_radius(d, cfg.zx.zonotope(), cfg.zu.zonotope(), cfg.covering_grid)
    res.append(CheckResult("model_set", True, f"||I_M||_F = {ms.fro_norm:.4g}, covering radius = {delta:.4g}"))

    nominal = pick_nominal(ms)
    if cfg.gain_mode == "provided":
        K, P = cfg.k_gain, cfg.p_lyap
    else:
        q = np.eye(cfg.n_x) if cfg.lqr_q is None else cfg.lqr_q
        r = np.eye(cfg.n_u) if cfg.lqr_r is None else cfg.lqr_r
        try:
            K, P = lqr_gain(nominal.a_bar, nominal.b_bar, q, r)
        except SynthesisError as exc:
            res.append(CheckResult("lyapunov_vertices", False, str(exc)))
            skip(*later[1:])
            return res
    margin = lyapunov_margin(ms, K, P)
    res.append(CheckResult("lyapunov_vertices", margin < -lyap_tol,
                           f"max eig(A_K^T P A_K - P) over vertices = {margin:.4e}"))
    a_k = nominal.a_bar + nominal.b_bar @ K
    rho = float(np.max(np.abs(np.linalg.eigvals(a_k))))
    res.append(CheckResult("error_dynamics_stable", rho < 1, f"spectral radius of A_K = {rho:.4f}"))
    if rho >= 1:
        skip(*later[2:])
        return res

    z_m, z_eps = mismatch_sets(d, nominal, zw, delta, ms.fro_norm)
    if cfg.symmetrize_zm:
        z_m = symmetric_hull(z_m)
    z_phi = build_phi(z_m, z_eps, zw)
    try:
        s_rpi, theta, kappa = compute_rpi(ErrorDynamics(a_k, z_phi), cfg.theta, cfg.kappa_max)
    except SynthesisError as exc:
        res.append(CheckResult("rpi_certificate", False, str(exc)))
        skip(*later[3:])
        return res
    img = minkowski_sum(linear_map(a_k, s_rpi), z_phi)
    if s_rpi.dim <= 3:
        H = to_hpolytope(s_rpi)
        excess = float(np.max(support_many(img, H.normals) - H.offsets))
        res.append(CheckResult("rpi_certificate", excess <= 1e-9,
                               f"A_K S + Z_phi inside S, max support excess = {excess:.3e} (kappa = {kappa})"))
    else:
        res.append(CheckResult("rpi_certificate", None, "containment test needs dimension <= 3"))

    X, U = cfg.mathcal_x.hpolytope(), cfg.mathcal_u.hpolytope()
    x_tight, u_tight = tighten(X, U, s_rpi, K)
    sx, su = x_tight.min_slack(cfg.x_s), u_tight.min_slack(cfg.u_s)
    res.append(CheckResult("setpoint_tightened", sx > 0 and su > 0,
                           f"min slack of x_s in X-S = {sx:.4g}, of u_s in U-KS = {su:.4g}"))
    eq_res = float(np.max(np.abs(nominal.a_bar @ cfg.x_s + nominal.b_bar @ cfg.u_s - cfg.x_s)))
    eq_tol = 1e-6 * (1 + float(np.max(np.abs(cfg.x_s))))
    res.append(CheckResult("setpoint_equilibrium", eq_res <= eq_tol,
                           f"|A_bar x_s + B_bar u_s - x_s|_inf = {eq_res:.3e}"))
    if sx <= 0 or su <= 0:
        skip("terminal_set", "initial_feasibility")
        return res
    alpha = terminal_level(P, cfg.x_s, K, x_tight, u_tight, cfg.u_s)
    if cfg.alpha_mode == "provided":
        alpha = cfg.alpha
    bundle = SynthesisBundle(nominal, np.atleast_2d(K), P, zw, z_m, z_eps, z_phi, s_rpi, theta, kappa,
                             Ellipsoid(P, cfg.x_s, alpha), u_tight, x_tight, cfg.x_s, cfg.u_s)
    rep = terminal_invariance_check(bundle, terminal_samples, cfg.q_mat, cfg.r_mat, cfg.l1_weight,
                                    polygon_facets=cfg.facets)
    poly = "" if rep.polygon_invariant is None else f", polygon invariant = {rep.polygon_invariant}"
    res.append(CheckResult("terminal_set", rep.ok and rep.polygon_invariant is not False,
                           f"alpha = {alpha:.4g}, {rep.summary()}{poly}"))
    sol = solve_ocp(make_ocp_spec(cfg, bundle), cfg.x0, solver_settings(cfg))
    res.append(CheckResult("initial_feasibility", sol.status == OPTIMAL,
                           f"tube MPC problem at x0 returns '{sol.status}'"))
    return res
