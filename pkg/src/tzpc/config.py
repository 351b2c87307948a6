"""Scenario configuration: parsing, validation and JSON round trip."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .setalg import HPolytope, Zonotope, hpolytope_from_box, to_hpolytope, zonotope_from_interval

INPUT_POLICIES = ("uniform", "lattice")
GAIN_MODES = ("synthesize", "provided")
ALPHA_MODES = ("compute", "provided")


class ConfigError(ValueError):
    pass


def _mat(v, name, ndim=2) -> np.ndarray:
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: not numeric ({exc})") from None
    if ndim == 2:
        a = np.atleast_2d(a)
    elif ndim == 1:
        a = np.atleast_1d(a)
    if a.ndim != ndim:
        raise ConfigError(f"{name}: expected a {ndim}-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name}: entries must be finite")
    return a


def _tolist(a):
    return None if a is None else np.asarray(a, dtype=float).tolist()


@dataclass(eq=False)
class SetSpec:
    """A set given either as a zonotope (center, generators) or as a box (lower, upper)."""

    center: np.ndarray | None = None
    generators: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    @classmethod
    def from_dict(cls, d, name) -> "SetSpec":
        if not isinstance(d, dict):
            raise ConfigError(f"{name}: expected an object")
        if "center" in d:
            c = _mat(d["center"], f"{name}.center", 1)
            g = _mat(d.get("generators", np.zeros((c.size, 0))), f"{name}.generators", 2)
            if g.size and g.shape[0] != c.size:
                raise ConfigError(f"{name}: generators have {g.shape[0]} rows, center has {c.size}")
            return cls(center=c, generators=g.reshape(c.size, -1))
        if "lower" in d and "upper" in d:
            lo, hi = _mat(d["lower"], f"{name}.lower", 1), _mat(d["upper"], f"{name}.upper", 1)
            if lo.shape != hi.shape or np.any(lo > hi):
                raise ConfigError(f"{name}: invalid box bounds")
            return cls(lower=lo, upper=hi)
        raise ConfigError(f"{name}: give either center/generators or lower/upper")

    def to_dict(self) -> dict:
        if self.center is not None:
            return {"center": _tolist(self.center), "generators": _tolist(self.generators)}
        return {"lower": _tolist(self.lower), "upper": _tolist(self.upper)}

    @property
    def dim(self) -> int:
        return (self.center if self.center is not None else self.lower).size

    def zonotope(self) -> Zonotope:
        if self.center is not None:
            return Zonotope(self.center, self.generators)
        return zonotope_from_interval(self.lower, self.upper)

    def hpolytope(self) -> HPolytope:
        if self.center is not None:
            return to_hpolytope(self.zonotope())
        return hpolytope_from_box(self.lower, self.upper)


@dataclass(eq=False)
class ScenarioConfig:
    name: str
    a_true: np.ndarray
    b_true: np.ndarray
    x0: np.ndarray
    zw: SetSpec
    noise_injection: np.ndarray | None
    zx: SetSpec
    zu: SetSpec
    mathcal_x: SetSpec
    mathcal_u: SetSpec
    n_traj: int
    traj_len: int
    input_policy: str
    lattice_points: int
    data_seed: int
    covering_grid: int
    q_mat: np.ndarray
    r_mat: np.ndarray
    l1_weight: float
    x_s: np.ndarray
    u_s: np.ndarray
    horizon: int
    theta: float
    kappa_max: int
    symmetrize_zm: bool
    gain_mode: str
    k_gain: np.ndarray | None
    p_lyap: np.ndarray | None
    lqr_q: np.ndarray | None
    lqr_r: np.ndarray | None
    alpha_mode: str
    alpha: float | None
    facets: int
    eps_abs: float
    eps_rel: float
    max_iter: int
    steps: int
    seeds: list = field(default_factory=list)

    @property
    def n_x(self) -> int:
        return self.a_true.shape[0]

    @property
    def n_u(self) -> int:
        return self.b_true.shape[1]

    def noise_zonotope(self) -> Zonotope:
        """State-space noise set, mapped through the injection matrix when one is given."""
        z = self.zw.zonotope()
        if self.noise_injection is None:
            return z
        E = self.noise_injection
        return Zonotope(E @ z.center, E @ z.generators)

    def validate(self) -> None:
        nx, nu = self.n_x, self.n_u
        if self.a_true.shape != (nx, nx):
            raise ConfigError(f"system.a_true must be square, got {self.a_true.shape}")
        if self.b_true.shape[0] != nx:
            raise ConfigError(f"system.b_true has {self.b_true.shape[0]} rows, expected {nx}")
        if self.x0.shape != (nx,):
            raise ConfigError(f"system.x0 must have {nx} entries")
        if self.noise_injection is not None:
            if self.noise_injection.shape != (nx, self.zw.dim):
                raise ConfigError(f"noise.E must have shape ({nx}, {self.zw.dim})")
        elif self.zw.dim != nx:
            raise ConfigError(f"noise.zw has dimension {self.zw.dim}, expected {nx}")
        for nm, s, n in (("zx", self.zx, nx), ("zu", self.zu, nu), ("mathcal_x", self.mathcal_x, nx),
                         ("mathcal_u", self.mathcal_u, nu)):
            if s.dim != n:
                raise ConfigError(f"constraints.{nm} has dimension {s.dim}, expected {n}")
        if self.input_policy not in INPUT_POLICIES:
            raise ConfigError(f"data.input_policy must be one of {INPUT_POLICIES}")
        if self.n_traj < 1 or self.traj_len < 1:
            raise ConfigError("data.n_traj and data.traj_len must be positive")
        if self.input_policy == "lattice" and self.lattice_points < 2:
            raise ConfigError("data.lattice_points must be at least 2 for the lattice policy")
        if self.covering_grid < 2:
            raise ConfigError("data.covering_grid must be at least 2")
        if self.q_mat.shape != (nx, nx) or self.r_mat.shape != (nu, nu):
            raise ConfigError("cost.Q / cost.R have wrong shapes")
        if self.x_s.shape != (nx,) or self.u_s.shape != (nu,):
            raise ConfigError("cost.x_s / cost.u_s have wrong shapes")
        if self.l1_weight < 0:
            raise ConfigError("cost.l1_weight must be nonnegative")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if not 0 <= self.theta < 1 or self.kappa_max < 1:
            raise ConfigError("tube.theta must lie in [0, 1) and tube.kappa_max be positive")
        if self.gain_mode not in GAIN_MODES:
            raise ConfigError(f"gains.mode must be one of {GAIN_MODES}")
        if self.gain_mode == "provided":
            if self.k_gain is None or self.p_lyap is None:
                raise ConfigError("gains.mode=provided needs gains.K and gains.P")
            if self.k_gain.shape != (nu, nx) or self.p_lyap.shape != (nx, nx):
                raise ConfigError("gains.K / gains.P have wrong shapes")
        else:
            for nm, m, n in (("lqr_q", self.lqr_q, nx), ("lqr_r", self.lqr_r, nu)):
                if m is not None and m.shape != (n, n):
                    raise ConfigError(f"gains.{nm} must be {n}x{n}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"terminal.alpha_mode must be one of {ALPHA_MODES}")
        if self.alpha_mode == "provided" and (self.alpha is None or self.alpha < 0):
            raise ConfigError("terminal.alpha_mode=provided needs a nonnegative terminal.alpha")
        if self.facets < 3:
            raise ConfigError("terminal.facets must be at least 3")
        if self.eps_abs <= 0 or self.eps_rel < 0 or self.max_iter < 1:
            raise ConfigError("invalid solver settings")
        if self.steps < 1 or not self.seeds:
            raise ConfigError("run.steps must be positive and run.seeds nonempty")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "system": {"a_true": _tolist(self.a_true), "b_true": _tolist(self.b_true), "x0": _tolist(self.x0)},
            "noise": {"zw": self.zw.to_dict(), "E": _tolist(self.noise_injection)},
            "constraints": {"zx": self.zx.to_dict(), "zu": self.zu.to_dict(),
                            "mathcal_x": self.mathcal_x.to_dict(), "mathcal_u": self.mathcal_u.to_dict()},
            "data": {"n_traj": self.n_traj, "traj_len": self.traj_len, "input_policy": self.input_policy,
                     "lattice_points": self.lattice_points, "seed": self.data_seed,
                     "covering_grid": self.covering_grid},
            "cost": {"Q": _tolist(self.q_mat), "R": _tolist(self.r_mat), "l1_weight": self.l1_weight,
                     "x_s": _tolist(self.x_s), "u_s": _tolist(self.u_s)},
            "horizon": self.horizon,
            "tube": {"theta": self.theta, "kappa_max": self.kappa_max, "symmetrize_zm": self.symmetrize_zm},
            "gains": {"mode": self.gain_mode, "K": _tolist(self.k_gain), "P": _tolist(self.p_lyap),
                      "lqr_q": _tolist(self.lqr_q), "lqr_r": _tolist(self.lqr_r)},
            "terminal": {"alpha_mode": self.alpha_mode, "alpha": self.alpha, "facets": self.facets},
            "solver": {"eps_abs": self.eps_abs, "eps_rel": self.eps_rel, "max_iter": self.max_iter},
            "run": {"steps": self.steps, "seeds": list(self.seeds)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        try:
            sysd, noise, cons = d["system"], d["noise"], d["constraints"]
            data, cost, gains = d["data"], d["cost"], d["gains"]
            tube, term = d.get("tube", {}), d.get("terminal", {})
            solver, run = d.get("solver", {}), d.get("run", {})

            def opt(v, name, ndim=2):
                return None if v is None else _mat(v, name, ndim)

            b = _mat(sysd["b_true"], "system.b_true")
            cfg = cls(
                name=str(d.get("name", "scenario")),
                a_true=_mat(sysd["a_true"], "system.a_true"),
                b_true=b,
                x0=_mat(sysd["x0"], "system.x0", 1),
                zw=SetSpec.from_dict(noise["zw"], "noise.zw"),
                noise_injection=opt(noise.get("E"), "noise.E"),
                zx=SetSpec.from_dict(cons["zx"], "constraints.zx"),
                zu=SetSpec.from_dict(cons["zu"], "constraints.zu"),
                mathcal_x=SetSpec.from_dict(cons["mathcal_x"], "constraints.mathcal_x"),
                mathcal_u=SetSpec.from_dict(cons["mathcal_u"], "constraints.mathcal_u"),
                n_traj=int(data["n_traj"]),
                traj_len=int(data["traj_len"]),
                input_policy=str(data.get("input_policy", "uniform")),
                lattice_points=int(data.get("lattice_points", 0)),
                data_seed=int(data.get("seed", 0)),
                covering_grid=int(data.get("covering_grid", 50)),
                q_mat=_mat(cost["Q"], "cost.Q"),
                r_mat=_mat(cost["R"], "cost.R"),
                l1_weight=float(cost.get("l1_weight", 0.0)),
                x_s=_mat(cost["x_s"], "cost.x_s", 1),
                u_s=_mat(cost["u_s"], "cost.u_s", 1),
                horizon=int(d["horizon"]),
                theta=float(tube.get("theta", 0.01)),
                kappa_max=int(tube.get("kappa_max", 200)),
                symmetrize_zm=bool(tube.get("symmetrize_zm", False)),
                gain_mode=str(gains.get("mode", "synthesize")),
                k_gain=opt(gains.get("K"), "gains.K"),
                p_lyap=opt(gains.get("P"), "gains.P"),
                lqr_q=opt(gains.get("lqr_q"), "gains.lqr_q"),
                lqr_r=opt(gains.get("lqr_r"), "gains.lqr_r"),
                alpha_mode=str(term.get("alpha_mode", "compute")),
                alpha=None if term.get("alpha") is None else float(term["alpha"]),
                facets=int(term.get("facets", 16)),
                eps_abs=float(solver.get("eps_abs", 1e-6)),
                eps_rel=float(solver.get("eps_rel", 1e-6)),
                max_iter=int(solver.get("max_iter", 20000)),
                steps=int(run.get("steps", 60)),
                seeds=[int(s) for s in run.get("seeds", list(range(20)))],
            )
        except KeyError as exc:
            raise ConfigError(f"missing field {exc}") from None
        except (TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed configuration: {exc}") from None
        cfg.validate()
        return cfg


def packaged_scenarios() -> list:
    root = resources.files("tzpc") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config_path(ref) -> Path:
    """A file path, or the name of a packaged scenario."""
    p = Path(ref)
    if p.exists():
        return p
    name = str(ref)[:-5] if str(ref).endswith(".json") else str(ref)
    cand = resources.files("tzpc") / "scenarios" / f"{name}.json"
    if cand.is_file():
        return Path(str(cand))
    raise ConfigError(f"config '{ref}' is neither a file nor a packaged scenario ({', '.join(packaged_scenarios())})")


def load_config(ref) -> ScenarioConfig:
    path = resolve_config_path(ref)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ScenarioConfig.from_dict(raw)


def dump_config(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2)
