"""Learning phase: data matrices, rank check, the data-consistent model set and
the covering radius of the data."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .setalg import (
    IntervalMatrix,
    MatrixZonotope,
    Zonotope,
    interval_frobenius,
    interval_hull,
    matzono_interval_hull,
    to_hpolytope,
)

RANK_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (T_i + 1, n_x)
    inputs: np.ndarray  # (T_i, n_u)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.states, dtype=float))
        u = np.asarray(self.inputs, dtype=float)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        if u.shape[0] < 1:
            raise ValueError("a trajectory needs at least one input")
        if x.shape[0] != u.shape[0] + 1:
            raise ValueError(
                f"trajectory has {x.shape[0]} states and {u.shape[0]} inputs; expected one more state"
            )
        object.__setattr__(self, "states", x)
        object.__setattr__(self, "inputs", u)

    @property
    def n_x(self) -> int:
        return self.states.shape[1]

    @property
    def n_u(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True, eq=False)
class Dataset:
    trajectories: tuple
    X_plus: np.ndarray
    X_minus: np.ndarray
    U_minus: np.ndarray
    D_minus: np.ndarray

    @property
    def T(self) -> int:
        return self.X_plus.shape[1]

    @property
    def n_x(self) -> int:
        return self.X_plus.shape[0]

    @property
    def n_u(self) -> int:
        return self.U_minus.shape[0]


@dataclass(frozen=True, eq=False)
class ModelSet:
    m_d: MatrixZonotope
    i_md: IntervalMatrix
    fro_norm: float


def assemble(trajectories) -> Dataset:
    """Stack trajectories column-wise into ``X+``, ``X-``, ``U-`` and ``D-``.

    Successor pairs are formed inside each trajectory only, so no column ever
    pairs the end of one experiment with the start of another.
    """
    trajectories = tuple(trajectories)
    if not trajectories:
        raise ValueError("no trajectories given")
    n_x, n_u = trajectories[0].n_x, trajectories[0].n_u
    for tr in trajectories:
        if (tr.n_x, tr.n_u) != (n_x, n_u):
            raise ValueError("trajectories have inconsistent state/input dimensions")
    X_plus = np.hstack([tr.states[1:].T for tr in trajectories])
    X_minus = np.hstack([tr.states[:-1].T for tr in trajectories])
    U_minus = np.hstack([tr.inputs.T for tr in trajectories])
    return Dataset(trajectories, X_plus, X_minus, U_minus, np.vstack([X_minus, U_minus]))


def check_rank(d: Dataset, tol: float = RANK_TOL) -> bool:
    s = np.linalg.svd(d.D_minus, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return False
    return int(np.sum(s > tol * s[0])) == d.n_x + d.n_u


def noise_matrix_zonotope(zw: Zonotope, T: int) -> MatrixZonotope:
    """Matrix zonotope of all noise sequences ``[w(0) ... w(T-1)]`` with ``w(k) in zw``.

    Generators are ordered column position first, then noise generator.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    n, g = zw.dim, zw.order
    C = np.tile(zw.center[:, None], (1, T))
    G = np.zeros((T * g, n, T))
    for j in range(T):
        G[j * g:(j + 1) * g, :, j] = zw.generators.T
    return MatrixZonotope(C, G)


def right_pinv(D: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(D)


def learn_model_set(d: Dataset, zw: Zonotope, rank_tol: float = RANK_TOL) -> ModelSet:
    """Set of all ``[A B]`` consistent with the data and the noise bound."""
    if not check_rank(d, rank_tol):
        raise ValueError(
            f"D_minus is rank deficient (need rank {d.n_x + d.n_u}); collect more exciting data"
        )
    if zw.dim != d.n_x:
        raise ValueError("noise zonotope dimension differs from the state dimension")
    Dp = right_pinv(d.D_minus)
    center = (d.X_plus - zw.center[:, None]) @ Dp
    # each noise generator sits in a single column j, so (-G) D^dagger = -g_i (row j of D^dagger)
    gens = -np.einsum("ni,jm->jinm", zw.generators, Dp).reshape(-1, d.n_x, Dp.shape[1])
    m_d = MatrixZonotope(center, gens)
    i_md = matzono_interval_hull(m_d)
    return ModelSet(m_d, i_md, interval_frobenius(i_md))


def covering_radius(
    d: Dataset,
    zx: Zonotope,
    zu: Zonotope,
    grid_points: int = 50,
    chunk: int = 65536,
) -> float:
    """Upper bound on the covering radius of the data columns over ``zx × zu``.

    A uniform grid spans the interval hull of the domain; grid points farther
    than one cell half-diagonal from the domain are dropped. The largest
    nearest-data distance over the remaining grid, plus the half-diagonal,
    bounds the distance from any domain point to the data.
    """
    if grid_points < 2:
        raise ValueError("grid_points must be at least 2")
    lo_x, hi_x = interval_hull(zx)
    lo_u, hi_u = interval_hull(zu)
    lo = np.concatenate([lo_x, lo_u])
    hi = np.concatenate([hi_x, hi_u])
    h = (hi - lo) / (grid_points - 1)
    half_diag = 0.5 * float(np.linalg.norm(h))
    axes = [np.linspace(a, b, grid_points) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)
    n_x = zx.dim
    keep = _near_set(zx, grid[:, :n_x], half_diag) & _near_set(zu, grid[:, n_x:], half_diag)
    grid = grid[keep]
    if grid.shape[0] == 0:
        raise ValueError("covering grid is empty after filtering")
    tree = cKDTree(d.D_minus.T)
    worst = 0.0
    for start in range(0, grid.shape[0], chunk):
        dist, _ = tree.query(grid[start:start + chunk])
        worst = max(worst, float(dist.max()))
    return worst + half_diag


def _near_set(z: Zonotope, pts: np.ndarray, radius: float) -> np.ndarray:
    if z.dim <= 3:
        H = to_hpolytope(z)
        norms = np.linalg.norm(H.normals, axis=1)
        return np.all(pts @ H.normals.T <= H.offsets + radius * norms, axis=1)
    lo, hi = interval_hull(z)
    return np.all((pts >= lo - radius) & (pts <= hi + radius), axis=1)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(tr: Trajectory, path) -> None:
    path = Path(path)
    header = ["k"] + [f"x{i + 1}" for i in range(tr.n_x)] + [f"u{i + 1}" for i in range(tr.n_u)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, x in enumerate(tr.states):
            u = tr.inputs[k] if k < tr.inputs.shape[0] else [None] * tr.n_u
            w.writerow([k] + [_fmt(v) for v in x] + ["" if v is None else _fmt(v) for v in u])


def read_trajectory_csv(path) -> Trajectory:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xi = [i for i, h in enumerate(header) if h.startswith("x")]
    ui = [i for i, h in enumerate(header) if h.startswith("u")]
    states = np.array([[float(r[i]) for i in xi] for r in body])
    inputs = np.array([[float(r[i]) for i in ui] for r in body[:-1]])
    if any(body[-1][i] != "" for i in ui):
        raise ValueError(f"{path}: last row must leave the input fields empty")
    return Trajectory(states, inputs)
