"""Set algebra for zonotopes, matrix zonotopes, interval matrices, H-polytopes
and ellipsoids.

All sets are immutable value objects backed by float64 numpy arrays. Exact
H-representations of zonotopes are only built for dimensions up to three,
which covers every use in the controller pipeline.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

GEOM_TOL = 1e-9
# normals closer than this (after normalisation) are treated as identical
_NORMAL_MERGE_TOL = 1e-12


def _frozen(a, ndim):
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Zonotope:
    """Zonotope ``<center, generators>`` with one generator per column.

    A generator matrix with zero columns encodes the singleton ``{center}``.
    """

    center: np.ndarray
    generators: np.ndarray = field(default=None)

    def __post_init__(self):
        c = _frozen(np.atleast_1d(np.asarray(self.center, dtype=float)), 1)
        g = self.generators
        if g is None:
            g = np.zeros((c.size, 0))
        g = np.asarray(g, dtype=float)
        if g.ndim == 1:
            g = g.reshape(c.size, -1)
        if g.size == 0:
            g = np.zeros((c.size, 0))
        g = _frozen(g, 2)
        if g.shape[0] != c.size:
            raise ValueError(f"generators have {g.shape[0]} rows, center has {c.size}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(g))):
            raise ValueError("zonotope entries must be finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", g)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def order(self) -> int:
        """Number of generators."""
        return self.generators.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Zonotope):
            return NotImplemented
        return (
            self.generators.shape == other.generators.shape
            and np.array_equal(self.center, other.center)
            and np.array_equal(self.generators, other.generators)
        )

    def __hash__(self):
        return hash((self.center.tobytes(), self.generators.tobytes(), self.generators.shape))

    def __add__(self, other):
        return minkowski_sum(self, other)

    def __neg__(self):
        return negate(self)

    def __rmatmul__(self, L):
        return linear_map(L, self)

    def scale(self, s: float) -> "Zonotope":
        return Zonotope(s * self.center, s * self.generators)

    def translate(self, v) -> "Zonotope":
        return Zonotope(self.center + np.asarray(v, dtype=float), self.generators)

    def sample(self, rng, n: int) -> np.ndarray:
        """Draw ``n`` points with generator coefficients uniform on [-1, 1]; shape (n, dim)."""
        beta = rng.uniform(-1.0, 1.0, size=(n, self.order))
        return self.center + beta @ self.generators.T

    def vertices_2d(self) -> np.ndarray:
        """Vertices of a planar zonotope in counter-clockwise order."""
        if self.dim != 2:
            raise ValueError("vertices_2d needs a 2-D zonotope")
        g = self.generators[:, np.linalg.norm(self.generators, axis=0) > 0]
        if g.shape[1] == 0:
            return self.center.reshape(1, 2)
        # orient generators to the upper half plane, then sweep by angle
        flip = (g[1] < 0) | ((g[1] == 0) & (g[0] < 0))
        g = np.where(flip, -g, g)
        g = g[:, np.argsort(np.arctan2(g[1], g[0]), kind="stable")]
        start = self.center - g.sum(axis=1)
        pts = [start]
        for col in np.hstack([2 * g, -2 * g]).T:
            pts.append(pts[-1] + col)
        return np.array(pts[:-1])


def _as_zonotope(z) -> Zonotope:
    if not isinstance(z, Zonotope):
        raise TypeError(f"expected Zonotope, got {type(z).__name__}")
    return z


def minkowski_sum(a: Zonotope, b: Zonotope) -> Zonotope:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return Zonotope(a.center + b.center, np.hstack([a.generators, b.generators]))


def negate(z: Zonotope) -> Zonotope:
    # the generator box is symmetric, so only the center flips
    return Zonotope(-z.center, z.generators)


def linear_map(L, z: Zonotope) -> Zonotope:
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape[1] != z.dim:
        raise ValueError(f"map has {L.shape[1]} columns, zonotope has dimension {z.dim}")
    return Zonotope(L @ z.center, L @ z.generators)


def merge_parallel(z: Zonotope, tol: float = 1e-12) -> Zonotope:
    """Same set with parallel generators combined and zero generators dropped.

    Segments along one line add up to a single segment, so this is exact.
    """
    G = z.generators
    norms = np.linalg.norm(G, axis=0)
    keep = norms > tol * max(1.0, norms.max(initial=0.0))
    G, norms = G[:, keep], norms[keep]
    out_dirs, out_len = [], []
    for g, nrm in zip(G.T, norms):
        d = g / nrm
        for i, e in enumerate(out_dirs):
            c = float(d @ e)
            if abs(abs(c) - 1.0) < 1e-12 and np.max(np.abs(d - np.sign(c) * e)) < 1e-9:
                out_len[i] += nrm
                break
        else:
            out_dirs.append(d)
            out_len.append(nrm)
    if not out_dirs:
        return Zonotope(z.center, None)
    return Zonotope(z.center, np.stack(out_dirs, axis=1) * np.array(out_len))


def cartesian_product(a: Zonotope, b: Zonotope) -> Zonotope:
    g = np.zeros((a.dim + b.dim, a.order + b.order))
    g[: a.dim, : a.order] = a.generators
    g[a.dim :, a.order :] = b.generators
    return Zonotope(np.concatenate([a.center, b.center]), g)


def interval_hull(z: Zonotope) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounding box ``(lower, upper)`` of ``z``."""
    dg = np.abs(z.generators).sum(axis=1)
    return z.center - dg, z.center + dg


def zonotope_from_interval(lower, upper) -> Zonotope:
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if lower.shape != upper.shape:
        raise ValueError("interval bounds differ in shape")
    if np.any(lower > upper):
        raise ValueError("interval lower bound exceeds upper bound")
    half = 0.5 * (upper - lower)
    keep = half > 0
    return Zonotope(0.5 * (upper + lower), np.diag(half)[:, keep])


def support(z: Zonotope, d) -> float:
    """Support function ``max {d.x : x in z}``."""
    d = np.asarray(d, dtype=float)
    if d.shape != (z.dim,):
        raise ValueError(f"direction has shape {d.shape}, expected ({z.dim},)")
    return float(d @ z.center + np.abs(d @ z.generators).sum())


def support_many(z: Zonotope, D) -> np.ndarray:
    """Row-wise support values for a matrix of directions."""
    D = np.atleast_2d(np.asarray(D, dtype=float))
    return D @ z.center + np.abs(D @ z.generators).sum(axis=1)


@dataclass(frozen=True, eq=False)
class HPolytope:
    """Polyhedron ``{x : normals @ x <= offsets}``."""

    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        H = _frozen(np.atleast_2d(np.asarray(self.normals, dtype=float)), 2)
        b = _frozen(np.atleast_1d(np.asarray(self.offsets, dtype=float)), 1)
        if H.shape[0] != b.size:
            raise ValueError("normals and offsets disagree on the facet count")
        object.__setattr__(self, "normals", H)
        object.__setattr__(self, "offsets", b)

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def n_facets(self) -> int:
        return self.normals.shape[0]

    def slack(self, x) -> np.ndarray:
        return self.offsets - self.normals @ np.asarray(x, dtype=float)

    def min_slack(self, x) -> float:
        return float(self.slack(x).min()) if self.n_facets else np.inf

    def is_empty(self) -> bool:
        """True if no point satisfies every inequality (LP based)."""
        if self.n_facets == 0:
            return False
        res = linprog(
            np.zeros(self.dim),
            A_ub=self.normals,
            b_ub=self.offsets,
            bounds=[(None, None)] * self.dim,
            method="highs",
        )
        return res.status == 2

    def chebyshev_radius(self) -> float:
        """Radius of the largest inscribed ball; negative if empty."""
        norms = np.linalg.norm(self.normals, axis=1)
        c = np.zeros(self.dim + 1)
        c[-1] = -1.0
        A = np.hstack([self.normals, norms[:, None]])
        res = linprog(c, A_ub=A, b_ub=self.offsets,
                      bounds=[(None, None)] * self.dim + [(None, None)], method="highs")
        if res.status == 2:
            return -np.inf
        if res.status == 3:
            return np.inf
        return float(res.x[-1])


def _canonical_normals(N: np.ndarray) -> np.ndarray:
    """Unit normals, one per direction pair, sign fixed, duplicates merged."""
    norms = np.linalg.norm(N, axis=1)
    N = N[norms > _NORMAL_MERGE_TOL * max(1.0, norms.max(initial=0.0))]
    if N.shape[0] == 0:
        return N
    N = N / np.linalg.norm(N, axis=1, keepdims=True)
    # first clearly nonzero component positive
    idx = np.argmax(np.abs(N) > 1e-12, axis=1)
    signs = np.sign(N[np.arange(N.shape[0]), idx])
    N = N * signs[:, None]
    # rows equal to 10 decimals are one direction; a pair split by rounding only
    # leaves a redundant halfspace, which does not change the set
    _, first = np.unique(np.round(N, 10), axis=0, return_index=True)
    return N[np.sort(first)]


def _facet_directions(G: np.ndarray) -> np.ndarray:
    """Facet normals (one sign) of a full-dimensional zonotope in R^r, r <= 3."""
    r = G.shape[0]
    if r == 1:
        return np.ones((1, 1))
    if r == 2:
        return _canonical_normals(np.stack([-G[1], G[0]], axis=1))
    cols = [np.cross(G[:, i], G[:, j]) for i, j in itertools.combinations(range(G.shape[1]), 2)]
    return _canonical_normals(np.array(cols).reshape(-1, 3))


def to_hpolytope(z: Zonotope) -> HPolytope:
    """Facet representation of a zonotope of dimension at most three.

    Flat zonotopes get their facets computed inside the affine hull; each
    direction orthogonal to the hull contributes a pair of opposite
    halfspaces with equal offsets.
    """
    n = z.dim
    if n > 3:
        raise ValueError(f"exact H-representation is only implemented for n <= 3 (got {n})")
    G = z.generators
    if G.shape[1]:
        # full U is only needed (and cheap) when there are fewer generators than dimensions
        U, s, _ = np.linalg.svd(G, full_matrices=G.shape[1] < n)
        rank = int(np.sum(s > GEOM_TOL * max(1.0, s[0])))
    else:
        U, rank = np.eye(n), 0
    if rank == n:
        dirs = _facet_directions(G)
    else:
        basis, comp = U[:, :rank], U[:, rank:]
        dirs = []
        if rank:
            dirs.append(_facet_directions(basis.T @ G) @ basis.T)
        dirs.append(comp.T)
        dirs = _canonical_normals(np.vstack(dirs))
    normals = np.vstack([dirs, -dirs])
    return HPolytope(normals, support_many(z, normals))


def hpolytope_from_box(lower, upper) -> HPolytope:
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    n = lower.size
    return HPolytope(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([upper, -lower]))


def pontryagin_diff(p: HPolytope, s: Zonotope) -> HPolytope:
    """``p ⊖ s``: every offset shrinks by the support of ``s`` along its normal."""
    if p.dim != s.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {s.dim}")
    return HPolytope(p.normals, p.offsets - support_many(s, p.normals))


def contains_point(p, x, tol: float = GEOM_TOL) -> bool:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(p, Zonotope):
        p = to_hpolytope(p)
    if x.shape != (p.dim,):
        raise ValueError(f"point has shape {x.shape}, set dimension is {p.dim}")
    return bool(np.all(p.normals @ x <= p.offsets + tol))


def contains_points(p, X, tol: float = GEOM_TOL) -> np.ndarray:
    """Vectorised membership for the rows of ``X``."""
    if isinstance(p, Zonotope):
        p = to_hpolytope(p)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.all(X @ p.normals.T <= p.offsets + tol, axis=1)


def zonotope_subset(inner: Zonotope, outer: Zonotope, tol: float = GEOM_TOL) -> bool:
    if inner.dim != outer.dim:
        raise ValueError(f"dimension mismatch: {inner.dim} vs {outer.dim}")
    H = to_hpolytope(outer)
    return bool(np.all(support_many(inner, H.normals) <= H.offsets + tol))


@dataclass(frozen=True, eq=False)
class MatrixZonotope:
    """Matrix zonotope; ``generators`` has shape (gamma, rows, cols)."""

    center: np.ndarray
    generators: np.ndarray = field(default=None)

    def __post_init__(self):
        C = _frozen(np.atleast_2d(np.asarray(self.center, dtype=float)), 2)
        G = self.generators
        if G is None or np.size(G) == 0:
            G = np.zeros((0,) + C.shape)
        G = _frozen(np.asarray(G, dtype=float), 3)
        if G.shape[1:] != C.shape:
            raise ValueError(f"generator shape {G.shape[1:]} differs from center shape {C.shape}")
        object.__setattr__(self, "center", C)
        object.__setattr__(self, "generators", G)

    @property
    def shape(self):
        return self.center.shape

    @property
    def order(self) -> int:
        return self.generators.shape[0]

    def sample(self, rng, n: int) -> np.ndarray:
        beta = rng.uniform(-1.0, 1.0, size=(n, self.order))
        return self.center + np.einsum("kg,gij->kij", beta, self.generators)

    def contains(self, M, tol: float = 1e-9) -> bool:
        """Exact membership: is there a coefficient vector in [-1, 1]^gamma reproducing ``M``?"""
        M = np.asarray(M, dtype=float)
        if M.shape != self.shape:
            raise ValueError(f"matrix shape {M.shape} differs from {self.shape}")
        rhs = (M - self.center).ravel()
        if self.order == 0:
            return bool(np.max(np.abs(rhs), initial=0.0) <= tol)
        lo, hi = matzono_interval_hull(self).lower, matzono_interval_hull(self).upper
        if np.any(M < lo - tol) or np.any(M > hi + tol):
            return False
        A = self.generators.reshape(self.order, -1).T
        # minimise the equality residual within the box; zero residual means membership
        m, g = A.shape
        c = np.concatenate([np.zeros(g), np.ones(m)])
        A_ub = np.block([[A, -np.eye(m)], [-A, -np.eye(m)]])
        b_ub = np.concatenate([rhs, -rhs])
        res = linprog(c, A_ub=A_ub, b_ub=b_ub,
                      bounds=[(-1.0, 1.0)] * g + [(0.0, None)] * m, method="highs")
        return bool(res.status == 0 and np.max(res.x[g:], initial=0.0) <= tol)


@dataclass(frozen=True, eq=False)
class IntervalMatrix:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_2d(np.asarray(self.lower, dtype=float)), 2)
        hi = _frozen(np.atleast_2d(np.asarray(self.upper, dtype=float)), 2)
        if lo.shape != hi.shape:
            raise ValueError("interval matrix bounds differ in shape")
        if np.any(lo > hi):
            raise ValueError("interval matrix lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.upper + self.lower)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def vertices(self, cap: int = 2**12):
        """Yield every vertex matrix; entries with zero width are not branched on."""
        free = np.flatnonzero(self.upper.ravel() > self.lower.ravel())
        if 2 ** free.size > cap:
            raise ValueError(f"interval matrix has 2^{free.size} vertices, cap is {cap}")
        base = self.lower.ravel().copy()
        hi = self.upper.ravel()
        for bits in itertools.product((0, 1), repeat=free.size):
            v = base.copy()
            sel = free[np.array(bits, dtype=bool)] if free.size else free
            v[sel] = hi[sel]
            yield v.reshape(self.lower.shape)


def matzono_interval_hull(m: MatrixZonotope) -> IntervalMatrix:
    rad = np.abs(m.generators).sum(axis=0)
    return IntervalMatrix(m.center - rad, m.center + rad)


def interval_frobenius(i: IntervalMatrix) -> float:
    return float(np.linalg.norm(np.abs(i.center) + i.radius, "fro"))


def matzono_apply(m: MatrixZonotope, v) -> Zonotope:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size != m.shape[1]:
        raise ValueError(f"vector has length {v.size}, matrix zonotope has {m.shape[1]} columns")
    return Zonotope(m.center @ v, (m.generators @ v).T)


@dataclass(frozen=True, eq=False)
class Ellipsoid:
    """``{x : (x - center)^T shape (x - center) <= level}``."""

    shape: np.ndarray
    center: np.ndarray
    level: float

    def __post_init__(self):
        P = _frozen(np.atleast_2d(np.asarray(self.shape, dtype=float)), 2)
        c = _frozen(np.atleast_1d(np.asarray(self.center, dtype=float)), 1)
        if P.shape != (c.size, c.size):
            raise ValueError("ellipsoid shape and center disagree in dimension")
        if np.max(np.abs(P - P.T)) > 1e-10:
            raise ValueError("ellipsoid shape matrix is not symmetric")
        if np.linalg.eigvalsh(P).min() <= 0:
            raise ValueError("ellipsoid shape matrix is not positive definite")
        if not self.level >= 0:
            raise ValueError("ellipsoid level must be nonnegative")
        object.__setattr__(self, "shape", P)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "level", float(self.level))

    @property
    def dim(self) -> int:
        return self.center.size

    def value(self, x) -> np.ndarray:
        d = np.atleast_2d(np.asarray(x, dtype=float)) - self.center
        return np.einsum("ki,ij,kj->k", d, self.shape, d)

    def boundary_points(self, n: int) -> np.ndarray:
        """``n`` boundary points at uniform angles in whitened coordinates (2-D only)."""
        if self.dim != 2:
            raise ValueError("boundary_points is implemented for 2-D ellipsoids")
        ang = 2 * np.pi * np.arange(n) / n
        circle = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        L = np.linalg.cholesky(self.shape)
        # x = c + sqrt(level) L^{-T} v  maps the unit circle onto the boundary
        return self.center + np.sqrt(self.level) * np.linalg.solve(L.T, circle.T).T

    def inner_polytope(self, n: int = 16) -> HPolytope:
        """Convex hull of ``n`` boundary points as halfspaces (2-D only)."""
        pts = self.boundary_points(n)
        if self.level == 0:
            return hpolytope_from_box(self.center, self.center)
        nxt = np.roll(pts, -1, axis=0)
        edge = nxt - pts
        normals = np.stack([edge[:, 1], -edge[:, 0]], axis=1)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return HPolytope(normals, np.einsum("ij,ij->i", normals, pts))
