import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import grid_image, grid_membership, zonotope_hull_facets_2d, zonotope_vertices_2d
from tzpc.setalg import (
    Ellipsoid,
    HPolytope,
    IntervalMatrix,
    MatrixZonotope,
    Zonotope,
    cartesian_product,
    contains_point,
    contains_points,
    hpolytope_from_box,
    interval_frobenius,
    interval_hull,
    linear_map,
    matzono_apply,
    matzono_interval_hull,
    merge_parallel,
    minkowski_sum,
    negate,
    pontryagin_diff,
    support,
    support_many,
    to_hpolytope,
    zonotope_from_interval,
    zonotope_subset,
)

ZW1 = Zonotope([0.0, 0.0], [[0.02, 0.01], [0.01, 0.02]])
X1 = Zonotope([-3.5, 0.0], [[4.0, 0.0], [0.0, 2.0]])

finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)


@st.composite
def zonotopes_2d(draw, min_gen=1, max_gen=4):
    g = draw(st.integers(min_gen, max_gen))
    c = draw(arrays(float, 2, elements=finite))
    G = draw(arrays(float, (2, g), elements=finite))
    return Zonotope(c, G)


@st.composite
def full_dim_zonotopes_2d(draw, max_gen=4):
    z = draw(zonotopes_2d(min_gen=2, max_gen=max_gen))
    s = np.linalg.svd(z.generators, compute_uv=False)
    if s[-1] < 1e-2 * max(1.0, s[0]):
        z = Zonotope(z.center, np.hstack([z.generators, np.eye(2)]))
    return z


# -- basic operations ---------------------------------------------------------

def test_minkowski_sum_layout():
    a = Zonotope([1, 0], [[1, 0], [0, 1]])
    b = Zonotope([0, 1], [[2], [0]])
    s = minkowski_sum(a, b)
    assert s == Zonotope([1, 1], [[1, 0, 2], [0, 1, 0]])


def test_minkowski_sum_with_singleton_is_identity():
    z = Zonotope([1.0, -2.0], [[1.0, 0.3], [0.2, 1.0]])
    assert minkowski_sum(z, Zonotope([0.0, 0.0])) == z


def test_minkowski_sum_dimension_mismatch():
    with pytest.raises(ValueError):
        minkowski_sum(Zonotope([0.0]), Zonotope([0.0, 0.0]))


def test_minkowski_sum_sampled(rng):
    a = Zonotope([1.0, 0.5], [[1.0, 0.2, -0.4], [0.0, 0.7, 0.3]])
    b = Zonotope([-0.5, 2.0], [[0.3, 0.0], [0.1, 0.9]])
    s = minkowski_sum(a, b)
    pts = a.sample(rng, 1000) + b.sample(rng, 1000)
    assert contains_points(s, pts).all()


def test_negate_examples(rng):
    G = np.array([[1.0, 0.5], [0.0, 2.0]])
    z = Zonotope([1.0, 2.0], G)
    n = negate(z)
    assert np.array_equal(n.center, [-1.0, -2.0])
    assert np.array_equal(n.generators, G)
    assert negate(n) == z
    assert contains_points(n, -z.sample(rng, 1000)).all()


def test_linear_map_examples(rng):
    z = Zonotope([1.0, 1.0], np.eye(2))
    assert linear_map(np.eye(2), z) == z
    assert linear_map([[2, 0], [0, 3]], z) == Zonotope([2, 3], [[2, 0], [0, 3]])
    L = np.array([[0.3, -1.2], [0.8, 0.4]])
    assert contains_points(linear_map(L, z), z.sample(rng, 1000) @ L.T).all()
    with pytest.raises(ValueError):
        linear_map(np.eye(3), z)


def test_cartesian_product_examples():
    p = cartesian_product(Zonotope([1], [[2]]), Zonotope([3], [[4]]))
    assert p == Zonotope([1, 3], [[2, 0], [0, 4]])
    q = cartesian_product(Zonotope([0.0, 1.0], np.eye(2)), Zonotope([5.0]))
    assert np.array_equal(q.center, [0.0, 1.0, 5.0])
    assert q.order == 2 and np.all(q.generators[2] == 0)
    a, b = Zonotope(np.zeros(2), np.ones((2, 3))), Zonotope(np.zeros(1), np.ones((1, 2)))
    r = cartesian_product(a, b)
    assert r.dim == 3 and r.order == 5


def test_interval_hull_examples(rng):
    lo, hi = interval_hull(ZW1)
    np.testing.assert_allclose(lo, [-0.03, -0.03], atol=1e-15)
    np.testing.assert_allclose(hi, [0.03, 0.03], atol=1e-15)
    lo, hi = interval_hull(Zonotope([2.0, 3.0]))
    assert np.array_equal(lo, [2.0, 3.0]) and np.array_equal(hi, [2.0, 3.0])
    z = Zonotope([0.4, -1.0], [[1.0, -0.3, 0.2], [0.5, 0.8, -0.1]])
    lo, hi = interval_hull(z)
    pts = z.sample(rng, 10_000)
    assert np.all(pts >= lo - 1e-12) and np.all(pts <= hi + 1e-12)


def test_zonotope_from_interval_examples():
    assert zonotope_from_interval([-1, 0], [1, 4]) == Zonotope([0, 2], [[1, 0], [0, 2]])
    z = zonotope_from_interval([2.0], [2.0])
    assert z.order == 0 and np.array_equal(z.center, [2.0])
    lo, hi = interval_hull(zonotope_from_interval([-1.5, 0.25], [2.0, 0.75]))
    assert np.array_equal(lo, [-1.5, 0.25]) and np.array_equal(hi, [2.0, 0.75])
    with pytest.raises(ValueError):
        zonotope_from_interval([1.0], [0.0])


def test_support_examples(rng):
    assert support(X1, [1.0, 0.0]) == pytest.approx(0.5, abs=1e-15)
    assert support(X1, [0.0, 0.0]) == 0.0
    z = Zonotope([0.2, -0.1], [[1.0, 0.4, -0.6], [0.3, -0.9, 0.2]])
    d = np.array([0.7, -0.4])
    pts = z.sample(rng, 1000)
    h = support(z, d)
    assert np.all(pts @ d <= h + 1e-12)
    assert (pts @ d).max() > h - 0.2 * np.abs(d @ z.generators).sum()


@settings(max_examples=60, deadline=None)
@given(zonotopes_2d(), arrays(float, 2, elements=finite), arrays(float, 2, elements=finite),
       st.floats(0.01, 10.0))
def test_support_sublinear_and_homogeneous(z, d1, d2, lam):
    assert support(z, d1 + d2) <= support(z, d1) + support(z, d2) + 1e-9
    assert support(z, lam * d1) == pytest.approx(lam * support(z, d1), abs=1e-9 * (1 + lam))


# -- H-representation and membership -------------------------------------------

def test_to_hpolytope_box():
    h = to_hpolytope(Zonotope([0, 0], np.diag([1.0, 2.0])))
    assert h.n_facets == 4
    rows = {tuple(np.round(n, 12)) + (round(b, 12),) for n, b in zip(h.normals, h.offsets)}
    assert rows == {(1.0, 0.0, 1.0), (-1.0, 0.0, 1.0), (0.0, 1.0, 2.0), (0.0, -1.0, 2.0)}


def test_to_hpolytope_generic_facet_count():
    z = Zonotope([0.0, 0.0], [[1.0, 0.0, 1.0, 0.5], [0.0, 1.0, 1.0, -0.7]])
    assert to_hpolytope(z).n_facets == 8


def test_to_hpolytope_sampled(rng):
    z = Zonotope([0.5, -0.2], [[1.0, 0.3, -0.5], [0.2, 0.9, 0.4]])
    h = to_hpolytope(z)
    assert contains_points(h, z.sample(rng, 1000)).all()
    np.testing.assert_allclose(h.offsets, support_many(z, h.normals), atol=1e-12)
    # points pushed 1 % beyond each facet are rejected
    verts = z.vertices_2d()
    for n, b in zip(h.normals, h.offsets):
        on = verts[np.abs(verts @ n - b) < 1e-9]
        mid = on.mean(axis=0)
        out = z.center + 1.01 * (mid - z.center)
        assert not contains_point(h, out)


@settings(max_examples=40, deadline=None)
@given(full_dim_zonotopes_2d())
def test_to_hpolytope_matches_convex_hull(z):
    verts = zonotope_vertices_2d(z.center, z.generators)
    h = to_hpolytope(z)
    scale = 1 + np.abs(verts).max()
    # every hull vertex is inside and every halfspace touches the hull
    assert contains_points(h, verts, tol=1e-9 * scale).all()
    np.testing.assert_allclose((verts @ h.normals.T).max(axis=0), h.offsets, atol=1e-9 * scale)
    # every hull facet of non-negligible length is one of the halfspaces
    N, b = zonotope_hull_facets_2d(z.center, z.generators)
    for n, off in zip(N, b):
        on = verts[np.abs(verts @ n - off) < 1e-9 * scale]
        if len(on) < 2 or np.ptp(on, axis=0).max() < 1e-9 * scale:
            continue
        j = np.argmax(h.normals @ n)
        assert h.normals[j] @ n == pytest.approx(1.0, abs=1e-7)
        assert h.offsets[j] == pytest.approx(off, abs=1e-7 * scale)


def test_to_hpolytope_flat_and_3d(rng):
    flat = Zonotope([1.0, 2.0], [[0.043], [0.001]])
    h = to_hpolytope(flat)
    assert contains_point(h, [1.0 + 0.043 * 0.3, 2.0 + 0.001 * 0.3])
    assert not contains_point(h, [1.0, 2.0 + 1e-3])
    z3 = Zonotope([0.0, 0.0, 0.0], rng.normal(size=(3, 5)))
    assert contains_points(z3, z3.sample(rng, 500)).all()
    with pytest.raises(ValueError):
        to_hpolytope(Zonotope(np.zeros(4), np.eye(4)))


def test_pontryagin_example():
    X = hpolytope_from_box([-7.5, -2.0], [0.5, 2.0])
    S = Zonotope([-0.038, -0.036], np.diag([0.252, 0.233]))
    r = pontryagin_diff(X, S)
    lo = -r.offsets[2:]
    hi = r.offsets[:2]
    np.testing.assert_allclose(hi, [0.286, 1.803], atol=1e-12)
    np.testing.assert_allclose(lo, [-7.21, -1.731], atol=1e-12)


def test_pontryagin_identity_and_sampled(rng):
    p = to_hpolytope(Zonotope([0.0, 0.0], [[2.0, 0.5, 0.0], [0.0, 1.0, 1.5]]))
    same = pontryagin_diff(p, Zonotope([0.0, 0.0]))
    assert np.array_equal(same.offsets, p.offsets)
    s = Zonotope([0.1, -0.1], [[0.3, 0.1], [0.0, 0.2]])
    r = pontryagin_diff(p, s)
    # rejection-sample the result from its bounding box
    cand = rng.uniform(-4, 4, size=(40_000, 2))
    xs = cand[contains_points(r, cand, tol=0.0)][:1000]
    assert len(xs) == 1000
    ss = s.sample(rng, 1000)
    assert contains_points(p, xs + ss).all()


def test_contains_point_basic():
    z = Zonotope([0.3, -0.4], [[1.0, 0.2], [0.1, 0.6]])
    assert contains_point(z, z.center)
    lo, hi = interval_hull(z)
    assert not contains_point(z, hi + 0.01)


@settings(max_examples=25, deadline=None)
@given(zonotopes_2d(max_gen=4), st.integers(0, 2**31 - 1))
def test_contains_point_agrees_with_grid_oracle(z, seed):
    rng = np.random.default_rng(seed)
    steps = 9 if z.order == 4 else 15
    inside = grid_image(z.center, z.generators, steps)[rng.integers(0, steps ** z.order, 10)]
    lo, hi = interval_hull(z)
    pad = 0.2 * (hi - lo) + 0.1
    probes = np.vstack([inside, rng.uniform(lo - pad, hi + pad, size=(30, 2))])
    for x in probes:
        verdict = grid_membership(z.center, z.generators, x, steps)
        if verdict is None:
            continue
        assert contains_point(z, x, tol=1e-9) == verdict


def test_zonotope_subset_examples(rng):
    z = Zonotope([1.0, -1.0], [[1.0, 0.4, -0.3], [0.2, 0.7, 0.5]])
    c = z.center
    assert zonotope_subset(z, z)
    half = Zonotope(c, 0.5 * z.generators)
    double = Zonotope(c, 2.0 * z.generators)
    assert zonotope_subset(half, z)
    assert not zonotope_subset(double, z)


@settings(max_examples=40, deadline=None)
@given(full_dim_zonotopes_2d(max_gen=3), full_dim_zonotopes_2d(max_gen=3), st.integers(0, 2**31 - 1))
def test_zonotope_subset_vs_sampling(inner, outer, seed):
    rng = np.random.default_rng(seed)
    inner = Zonotope(outer.center + 0.1 * (inner.center - outer.center), 0.3 * inner.generators)
    if zonotope_subset(inner, outer):
        assert contains_points(outer, inner.sample(rng, 1000), tol=1e-9).all()
        # vertices too
        assert contains_points(outer, inner.vertices_2d(), tol=1e-9).all()
    else:
        assert not contains_points(outer, inner.vertices_2d(), tol=1e-9).all()


@settings(max_examples=40, deadline=None)
@given(zonotopes_2d(max_gen=5), arrays(float, (6, 2), elements=finite))
def test_merge_parallel_keeps_the_set(z, dirs):
    G = z.generators
    dup = Zonotope(z.center, np.hstack([G, -0.5 * G, np.zeros((2, 1))]))
    m = merge_parallel(dup)
    assert m.order <= z.order
    np.testing.assert_allclose(support_many(m, dirs), support_many(dup, dirs), atol=1e-9)


# -- matrix sets ------------------------------------------------------------------

def test_matzono_interval_hull_examples(rng):
    C = np.array([[1.0, 2.0], [3.0, 4.0]])
    i0 = matzono_interval_hull(MatrixZonotope(C, np.zeros((0, 2, 2))))
    assert np.array_equal(i0.lower, C) and np.array_equal(i0.upper, C)
    G1 = np.array([[0.5, -0.2], [0.0, 0.1]])
    i1 = matzono_interval_hull(MatrixZonotope(C, G1[None]))
    assert np.array_equal(i1.lower, C - np.abs(G1)) and np.array_equal(i1.upper, C + np.abs(G1))
    Gs = rng.normal(size=(4, 2, 3))
    m = MatrixZonotope(rng.normal(size=(2, 3)), Gs)
    ih = matzono_interval_hull(m)
    for signs in np.array(np.meshgrid(*[[-1, 1]] * 4)).reshape(4, -1).T:
        V = m.center + np.tensordot(signs, Gs, axes=1)
        assert np.all(V >= ih.lower - 1e-12) and np.all(V <= ih.upper + 1e-12)


def test_interval_frobenius_examples():
    M = np.array([[1.0, -2.0], [0.5, 3.0]])
    assert interval_frobenius(IntervalMatrix(M, M)) == pytest.approx(np.linalg.norm(M))
    assert interval_frobenius(IntervalMatrix([[-1], [-1]], [[1], [1]])) == pytest.approx(np.sqrt(2))
    I = IntervalMatrix([[0.0, -3.0]], [[2.0, -1.0]])
    # |center| + radius = [1+1, 2+1]
    assert interval_frobenius(I) == pytest.approx(np.hypot(2.0, 3.0))


def test_interval_matrix_vertices():
    I = IntervalMatrix([[0.0, 1.0]], [[1.0, 1.0]])
    vs = list(I.vertices())
    assert len(vs) == 2
    with pytest.raises(ValueError):
        IntervalMatrix([[1.0]], [[0.0]])


def test_matzono_apply_examples(rng):
    C = np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 3.0]])
    z = matzono_apply(MatrixZonotope(C, np.zeros((0, 2, 3))), [1.0, 1.0, 1.0])
    assert z.order == 0 and np.array_equal(z.center, [3.0, 4.0])
    Gs = 0.1 * rng.normal(size=(3, 2, 3))
    m = MatrixZonotope(C, Gs)
    z0 = matzono_apply(m, np.zeros(3))
    assert np.all(z0.center == 0) and np.all(z0.generators == 0)
    v = np.array([0.4, -1.0, 2.0])
    zv = matzono_apply(m, v)
    assert contains_points(zv, m.sample(rng, 500) @ v, tol=1e-9).all()
    with pytest.raises(ValueError):
        matzono_apply(m, np.zeros(2))


def test_matrix_zonotope_contains(rng):
    C = np.array([[1.0, 1.0, 0.5], [0.0, 1.0, 1.0]])
    Gs = 0.1 * rng.normal(size=(6, 2, 3))
    m = MatrixZonotope(C, Gs)
    assert all(m.contains(M) for M in m.sample(rng, 20))
    assert not m.contains(C + 10.0)


# -- ellipsoids and polytopes ---------------------------------------------------

def test_ellipsoid_inner_polytope_inside():
    E = Ellipsoid(np.array([[0.895, 0.492], [0.492, 3.709]]), [0.0, 0.0], 0.068)
    poly = E.inner_polytope(16)
    pts = E.boundary_points(16)
    np.testing.assert_allclose(E.value(pts), 0.068, rtol=1e-12)
    # polygon vertices are on the ellipse, so the polygon lies inside it
    assert contains_points(poly, pts, tol=1e-12).all()
    with pytest.raises(ValueError):
        Ellipsoid(np.array([[1.0, 0.0], [0.0, -1.0]]), [0.0, 0.0], 1.0)


def test_hpolytope_emptiness_and_radius():
    box = hpolytope_from_box([-1.0, -2.0], [1.0, 2.0])
    assert not box.is_empty()
    assert box.chebyshev_radius() == pytest.approx(1.0)
    empty = HPolytope([[1.0], [-1.0]], [0.0, -1.0])
    assert empty.is_empty()


def test_operations_are_deterministic():
    z = Zonotope([0.1, 0.2], [[1.0, 0.3, -0.2], [0.4, 0.5, 0.9]])
    h1, h2 = to_hpolytope(z), to_hpolytope(z)
    assert h1.normals.tobytes() == h2.normals.tobytes()
    assert h1.offsets.tobytes() == h2.offsets.tobytes()
