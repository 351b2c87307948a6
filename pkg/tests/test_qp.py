import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import active_set_qp, random_convex_qp
from tzpc.qp import INF, INFEASIBLE, OPTIMAL, QpProblem, QpSettings, kkt_residuals, solve_qp


def as_problem(P, q, G, h):
    return QpProblem(P, q, G, np.full(h.size, -INF), h)


def test_unconstrained_quadratic():
    # (z1-1)^2 + (z2-2)^2 = 0.5 z'(2I)z - [2,4]z + 5
    prob = QpProblem(2 * np.eye(2), [-2.0, -4.0], np.zeros((0, 2)), [], [], const=5.0)
    res = solve_qp(prob)
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, [1.0, 2.0], atol=1e-6)
    assert res.obj == pytest.approx(0.0, abs=1e-9)


def test_single_active_constraint():
    prob = QpProblem(2 * np.eye(2), [-2.0, -4.0], [[1.0, 0.0]], [-INF], [0.0], const=5.0)
    res = solve_qp(prob)
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, [0.0, 2.0], atol=1e-6)
    assert res.obj == pytest.approx(1.0, abs=1e-6)
    assert res.y[0] == pytest.approx(2.0, abs=1e-5)


def test_equality_and_box_rows():
    # min x'x s.t. x1 + x2 = 1, 0.8 <= x1 <= 2
    prob = QpProblem(2 * np.eye(2), np.zeros(2), [[1.0, 1.0], [1.0, 0.0]], [1.0, 0.8], [1.0, 2.0])
    res = solve_qp(prob)
    assert res.status == OPTIMAL
    np.testing.assert_allclose(res.x, [0.8, 0.2], atol=1e-6)


def test_infeasible_problem_is_certified():
    prob = QpProblem(np.eye(1), [0.0], [[1.0], [1.0]], [1.0, -INF], [INF, 0.0])
    assert solve_qp(prob).status == INFEASIBLE


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2), np.zeros((0, 2)), [], [])
    with pytest.raises(ValueError):
        QpProblem(-np.eye(2), np.zeros(2), np.zeros((0, 2)), [], [])
    with pytest.raises(ValueError):
        QpProblem(np.eye(1), [0.0], [[1.0]], [1.0], [0.0])


def test_solver_is_deterministic(rng):
    P, q, G, h = random_convex_qp(rng)
    a = solve_qp(as_problem(P, q, G, h))
    b = solve_qp(as_problem(P, q, G, h))
    assert a.x.tobytes() == b.x.tobytes() and a.iterations == b.iterations


def test_warm_start_reaches_same_point(rng):
    P, q, G, h = random_convex_qp(rng)
    prob = as_problem(P, q, G, h)
    cold = solve_qp(prob)
    warm = solve_qp(prob, x0=cold.x, y0=cold.y)
    assert warm.status == OPTIMAL
    np.testing.assert_allclose(warm.x, cold.x, atol=1e-5)
    assert warm.iterations <= cold.iterations


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_qps_against_active_set_oracle(seed):
    P, q, G, h = random_convex_qp(np.random.default_rng(seed))
    x_ref, _, _ = active_set_qp(P, q, G, h)
    prob = as_problem(P, q, G, h)
    res = solve_qp(prob, QpSettings())
    assert res.status == OPTIMAL
    j_ref = prob.objective(x_ref)
    assert abs(res.obj - j_ref) <= 1e-6 * (1 + abs(j_ref))
    kkt = kkt_residuals(prob, res.x, res.y)
    assert max(kkt.values()) <= 1e-5, kkt


def test_active_set_oracle_self_check():
    x, lam, act = active_set_qp(2 * np.eye(2), [-2.0, -4.0], np.array([[1.0, 0.0]]), np.array([0.0]))
    np.testing.assert_allclose(x, [0.0, 2.0])
    assert act == [0] and lam[0] == pytest.approx(2.0)
