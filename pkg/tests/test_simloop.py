import numpy as np
import pytest

from tzpc.ident import IntervalMatrix, ModelSet
from tzpc.ocp import OcpSpec
from tzpc.qp import OPTIMAL
from tzpc.setalg import (
    Ellipsoid,
    MatrixZonotope,
    Zonotope,
    contains_point,
    contains_points,
    hpolytope_from_box,
    interval_hull,
)
from tzpc.simloop import (
    Plant,
    decay_metrics,
    distance_to_zonotope,
    reachable_illustration,
    read_runlog_csv,
    run_closed_loop,
    sample_noise,
    step_plant,
    write_reach_csv,
    write_runlog_csv,
)
from tzpc.synth import NominalModel, SynthesisBundle, lqr_gain, terminal_level, tighten

A = np.array([[0.6, 0.2], [-0.1, 0.5]])
B = np.array([[0.1], [0.5]])
ZW1 = Zonotope([0.0, 0.0], [[0.02, 0.01], [0.01, 0.02]])
X = hpolytope_from_box([-1.0, -1.0], [1.0, 1.0])
U = hpolytope_from_box([-1.0], [1.0])


def exact_setup(s_half=0.0):
    """Bundle and spec around the exact model with a fixed tube."""
    K, P = lqr_gain(A, B, np.eye(2), 0.1 * np.eye(1))
    s = Zonotope([0.0, 0.0], s_half * np.eye(2) if s_half else None)
    x_tight, u_tight = tighten(X, U, s, K)
    alpha = terminal_level(P, [0.0, 0.0], K, x_tight, u_tight, [0.0])
    zero = Zonotope([0.0, 0.0])
    bundle = SynthesisBundle(NominalModel(A, B), K, P, zero, zero, zero, zero, s, 0.01, 1,
                             Ellipsoid(P, [0.0, 0.0], alpha), u_tight, x_tight, np.zeros(2), np.zeros(1))
    spec = OcpSpec.from_bundle(bundle, 8, np.eye(2), 0.1 * np.eye(1))
    return bundle, spec


def test_sample_noise_singleton_and_membership(rng):
    assert np.array_equal(sample_noise(Zonotope([0.3, -0.1]), rng), [0.3, -0.1])
    w = np.array([sample_noise(ZW1, rng) for _ in range(100_000)])
    assert contains_points(ZW1, w).all()


def test_sample_noise_coefficients_are_centered(rng):
    n = 100_000
    beta = np.array([sample_noise(Zonotope(np.zeros(3), np.eye(3)), rng) for _ in range(n)])
    sigma = np.sqrt(1.0 / 3.0) / np.sqrt(n)
    assert np.all(np.abs(beta.mean(axis=0)) <= 3 * sigma)


def test_step_plant_examples():
    p1 = Plant([[1.0, 1.0], [0.0, 1.0]], [[0.5], [1.0]], ZW1)
    np.testing.assert_array_equal(step_plant(p1, [-5.0, -2.0], [0.0], [0.0, 0.0]), [-7.0, -2.0])
    ident = Plant(np.eye(2), np.zeros((2, 1)), ZW1)
    np.testing.assert_array_equal(step_plant(ident, [1.5, -2.5], [3.0], [0.0, 0.0]), [1.5, -2.5])
    p2 = Plant([[0.055, 0.694], [0.043, 0.956]], [[0.208], [0.0]], Zonotope([0.0, 0.0]))
    xs = np.array([22.0, 21.37])
    np.testing.assert_allclose(step_plant(p2, xs, [28.62], [0.0, 0.0]), xs, atol=0.01)


def test_plant_shape_errors():
    with pytest.raises(ValueError):
        Plant(np.eye(2), np.ones((3, 1)), ZW1)
    with pytest.raises(ValueError):
        Plant(np.eye(3), np.ones((3, 1)), ZW1)


def test_zero_noise_run_at_setpoint_stays_put():
    bundle, spec = exact_setup()
    plant = Plant(A, B, Zonotope([0.0, 0.0]))
    log = run_closed_loop(plant, [0.0, 0.0], bundle, spec, 15, 0, X, U)
    assert log.all_optimal
    assert np.all(log.array("x") == 0.0)
    np.testing.assert_allclose(log.array("j_star"), 0.0, atol=1e-6)
    rep = decay_metrics(log, bundle, spec)
    assert rep.no_transient and np.isnan(rep.rate)


def test_zero_noise_run_decays():
    bundle, spec = exact_setup()
    plant = Plant(A, B, Zonotope([0.0, 0.0]))
    log = run_closed_loop(plant, [0.8, -0.7], bundle, spec, 30, 0, X, U)
    assert log.all_optimal
    rep = decay_metrics(log, bundle, spec)
    assert not rep.no_transient and rep.rate < 0
    assert np.all(rep.decrease_margins <= 1e-6)
    assert rep.max_tube_violation <= 1e-6


def test_reachable_sets_singleton_model():
    M = np.hstack([A, B])
    ms = ModelSet(MatrixZonotope(M, np.zeros((0, 2, 3))), IntervalMatrix(M, M), float(np.linalg.norm(M)))
    bundle, spec = exact_setup()
    log = run_closed_loop(Plant(A, B, Zonotope([0.0, 0.0])), [0.5, 0.5], bundle, spec, 5, 0, X, U)
    sets = reachable_illustration(ms, log, Zonotope([0.0, 0.0]))
    for r, z in zip(log.records, sets):
        assert z.order == 0
        np.testing.assert_allclose(z.center, A @ r.x + B @ r.u, atol=1e-15)


def test_reachable_sets_contain_true_successor(val_pipeline):
    ms, zw = val_pipeline.ms, val_pipeline.cfg.noise_zonotope()
    for seed in (0, 7):
        log = val_pipeline.logs[seed]
        sets = reachable_illustration(ms, log, zw)
        xs = log.array("x")
        for t in range(len(sets) - 1):
            assert contains_point(sets[t], xs[t + 1], tol=1e-9)
            lo, hi = interval_hull(sets[t])
            assert np.all(hi - lo > 0)


def test_runlog_csv_round_trip(tmp_path, val_pipeline):
    log = val_pipeline.logs[3]
    p = tmp_path / "run.csv"
    write_runlog_csv(log, p)
    back = read_runlog_csv(p)
    assert back.same_as(log)
    header = p.read_text().splitlines()[0]
    assert header == "t,x1,x2,xbar1,xbar2,u1,ubar1,j_star,status,solve_ms,slack_x,slack_u,slack_tube"
    write_reach_csv([], tmp_path / "reach.csv", dim=2)
    assert (tmp_path / "reach.csv").read_text() == "t,lo1,hi1,lo2,hi2\n"


def test_validation_runs_are_feasible_and_safe(val_pipeline):
    for seed, log in val_pipeline.logs.items():
        assert log.all_optimal and len(log) == val_pipeline.cfg.steps, seed
        assert log.array("slack_x").min() >= -1e-7
        assert log.array("slack_u").min() >= -1e-7
        assert log.array("slack_tube").min() >= -1e-7


def test_realized_disturbance_inside_phi(val_pipeline):
    b = val_pipeline.bundle
    count = 0
    for log in val_pipeline.logs.values():
        x, u = log.array("x"), log.array("u")
        phi = x[1:] - x[:-1] @ b.nominal.a_bar.T - u[:-1] @ b.nominal.b_bar.T
        assert contains_points(b.z_phi, phi, tol=1e-9).all()
        count += len(phi)
    assert count >= 1000


def test_validation_decay_and_tube(val_pipeline):
    cfg = val_pipeline.cfg
    from tzpc.pipeline import make_ocp_spec

    spec = make_ocp_spec(cfg, val_pipeline.bundle)
    for log in val_pipeline.logs.values():
        rep = decay_metrics(log, val_pipeline.bundle, spec)
        assert rep.rate < 0
        assert rep.max_tube_violation <= 1e-7
        assert np.all(rep.decrease_margins <= 1e-5)


def test_distance_to_zonotope():
    z = Zonotope([0.0, 0.0], np.eye(2))
    assert distance_to_zonotope(z, [0.5, 0.5]) == pytest.approx(0.0, abs=1e-12)
    assert distance_to_zonotope(z, [2.0, 1.0]) == pytest.approx(1.0, abs=1e-9)
    assert distance_to_zonotope(z, [4.0, 5.0]) == pytest.approx(5.0, abs=1e-9)


def test_run_aborts_when_infeasible():
    bundle, spec = exact_setup(0.05)
    plant = Plant(A, B, Zonotope([0.0, 0.0]))
    log = run_closed_loop(plant, [5.0, 5.0], bundle, spec, 10, 0, X, U)
    assert log.aborted and len(log) == 1 and log.records[0].status != OPTIMAL
