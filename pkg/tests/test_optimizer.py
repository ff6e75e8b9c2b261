import numpy as np
import pytest
from scipy import stats

from poisson_sgd.objectives import double_well_1d, double_well_2d, quadratic_bowl
from poisson_sgd.optimizer import (
    PoissonSgdConfig,
    poisson_sgd_step,
    reflect,
    run_poisson_sgd,
    run_poisson_sgd_ensemble,
    _initial_state,
)
from poisson_sgd.sampler import RngStream, uniform_sphere


def test_reflect_hand_examples():
    # v=(1,0), g=(1,1): component along g flips -> (0,-1)
    out = reflect(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    assert np.allclose(out, [0.0, -1.0])
    # v=(1,0), g=(3,4): v - 2(3/25)(3,4) = (7/25, -24/25)
    out = reflect(np.array([1.0, 0.0]), np.array([3.0, 4.0]))
    assert np.allclose(out, [7.0 / 25.0, -24.0 / 25.0])
    # gradient orthogonal to v leaves only a sign flip along g
    out = reflect(np.array([1.0, 0.0]), np.array([0.0, 2.0]))
    assert np.allclose(out, [1.0, 0.0])


def test_reflect_zero_gradient_noop():
    v = np.array([0.6, 0.8])
    assert np.array_equal(reflect(v, np.zeros(2)), v)
    assert np.array_equal(reflect(v, np.full(2, 1e-13)), v)


def test_reflect_batched_mixed_defined():
    v = np.array([[1.0, 0.0], [0.0, 1.0]])
    g = np.array([[1.0, 1.0], [0.0, 0.0]])  # second gradient vanishes
    out = reflect(v, g)
    assert np.allclose(out[0], [0.0, -1.0])
    assert np.array_equal(out[1], v[1])


def test_reflect_algebra_random():
    rng = RngStream(1)
    gen = rng.generator
    for d in (2, 3, 7):
        v = uniform_sphere(d, rng, 2000)
        g = gen.standard_normal((2000, d))
        r = reflect(v, g)
        # involution
        assert np.max(np.abs(reflect(r, g) - v)) < 1e-12
        # norm preservation
        assert np.max(np.abs(np.linalg.norm(r, axis=1) - 1.0)) < 1e-12
        # <Rv, g> = -<v, g>
        lhs = np.einsum("ij,ij->i", r, g)
        rhs = -np.einsum("ij,ij->i", v, g)
        assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_config_validation_and_derived_constants():
    cfg = PoissonSgdConfig(beta=0.5, epsilon=0.25, n_steps=10)
    assert cfg.c_p == 4.0
    assert cfg.ceiling(10.0) == 0.5 * 10.0 + 4.0
    with pytest.raises(ValueError):
        PoissonSgdConfig(beta=-0.1, epsilon=0.5, n_steps=1)
    with pytest.raises(ValueError):
        PoissonSgdConfig(beta=0.1, epsilon=0.0, n_steps=1)
    with pytest.raises(ValueError):
        PoissonSgdConfig(beta=0.1, epsilon=0.5, n_steps=-1)


def test_single_step_order_of_operations():
    # with beta=0 the step length is independent of the field, so the new
    # point is exactly wrap(theta + eta * v) with the OLD velocity
    obj = quadratic_bowl([[2.0, 7.0]], side_lengths=10.0)
    cfg = PoissonSgdConfig(beta=0.0, epsilon=0.5, n_steps=1, seed=9)
    state = _initial_state(obj, cfg.initial_point, cfg.initial_velocity, cfg.seed)
    theta0 = state.theta.copy()
    v0 = state.velocity.copy()
    poisson_sgd_step(state, obj, cfg)
    expect = obj.domain.wrap(theta0 + state.last_eta * v0)
    assert np.allclose(state.theta, expect)
    # velocity reflected about the gradient at the NEW point
    g = obj.grad(state.theta)
    assert np.allclose(state.velocity, reflect(v0, g))


def test_run_keeps_stride_and_final(tmp_path):
    obj = double_well_1d()
    cfg = PoissonSgdConfig(
        beta=0.01, epsilon=0.5, n_steps=25, seed=3, record_stride=10
    )
    rec = run_poisson_sgd(obj, cfg)
    assert rec.column("k").tolist() == [10, 20, 25]
    assert rec.column("risk").shape == (3,)
    assert np.all(rec.column("eta") > 0.0)
    assert rec.max_norm_deviation < 1e-9

    cfg0 = PoissonSgdConfig(beta=0.01, epsilon=0.5, n_steps=0, seed=3)
    rec0 = run_poisson_sgd(obj, cfg0)
    assert rec0.column("k").tolist() == [0]
    assert np.allclose(rec0.final_theta(), _initial_state(obj, None, None, 3).theta)


def test_replay_byte_identical(tmp_path):
    obj = double_well_2d()
    cfg = PoissonSgdConfig(beta=0.003, epsilon=0.2, n_steps=150, seed=11, batch_size=0)
    pa, pb = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
    run_poisson_sgd(obj, cfg).to_ndjson(pa)
    run_poisson_sgd(obj, cfg).to_ndjson(pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_minibatch_recorded_and_distinct():
    obj = quadratic_bowl(np.arange(20, dtype=float).reshape(10, 2), side_lengths=25.0)
    cfg = PoissonSgdConfig(beta=0.05, epsilon=0.5, n_steps=30, seed=5, batch_size=4)
    rec = run_poisson_sgd(obj, cfg)
    for row in rec.rows:
        batch = row["batch"]
        assert len(batch) == 4
        assert len(set(batch)) == 4
        assert sorted(batch) == list(batch)


def test_batch_size_zero_means_full_batch():
    obj = quadratic_bowl(np.arange(10, dtype=float).reshape(5, 2), side_lengths=25.0)
    cfg = PoissonSgdConfig(beta=0.05, epsilon=0.5, n_steps=10, seed=5, batch_size=0)
    rec = run_poisson_sgd(obj, cfg)
    assert all("batch" not in row for row in rec.rows)
    with pytest.raises(ValueError):
        bad = PoissonSgdConfig(beta=0.05, epsilon=0.5, n_steps=1, seed=5, batch_size=6)
        run_poisson_sgd(obj, bad)


def test_ensemble_beta_zero_etas_are_exponential():
    obj = quadratic_bowl([[5.0]], side_lengths=10.0)
    cfg = PoissonSgdConfig(beta=0.0, epsilon=0.5, n_steps=40, seed=7)
    res = run_poisson_sgd_ensemble(obj, cfg, 600, rng=RngStream(7))
    # mean eta over all steps and chains should match 1/C_P = 0.5
    assert abs(res.mean_eta - 0.5) < 5 * 0.5 / np.sqrt(600 * 40)


def test_ensemble_snapshots_and_replay():
    obj = double_well_1d()
    cfg = PoissonSgdConfig(beta=0.005, epsilon=0.5, n_steps=60, seed=13)
    kw = dict(snapshot_steps=(0, 30, 60))
    a = run_poisson_sgd_ensemble(obj, cfg, 50, rng=RngStream(13), **kw)
    b = run_poisson_sgd_ensemble(obj, cfg, 50, rng=RngStream(13), **kw)
    assert sorted(a.snapshots) == [0, 30, 60]
    for k in a.snapshots:
        assert np.array_equal(a.snapshots[k], b.snapshots[k])
    assert np.array_equal(a.thetas, b.thetas)
    assert np.array_equal(a.velocities, b.velocities)
    assert a.max_norm_deviation < 1e-9


def test_ensemble_initial_points_respected():
    obj = double_well_1d()
    cfg = PoissonSgdConfig(beta=0.005, epsilon=0.5, n_steps=0, seed=1)
    inits = np.linspace(0.5, 15.5, 8)[:, None]
    res = run_poisson_sgd_ensemble(obj, cfg, 8, rng=RngStream(1), initial_points=inits)
    assert np.allclose(res.thetas, inits)


def test_ensemble_velocities_stay_unit():
    obj = double_well_2d()
    cfg = PoissonSgdConfig(beta=0.01, epsilon=0.1, n_steps=300, seed=2)
    res = run_poisson_sgd_ensemble(obj, cfg, 40, rng=RngStream(2))
    assert np.max(np.abs(np.linalg.norm(res.velocities, axis=1) - 1.0)) < 1e-12
    assert res.max_norm_deviation < 1e-9


def test_mean_eta_bounded_by_inverse_floor():
    # rate >= C_P pointwise, so eta is stochastically dominated by Exp(C_P)
    obj = double_well_2d()
    cfg = PoissonSgdConfig(beta=0.02, epsilon=0.1, n_steps=200, seed=3)
    res = run_poisson_sgd_ensemble(obj, cfg, 50, rng=RngStream(3))
    n_draws = 200 * 50
    se = (1.0 / cfg.c_p) / np.sqrt(n_draws)
    assert res.mean_eta <= 1.0 / cfg.c_p + 3 * se
