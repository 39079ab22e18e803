import io
import json
import math

import numpy as np
import pytest
from scipy import integrate

from fdadegrade.simulation import (
    ExperimentConfig,
    failure_time,
    latent_failure_time,
    model_spec,
    relative_error,
    run_experiment,
    simulate_signal,
    standardized_draws,
    validation_units,
)


def test_noise_free_mean_signal():
    spec = model_spec(1, sigma=0.0)
    sim = simulate_signal(spec, np.random.default_rng(0), scores=[0.0])
    np.testing.assert_allclose(sim.signal.values, 30 * spec.grid**2, atol=1e-12)
    assert sim.signal.times.size == 51


def _endpoint_draws(model_id, n=10_000, seed=1):
    spec = model_spec(model_id)
    rng = np.random.default_rng(seed)
    return np.array([simulate_signal(spec, rng, [1.0]).signal.values[0] for _ in range(n)])


def test_model1_endpoint_variance():
    # 5 * 45/4 + 1
    assert np.var(_endpoint_draws(1), ddof=1) == pytest.approx(57.25, abs=2)


def test_model2_endpoint_covariance():
    # 9 * 4 + 2.25 * (sqrt(80) / 4)^2, noise excluded
    spec = model_spec(2, sigma=0.0)
    rng = np.random.default_rng(2)
    v = np.array([simulate_signal(spec, rng, [1.0]).signal.values[0] for _ in range(10_000)])
    assert np.var(v, ddof=1) == pytest.approx(47.25, abs=2)
    assert float(spec.covariance([1.0], [1.0])[0, 0]) == pytest.approx(47.25, rel=1e-12)


@pytest.mark.parametrize("model_id", [1, 2, 3])
def test_components_orthonormal(model_id):
    spec = model_spec(model_id)
    K = len(spec.eigenvalues)
    for j in range(K):
        for k in range(K):
            val, _ = integrate.quad(lambda t: spec.components_at([t])[0, j]
                                    * spec.components_at([t])[0, k], 0, 1)
            assert val == pytest.approx(float(j == k), abs=1e-6)


def test_model3_mean():
    spec = model_spec(3)
    t = np.array([0.125, 0.5])
    np.testing.assert_allclose(spec.mean_at(t), 30 * t**2 - 2 * np.sin(4 * np.pi * t), atol=1e-12)


def test_invalid_model():
    with pytest.raises(ValueError, match="1, 2 or 3"):
        model_spec(4)
    with pytest.raises(ValueError):
        ExperimentConfig(model_id=0)


@pytest.mark.parametrize("dist", ["normal", "gamma", "t"])
def test_standardized(dist):
    z = standardized_draws(np.random.default_rng(3), dist, 200_000)
    assert abs(z.mean()) < 0.02
    assert z.var() == pytest.approx(1, abs=0.05)


def test_failure_time():
    g = model_spec(1).grid
    assert failure_time(g, np.full(51, 11.0), 10) == 0.0
    assert failure_time(g, 30 * g**2, 10) == pytest.approx(0.58)
    assert failure_time(g, np.full(51, 9.0), 10) is None


def test_latent_failure_time():
    spec = model_spec(1)
    assert latent_failure_time(spec, [0.0]) == pytest.approx(1 / math.sqrt(3), abs=1e-12)
    xi = 2.0
    want = math.sqrt(10 / (30 + xi * math.sqrt(5)))
    assert latent_failure_time(spec, [xi]) == pytest.approx(want, abs=1e-12)
    assert latent_failure_time(spec, [-13.0]) is None


@pytest.mark.parametrize("est, act, want", [(11, 10, 0.1), (10, 10, 0.0), (0, 10, 1.0)])
def test_relative_error(est, act, want):
    assert relative_error(est, act) == pytest.approx(want)


def test_relative_error_needs_positive_life():
    with pytest.raises(ValueError):
        relative_error(1, 0)


def test_validation_units_fail_within_horizon():
    cfg = ExperimentConfig(n_valid=50)
    units = validation_units(cfg, np.random.default_rng(0))
    assert 0 < len(units) <= 50
    assert all(0 < T <= 1 for _, _, T in units)


SMALL = dict(replications=2, n_train=40, n_valid=8, n_bootstrap=100, percentiles=(0.3, 0.6, 0.9))


def test_experiment_deterministic():
    cfg = ExperimentConfig(seed=5, **SMALL)
    a, b = run_experiment(cfg), run_experiment(cfg)
    np.testing.assert_array_equal(a.median_error["fpca"], b.median_error["fpca"])
    np.testing.assert_array_equal(a.coverage["fpca"], b.coverage["fpca"])
    c = run_experiment(ExperimentConfig(seed=6, **SMALL))
    assert not np.array_equal(a.median_error["fpca"], c.median_error["fpca"])


def test_experiment_thread_independent():
    cfg = ExperimentConfig(seed=5, **SMALL)
    a, b = run_experiment(cfg, threads=1), run_experiment(cfg, threads=2)
    np.testing.assert_array_equal(a.median_error["fpca"], b.median_error["fpca"])


def test_table_and_manifest():
    cfg = ExperimentConfig(seed=5, scenario="fragmented", methods=("fpca", "baseline"), **SMALL)
    res = run_experiment(cfg)
    buf = io.StringIO()
    res.write_table(buf)
    lines = buf.getvalue().splitlines()
    head = lines[0].split(",")
    assert head[:6] == ["percentile", "replication", "scenario", "sampling", "median_error",
                        "coverage"]
    assert len(lines) == 1 + 2 * 3 * 2
    man = json.loads(json.dumps(res.manifest()))
    assert man["config"]["seed"] == 5
    assert man["distributions"] == {"gamma_shape": 2.0, "t_df": 5.0}
    assert len(man["summary"]["baseline"]["median_error"]) == 3
    assert res.summary().shape == (3,)
    jbuf = io.StringIO()
    res.write_table(jbuf, "json")
    assert len(json.loads(jbuf.getvalue())) == 12
