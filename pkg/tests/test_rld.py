import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import true_model
from fdadegrade.bayes import posterior_mean_curve, prior_state, update_posterior
from fdadegrade.exceptions import AlreadyFailedError, DegenerateVarianceError, DomainError, FitError
from fdadegrade.fpca import FpcaModel
from fdadegrade.rld import (
    RldQuery,
    bootstrap_residual_life,
    confidence_interval,
    mean_crossing,
    point_estimate,
    predict_residual_life,
    rld_cdf,
)
from fdadegrade.signals import DegradationSignal
from fdadegrade.smoothing import uniform_grid

T_C = 1 / math.sqrt(3)  # 30 t^2 = 10


def flat_variance_state(variance, grid_size=1001, mean=lambda t: 30 * t**2, t_star=0.0):
    """Prior state with a given mean and constant ``V*`` (one flat component)."""
    grid = uniform_grid(1.0, grid_size)
    model = FpcaModel(grid, mean(grid), [variance], np.ones((1, grid_size)), 1.0)
    return prior_state(model, t_star)


def test_cdf_zero_at_zero():
    state = update_posterior(true_model(1), DegradationSignal("u", [0.3], [3.0]))
    q = RldQuery(10.0, 0.3, 1.0)
    assert rld_cdf(state, q, 0.0) == 0.0
    assert rld_cdf(state, q, np.array([0.0, 0.1]))[0] == 0.0


def test_cdf_near_deterministic_jump():
    state = flat_variance_state(1e-8, t_star=0.4)
    q = RldQuery(10.0, 0.4, 1.0)
    y_c = T_C - 0.4
    assert abs(y_c - 0.1774) < 1e-3
    assert rld_cdf(state, q, y_c - 0.001) < 0.01
    assert rld_cdf(state, q, y_c + 0.001) > 0.99


@given(st.integers(0, 2**32 - 1))
def test_cdf_monotone_for_monotone_mean(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(0, 20), rng.uniform(0, 40), rng.uniform(-5, 5)
    D = c + rng.uniform(0.5, 0.9) * (a + b)
    state = flat_variance_state(rng.uniform(0.01, 5), 201, lambda t: c + a * t + b * t**2)
    q = RldQuery(D, 0.0, 1.0)
    try:
        R = rld_cdf(state, q, np.linspace(0, 1, 500))
    except AlreadyFailedError:
        return
    assert np.all(np.diff(R) >= -1e-15)
    assert R.min() >= 0 and R.max() <= 1


def test_cdf_domain_and_degenerate():
    state = flat_variance_state(1.0, t_star=0.2)
    q = RldQuery(10.0, 0.2, 1.0)
    with pytest.raises(DomainError):
        rld_cdf(state, q, 0.9)
    grid = uniform_grid(1.0, 101)
    phi = np.sqrt(3) * grid[None, :]  # vanishes at t = 0
    model = FpcaModel(grid, 30 * grid**2, [1.0], phi, 1.0)
    q0 = RldQuery(10.0, 0.0, 1.0)
    with pytest.raises(DegenerateVarianceError):
        rld_cdf(prior_state(model), q0, 0.5)
    R = rld_cdf(prior_state(model), q0, 0.5, degenerate="step")
    assert 0 <= R <= 1


def test_already_failed():
    state = flat_variance_state(1e-6, t_star=0.8)
    q = RldQuery(10.0, 0.8, 1.0)
    with pytest.raises(AlreadyFailedError):
        rld_cdf(state, q, 0.1)
    with pytest.raises(AlreadyFailedError):
        predict_residual_life(state, q)


def test_truncation_consistency():
    grid = uniform_grid(1.0, 101)
    t_star = grid[40]
    base = true_model(1)
    mean2 = base.mean.copy()
    mean2[:40] += 5 * np.sin(grid[:40] * 9)
    phi2 = base.eigenfunctions.copy()
    phi2[0, :40] *= 0.3
    other = FpcaModel(grid, mean2, base.eigenvalues, phi2, 1.0)
    scores = np.array([1.3])
    cov = np.array([[0.5]])
    from fdadegrade.bayes import PosteriorState

    s1 = PosteriorState(scores, cov, t_star, base)
    s2 = PosteriorState(scores, cov, t_star, other)
    q = RldQuery(10.0, t_star, 1.0)
    y = np.linspace(0, 1 - t_star, 50)
    np.testing.assert_array_equal(rld_cdf(s1, q, y), rld_cdf(s2, q, y))


# --- bootstrap -------------------------------------------------------------


def test_degenerate_bootstrap_all_at_crossing():
    state = flat_variance_state(1e-10, grid_size=101, t_star=0.2)
    q = RldQuery(10.0, 0.2, 1.0, n_bootstrap=300)
    sample = bootstrap_residual_life(state, q)
    assert sample.censored_count == 0
    assert np.all(np.abs(sample.residuals + 0.2 - T_C) <= 0.01)
    est = predict_residual_life(state, q)
    assert abs(est.point_estimate - est.alternative_estimate) <= 0.01


def _model1_states():
    model = true_model(1, noise_variance=1.0)
    g = model.grid
    rng = np.random.default_rng(21)
    out = []
    for xi, t_star, m in [(0.0, 0.3, 4), (2.5, 0.2, 3), (-2.0, 0.5, 6), (1.0, 0.0, 0)]:
        t = np.linspace(0, t_star, m) if m else np.array([])
        v = 30 * t**2 + xi * math.sqrt(5) * t**2 + rng.standard_normal(t.size)
        out.append(update_posterior(model, DegradationSignal("u", t, v), t_star))
    return out


@pytest.mark.parametrize("k", range(4))
def test_bootstrap_within_dkw_band(k):
    state = _model1_states()[k]
    B = 2000
    q = RldQuery(10.0, state.t_star, 1.0, n_bootstrap=B, seed=k)
    sample = bootstrap_residual_life(state, q)
    assert sample.back_crossing < 0.01
    ys = np.linspace(0, q.max_residual, 200)[:-1]
    emp = np.array([np.mean((sample.residuals <= y) & ~sample.censored) for y in ys])
    eps = math.sqrt(math.log(2 / 0.01) / (2 * B))
    # sqrt(5) t^2 vanishes at zero, so the no-data prior needs the step rule there
    R = rld_cdf(state, q, ys, degenerate="step")
    assert np.max(np.abs(emp - R)) <= eps


def test_bootstrap_deterministic_and_seed_sensitive():
    state = _model1_states()[0]
    q = RldQuery(10.0, state.t_star, 1.0, seed=(5, 1))
    a = bootstrap_residual_life(state, q).residuals
    b = bootstrap_residual_life(state, q).residuals
    np.testing.assert_array_equal(a, b)
    c = bootstrap_residual_life(state, RldQuery(10.0, state.t_star, 1.0, seed=(5, 2))).residuals
    assert not np.array_equal(a, c)


def test_bootstrap_all_censored():
    state = _model1_states()[0]
    with pytest.raises(FitError, match="none of the"):
        bootstrap_residual_life(state, RldQuery(500.0, state.t_star, 1.0))


def test_censored_counted():
    state = _model1_states()[3]
    q = RldQuery(32.0, 0.0, 1.0, n_bootstrap=1000)
    s = bootstrap_residual_life(state, q)
    assert 0 < s.censored_count < 1000
    assert np.all(s.residuals[s.censored] == 1.0)


# --- interval and point estimate -------------------------------------------


def test_interval_on_known_sample():
    lo, hi = confidence_interval(np.arange(1, 101, dtype=float), 0.1)
    assert lo == pytest.approx(5.95, abs=1e-12)
    assert hi == pytest.approx(95.05, abs=1e-12)
    assert confidence_interval(np.full(150, 2.5), 0.1) == (2.5, 2.5)
    with pytest.raises(FitError, match="at least 100"):
        confidence_interval(np.arange(50.0), 0.1)


def test_point_estimate_rules():
    assert point_estimate(np.full(120, 0.3)) == 0.3
    tc, d = 0.4, 0.05
    sym = np.repeat([tc - d, tc, tc + d], 41)
    assert point_estimate(sym) == pytest.approx(tc)
    state = flat_variance_state(1e-10, grid_size=101)
    q = RldQuery(10.0, 0.0, 1.0)
    est = point_estimate(None, "mean_crossing", state, q)
    assert abs(est - T_C) < 1e-3
    with pytest.raises(ValueError):
        point_estimate(None, "mean_crossing")


@given(st.floats(5.0, 20.0), st.floats(0.1, 5.0))
def test_threshold_monotonicity(D, dD):
    state = _model1_states()[1]
    lo, hi = RldQuery(D, state.t_star, 1.0, seed=3), RldQuery(D + dD, state.t_star, 1.0, seed=3)
    try:
        a = predict_residual_life(state, lo)
        b = predict_residual_life(state, hi)
    except FitError:
        return
    assert b.point_estimate >= a.point_estimate
    if a.alternative_estimate is not None and b.alternative_estimate is not None:
        assert b.alternative_estimate >= a.alternative_estimate


def test_mean_crossing_missing():
    state = flat_variance_state(1.0)
    with pytest.raises(FitError):
        mean_crossing(state, RldQuery(100.0, 0.0, 1.0))


def test_result_invariants_and_report():
    state = _model1_states()[0]
    q = RldQuery(10.0, state.t_star, 1.0)
    res = predict_residual_life(state, q)
    lo, hi = res.interval
    assert 0 <= lo <= res.point_estimate <= hi <= q.max_residual
    assert res.cdf(0.0) == 0.0
    doc = json.loads(res.to_json())
    for key in ("t_star", "D", "point_estimate", "ci", "alpha", "B", "censored_count",
                "cdf_samples"):
        assert key in doc
    assert doc["cdf_samples"][0] == [0.0, 0.0]
    assert len(doc["ci"]) == 2
    alt = predict_residual_life(state, q, "mean_crossing")
    assert alt.point_estimate == res.alternative_estimate


@pytest.mark.parametrize("kw", [dict(t_star=1.0), dict(t_star=-0.1), dict(alpha=0.0),
                                dict(alpha=1.0), dict(n_bootstrap=99)])
def test_query_validation(kw):
    args = dict(threshold=10.0, t_star=0.2, horizon=1.0) | kw
    with pytest.raises(ValueError):
        RldQuery(**args)


def test_mean_curve_used_by_cdf_matches_closed_form():
    state = _model1_states()[2]
    q = RldQuery(10.0, state.t_star, 1.0)
    y = 0.2
    from scipy.stats import norm

    from fdadegrade.bayes import posterior_variance_curve

    g = lambda t: (posterior_mean_curve(state, [t])[0] - 10) / math.sqrt(
        posterior_variance_curve(state, [t])[0])
    want = (norm.cdf(g(q.t_star + y)) - norm.cdf(g(q.t_star))) / (1 - norm.cdf(g(q.t_star)))
    assert rld_cdf(state, q, y) == pytest.approx(want, rel=1e-9, abs=1e-12)
