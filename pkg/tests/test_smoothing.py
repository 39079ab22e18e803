import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fdadegrade.exceptions import FitError
from fdadegrade.smoothing import (
    SmoothingConfig,
    default_bandwidth_candidates,
    local_quadratic_fit,
    locv_scores,
    select_bandwidth_locv,
    uniform_grid,
)

GRID = uniform_grid(1.0, 101)


@pytest.mark.parametrize("h", [0.05, 0.1, 0.3, 1.0, 5.0])
def test_reproduces_t_squared(h):
    t = np.linspace(0, 1, 20)
    fit = local_quadratic_fit(t, t**2, SmoothingConfig(h, GRID))
    np.testing.assert_allclose(fit.values, GRID**2, atol=1e-10, rtol=0)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.08, 2.0),
       st.integers(0, 2**31))
def test_reproduces_any_quadratic(a, b, c, h, seed):
    t = np.sort(np.random.default_rng(seed).uniform(0, 1, 30))
    y = a + b * t + c * t**2
    fit = local_quadratic_fit(t, y, SmoothingConfig(h, GRID))
    np.testing.assert_allclose(fit.values, a + b * GRID + c * GRID**2, atol=1e-10, rtol=0)


def test_constant():
    t = np.linspace(0, 1, 15)
    fit = local_quadratic_fit(t, np.full(15, 3.5), SmoothingConfig(0.2, GRID))
    np.testing.assert_allclose(fit.values, 3.5, atol=1e-12)


@given(st.floats(-3, 3).filter(lambda a: abs(a) > 1e-3), st.floats(-3, 3))
def test_linearity(a, b):
    rng = np.random.default_rng(1)
    t = rng.uniform(0, 1, 40)
    y = np.sin(5 * t) + rng.standard_normal(40)
    cfg = SmoothingConfig(0.2, GRID)
    f1 = local_quadratic_fit(t, y, cfg).values
    f2 = local_quadratic_fit(t, a * y + b, cfg).values
    np.testing.assert_allclose(f2, a * f1 + b, atol=1e-9)


def test_translation_equivariance():
    rng = np.random.default_rng(2)
    t = rng.uniform(0, 1, 40)
    y = np.cos(3 * t) + rng.standard_normal(40)
    f1 = local_quadratic_fit(t, y, SmoothingConfig(0.2, GRID)).values
    f2 = local_quadratic_fit(t + 7.0, y, SmoothingConfig(0.2, GRID + 7.0)).values
    np.testing.assert_allclose(f2, f1, atol=1e-8)


def test_sparse_window_flagged():
    t = np.array([0.0, 0.05, 0.1, 0.9])
    fit = local_quadratic_fit(t, t**2, SmoothingConfig(0.12, GRID))
    assert fit.extrapolated[50]
    assert not fit.extrapolated[5]
    np.testing.assert_allclose(fit.values, GRID**2, atol=1e-9)


def test_config_validation():
    with pytest.raises(ValueError):
        SmoothingConfig(0.0, GRID)
    with pytest.raises(ValueError):
        SmoothingConfig(0.1, GRID[::-1])


def _pooled(ens):
    return ens.pooled()


def test_model1_mean_recovery(model1_ensemble):
    t, y, idx = _pooled(model1_ensemble)
    h = select_bandwidth_locv(t, y, idx, grid=GRID)
    fit = local_quadratic_fit(t, y, SmoothingConfig(h, GRID)).values
    inner = (GRID >= 0.05) & (GRID <= 0.95)
    assert np.max(np.abs(fit - 30 * GRID**2)[inner]) < 0.5


def test_singleton_and_tied_candidates(model1_ensemble):
    t, y, idx = _pooled(model1_ensemble)
    assert select_bandwidth_locv(t, y, idx, [0.17], GRID) == 0.17
    assert select_bandwidth_locv(t, y, idx, [0.17, 0.17], GRID) == 0.17


def test_locv_matches_brute_force():
    rng = np.random.default_rng(5)
    n = 6
    idx = np.repeat(np.arange(n), 8)
    t = np.tile(np.linspace(0, 1, 8), n) + rng.uniform(-0.02, 0.02, n * 8)
    t = np.clip(t, 0, 1)
    y = 2 * t + rng.standard_normal(n * 8)
    grid = uniform_grid(1.0, 51)
    h = 0.3
    want = 0.0
    for i in range(n):
        keep = idx != i
        f = local_quadratic_fit(t[keep], y[keep], SmoothingConfig(h, grid)).values
        want += np.sum((y[~keep] - np.interp(t[~keep], grid, f)) ** 2)
    got = locv_scores(t, y, idx, [h], grid)[0]
    assert got == pytest.approx(want, rel=1e-10)


def test_selected_bandwidth_near_fine_optimum(model1_ensemble):
    t, y, idx = _pooled(model1_ensemble)
    cands = default_bandwidth_candidates(t, 1.0)
    h = select_bandwidth_locv(t, y, idx, cands, GRID)
    fine = np.geomspace(cands[0], cands[-1], 10 * cands.size)
    scores = locv_scores(t, y, idx, fine, GRID)
    chosen = locv_scores(t, y, idx, [h], GRID)[0]
    assert chosen <= 1.05 * scores.min()


def test_all_candidates_fail():
    t = np.array([0.0, 0.5, 1.0])
    y = np.zeros(3)
    idx = np.array([0, 1, 2])
    with pytest.raises(FitError, match="every candidate"):
        select_bandwidth_locv(t, y, idx, [0.01, 0.02], GRID)
