import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fdadegrade.fpca import FpcaModel, trapezoid_weights
from fdadegrade.signals import SignalEnsemble
from fdadegrade.simulation import model_spec, simulate_signal
from fdadegrade.smoothing import uniform_grid

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def complete_ensemble(model_id=1, n=100, seed=0, sigma=1.0, **kw):
    spec = model_spec(model_id, sigma)
    rng = np.random.default_rng(seed)
    sigs = [simulate_signal(spec, rng, signal_id=f"s{i}", **kw).signal for i in range(n)]
    return SignalEnsemble(tuple(sigs), spec.horizon)


def true_model(model_id=1, grid_size=101, noise_variance=1.0):
    """Model with the exact simulation mean and eigenpairs on a grid."""
    spec = model_spec(model_id)
    grid = uniform_grid(1.0, grid_size)
    phi = spec.components_at(grid).T
    return FpcaModel(grid, spec.mean_at(grid), np.array(spec.eigenvalues), phi, noise_variance)


def random_model(rng, K=None, grid_size=41, horizon=1.0):
    """Random positive-definite model with orthonormal eigenfunctions."""
    K = int(rng.integers(1, 5)) if K is None else K
    grid = uniform_grid(horizon, grid_size)
    w = trapezoid_weights(grid)
    basis = np.stack([np.cos(np.pi * k * grid / horizon) for k in range(K + 2)])
    A = basis[rng.permutation(K + 2)[:K]] + 0.1 * rng.standard_normal((K, grid_size))
    Q, _ = np.linalg.qr((A * np.sqrt(w)).T)
    phi = (Q / np.sqrt(w)[:, None]).T
    lam = np.sort(rng.uniform(0.2, 10.0, K))[::-1]
    mean = rng.uniform(-2, 2) + rng.uniform(0, 5) * grid**2
    return FpcaModel(grid, mean, lam, phi, float(rng.uniform(0.05, 2.0)))


@pytest.fixture
def model1_ensemble():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return complete_ensemble(1, 100, seed=11)


# criterion number -> one-line verdict, filled by test_acceptance.py
ACCEPTANCE = {}


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
