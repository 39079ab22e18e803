"""Fixed-basis random-effects baseline.

Each signal is modelled as ``sum_k beta_ik b_k(t) + noise`` on a
transformed scale, with the coefficient mean and covariance estimated by
the method of moments from per-signal least-squares fits. The result is
expressed as an :class:`~fdadegrade.fpca.FpcaModel` so that the posterior
and residual-life code applies unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from .exceptions import FitError, SignalError
from .fpca import FpcaModel, eigendecompose
from .signals import DegradationSignal, SignalEnsemble
from .smoothing import uniform_grid

BASES = {
    "linear": (lambda t: np.ones_like(t), lambda t: t),
    "square": (lambda t: t**2,),
    "quadratic": (lambda t: np.ones_like(t), lambda t: t, lambda t: t**2),
}


def _log(v):
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise SignalError("log transform needs strictly positive values")
    return np.log(v)


def _loglog(v):
    v = np.asarray(v, dtype=float)
    if np.any(v <= 1):
        raise SignalError("loglog transform needs values greater than 1")
    return np.log(np.log(v))


TRANSFORMS = {
    "identity": (lambda v: np.asarray(v, dtype=float), lambda v: np.asarray(v, dtype=float)),
    "log": (_log, np.exp),
    "loglog": (_loglog, lambda v: np.exp(np.exp(v))),
}

Basis = Union[str, Sequence[Callable]]
Transform = Union[str, Tuple[Callable, Callable]]


@dataclass(frozen=True, eq=False)
class BaselineModel:
    """A fitted baseline together with the value transform it was fitted on."""

    model: FpcaModel
    forward: Callable
    inverse: Callable
    coef_mean: np.ndarray
    coef_cov: np.ndarray

    def transform_signal(self, signal: DegradationSignal) -> DegradationSignal:
        return DegradationSignal(signal.id, signal.times, self.forward(signal.values))

    def transform_threshold(self, threshold: float) -> float:
        return float(self.forward(np.array([threshold]))[0])


def _resolve(basis: Basis, transform: Transform):
    funcs = BASES[basis] if isinstance(basis, str) else tuple(basis)
    fwd, inv = TRANSFORMS[transform] if isinstance(transform, str) else transform
    return funcs, fwd, inv


def _psd(a: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((a + a.T) / 2)
    return (V * np.clip(w, 0.0, None)) @ V.T


def _weighted_moments(betas: np.ndarray, err_cov: np.ndarray, iters: int = 50):
    """Mean and covariance of the coefficients from per-signal estimates.

    ``Var(beta_i) = Sigma + err_cov[i]``, so each signal is weighted by
    ``1 / (tr Sigma + tr err_cov[i])`` and the weighted spread is corrected
    by the weighted error covariance. Equal designs give the plain moment
    estimator. Poorly determined signals (few or early observations under
    a ``t**2`` basis) otherwise swamp the correction and clip it to zero.
    """
    tr_err = np.trace(err_cov, axis1=1, axis2=2)
    cov = np.atleast_2d(np.cov(betas, rowvar=False))
    for _ in range(iters):
        w = 1.0 / (np.trace(cov) + tr_err + 1e-300)
        W = w.sum()
        mean = w @ betas / W
        d = betas - mean
        spread = (d.T * w) @ d / (W - (w @ w) / W)
        new = _psd(spread - np.tensordot(w, err_cov, 1) / W)
        if np.allclose(new, cov, rtol=1e-10, atol=1e-14):
            cov = new
            break
        cov = new
    return mean, cov


def parametric_baseline(ensemble: SignalEnsemble, transform: Transform = "identity",
                        basis: Basis = "linear", grid_size: int = 101) -> BaselineModel:
    """Method-of-moments random-effects fit on a fixed basis.

    Parameters
    ----------
    ensemble : SignalEnsemble
    transform : {'identity', 'log', 'loglog'} or (forward, inverse)
        Applied to the signal values before fitting.
    basis : {'linear', 'square', 'quadratic'} or sequence of callables
        ``'linear'`` is ``{1, t}``, ``'square'`` is ``{t**2}``.
    grid_size : int

    Raises
    ------
    SignalError
        If the transform is not applicable to the data.
    FitError
        If fewer than two signals have enough observations for their own
        least-squares fit.
    """
    funcs, fwd, inv = _resolve(basis, transform)
    p = len(funcs)
    betas, xtx_inv, rss, dof = [], [], 0.0, 0
    for s in ensemble:
        y = fwd(s.values)
        X = np.stack([f(s.times) for f in funcs], 1)
        if s.times.size < p or np.linalg.matrix_rank(X) < p:
            continue
        b, *_ = np.linalg.lstsq(X, y, rcond=None)
        betas.append(b)
        xtx_inv.append(np.linalg.inv(X.T @ X))
        e = y - X @ b
        rss += float(e @ e)
        dof += s.times.size - p
    if len(betas) < 2:
        raise FitError(f"fewer than 2 signals have {p} or more usable observations")
    betas = np.array(betas)
    sigma2 = rss / dof if dof > 0 else 0.0
    mean, cov = _weighted_moments(betas, sigma2 * np.array(xtx_inv))
    grid = uniform_grid(ensemble.horizon, grid_size)
    Bg = np.stack([f(grid) for f in funcs], 1)
    eig = eigendecompose(Bg @ cov @ Bg.T, grid)
    if eig.values.size == 0:
        raise FitError("estimated coefficient covariance is zero")
    eig = type(eig)(eig.values[:p], eig.functions[:p])
    meta = {
        "method": "parametric_baseline",
        "basis": basis if isinstance(basis, str) else "custom",
        "transform": transform if isinstance(transform, str) else "custom",
        "n_signals_used": int(len(betas)),
        "coef_mean": mean.tolist(),
        "coef_cov": cov.tolist(),
    }
    model = FpcaModel(grid, Bg @ mean, eig.values, eig.functions, sigma2, meta)
    return BaselineModel(model, fwd, inv, mean, cov)
