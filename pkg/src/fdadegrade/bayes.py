"""Empirical-Bayes update of the component scores of a fielded unit.

With prior ``xi ~ N(0, diag(lambda))`` and Gaussian measurement error of
variance ``sigma^2``, observing ``S(t)`` at times ``t`` gives the Gaussian
posterior ``N(C d, C)`` with ``C = (P'P / sigma^2 + Lambda^{-1})^{-1}`` and
``d = P'(S(t) - mu(t)) / sigma^2``, where ``P[j, k] = phi_k(t_j)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import FitError
from .fpca import FpcaModel, floored_noise_variance
from .signals import DegradationSignal


def design_matrix(model: FpcaModel, times) -> np.ndarray:
    """``P[j, k] = phi_k(t_j)`` by linear interpolation on the model grid.

    Raises
    ------
    DomainError
        If a time lies outside ``[0, M]``.
    """
    return model.eigenfunctions_at(np.asarray(times, dtype=float).reshape(-1))


@dataclass(frozen=True, eq=False)
class PosteriorState:
    """Posterior ``N(score_mean, score_cov)`` of the scores of one component."""

    score_mean: np.ndarray
    score_cov: np.ndarray
    t_star: float
    model: FpcaModel
    n_obs: int = 0

    def to_dict(self) -> dict:
        return {
            "score_mean": self.score_mean.tolist(),
            "score_cov": self.score_cov.tolist(),
            "t_star": self.t_star,
            "n_obs": self.n_obs,
        }


def prior_state(model: FpcaModel, t_star: float = 0.0) -> PosteriorState:
    """Posterior in the absence of observations, i.e. the prior."""
    return PosteriorState(np.zeros(model.K), np.diag(model.eigenvalues), float(t_star), model, 0)


def update_posterior(model: FpcaModel, signal: DegradationSignal, t_star=None) -> PosteriorState:
    """Condition the score prior of ``model`` on the observations in ``signal``.

    ``t_star`` defaults to the last observation time (0 without observations).
    A zero noise variance is floored at ``1e-8 * max(lambda_1, 1)``.

    Raises
    ------
    DomainError
        If an observation time lies outside the model domain.
    FitError
        If the precision matrix is numerically singular.
    """
    times = signal.times
    if t_star is None:
        t_star = float(times[-1]) if times.size else 0.0
    if times.size == 0 or model.K == 0:
        state = prior_state(model, t_star)
        return PosteriorState(state.score_mean, state.score_cov, state.t_star, model, int(times.size))
    P = design_matrix(model, times)
    r = signal.values - model.mean_at(times)
    s2 = floored_noise_variance(model.noise_variance, model.eigenvalues)
    precision = P.T @ P / s2 + np.diag(1.0 / model.eigenvalues)
    try:
        factor = linalg.cho_factor(precision, lower=True)
    except linalg.LinAlgError:
        raise FitError(
            f"posterior precision is singular (condition number {np.linalg.cond(precision):.3g})"
        ) from None
    d = P.T @ r / s2
    cov = linalg.cho_solve(factor, np.eye(model.K))
    cov = (cov + cov.T) / 2
    mean = linalg.cho_solve(factor, d)
    return PosteriorState(mean, cov, float(t_star), model, int(times.size))


def posterior_mean_curve(state: PosteriorState, times) -> np.ndarray:
    """``mu*(t) = mu(t) + (C d)' p(t)``."""
    m = state.model
    return m.mean_at(times) + design_matrix(m, times) @ state.score_mean


def posterior_variance_curve(state: PosteriorState, times) -> np.ndarray:
    """``V*(t) = p(t)' C p(t)``; excludes the measurement-error variance."""
    P = design_matrix(state.model, times)
    return np.maximum(np.einsum("jk,kl,jl->j", P, state.score_cov, P), 0.0)
