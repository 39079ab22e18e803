"""Residual-life distribution up to a soft-failure threshold.

The reported CDF is the closed-form Gaussian approximation

    R(y | t*) = [Phi(g(y)) - Phi(g(0))] / [1 - Phi(g(0))],
    g(y) = (mu*(t* + y) - D) / sqrt(V*(t* + y)),

while quantiles, intervals and point estimates come from a parametric
bootstrap over posterior score draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtr

from .bayes import PosteriorState, design_matrix, posterior_mean_curve, posterior_variance_curve
from .exceptions import AlreadyFailedError, DegenerateVarianceError, DomainError, FitError
from .fpca import dumps

# Phi(g*(0 | t*)) above 1 - this means the unit has already failed.
FAILED_TOL = 1e-12
MIN_UNCENSORED = 100

Seed = Union[int, Sequence[int], None]


@dataclass(frozen=True)
class RldQuery:
    """Threshold, prediction time and bootstrap settings."""

    threshold: float
    t_star: float
    horizon: float
    alpha: float = 0.1
    n_bootstrap: int = 500
    seed: Seed = 0

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        if not 0 <= self.t_star < self.horizon:
            raise DomainError(f"t_star={self.t_star} must lie in [0, {self.horizon})")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.n_bootstrap < 100:
            raise ValueError("n_bootstrap must be at least 100")

    @property
    def max_residual(self) -> float:
        return self.horizon - self.t_star


def _check_y(query: RldQuery, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    tol = 1e-12 * max(query.horizon, 1.0)
    if np.any(y < -tol) or np.any(y > query.max_residual + tol):
        raise DomainError(f"residual time outside [0, {query.max_residual:g}]")
    return np.clip(y, 0.0, query.max_residual)


def _g_survival(state, query, t, degenerate):
    """``Phi(-g*(t))`` with the degenerate-variance handling applied."""
    mu = posterior_mean_curve(state, t)
    v = posterior_variance_curve(state, t)
    zero = v <= 0
    if np.any(zero) and degenerate == "raise":
        raise DegenerateVarianceError(
            "posterior variance vanishes at some evaluation time; "
            "use the deterministic crossing rule (degenerate='step')"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (mu - query.threshold) / np.sqrt(v)
    g = np.where(zero, np.where(mu >= query.threshold, np.inf, -np.inf), g)
    return ndtr(-g)


def rld_cdf(state: PosteriorState, query: RldQuery, y,
            degenerate: Literal["raise", "step"] = "raise"):
    """Closed-form residual-life CDF ``R(y | t*)``, clamped to ``[0, 1]``.

    Parameters
    ----------
    state : PosteriorState
    query : RldQuery
    y : float or array_like
        Residual times in ``[0, M - t*]``.
    degenerate : {'raise', 'step'}
        What to do where the posterior variance is zero: raise
        :class:`DegenerateVarianceError`, or treat the signal there as
        deterministic.

    Raises
    ------
    AlreadyFailedError
        If ``Phi(g*(0 | t*)) >= 1 - 1e-12``.
    """
    y = _check_y(query, y)
    t0 = np.array([query.t_star])
    surv0 = float(_g_survival(state, query, t0, degenerate)[0])
    if surv0 <= FAILED_TOL:
        raise AlreadyFailedError(
            "the posterior mean is already beyond the threshold at t*; the unit "
            "violates the 'not failed up to the last observation' assumption"
        )
    flat = y.reshape(-1)
    surv = _g_survival(state, query, query.t_star + flat, degenerate)
    surv = np.where(flat == 0, surv0, surv)
    out = np.clip((surv0 - surv) / surv0, 0.0, 1.0).reshape(y.shape)
    return float(out) if out.ndim == 0 else out


class BootstrapSample(NamedTuple):
    residuals: np.ndarray  # (B,), censored entries hold M - t*
    censored: np.ndarray  # (B,) bool
    back_crossing: float

    @property
    def censored_count(self) -> int:
        return int(self.censored.sum())

    @property
    def uncensored(self) -> np.ndarray:
        return self.residuals[~self.censored]


def _eval_times(state: PosteriorState, query: RldQuery) -> np.ndarray:
    grid = state.model.grid
    return np.concatenate([[query.t_star], grid[grid > query.t_star]])


def _cov_sqrt(C):
    w, V = np.linalg.eigh(C)
    return V * np.sqrt(np.clip(w, 0.0, None))


def _first_crossing(times, paths, threshold):
    """Interpolated first time each row of ``paths`` reaches ``threshold``."""
    above = paths >= threshold
    hit = above.any(axis=1)
    j = np.argmax(above, axis=1)
    out = np.full(paths.shape[0], np.nan)
    rows = np.flatnonzero(hit)
    jj = j[rows]
    at0 = jj == 0
    out[rows[at0]] = times[0]
    r, k = rows[~at0], jj[~at0]
    s0, s1 = paths[r, k - 1], paths[r, k]
    frac = (threshold - s0) / (s1 - s0)
    out[r] = times[k - 1] + frac * (times[k] - times[k - 1])
    return out, hit, j


def _back_crossing(paths, threshold, hit, j, min_count):
    """Largest fraction, over evaluation times, of already-crossed paths that
    sit below the threshold again."""
    B, T = paths.shape
    crossed = hit[:, None] & (j[:, None] <= np.arange(T)[None, :])
    n = crossed.sum(0)
    below = (crossed & (paths < threshold)).sum(0)
    ok = n >= min_count
    if not ok.any():
        return 0.0
    return float(np.max(below[ok] / n[ok]))


def bootstrap_residual_life(state: PosteriorState, query: RldQuery) -> BootstrapSample:
    """Parametric bootstrap of the residual life ``T_b - t*``.

    Scores are drawn from the posterior, each draw is turned into a noiseless
    trajectory on ``[t*, M]`` (``t*`` followed by the model grid points after
    it) and the first threshold crossing is located by linear interpolation.
    Replicate ``b`` always uses row ``b`` of one standard-normal draw matrix
    generated from ``query.seed``.

    Raises
    ------
    FitError
        If no trajectory reaches the threshold before the horizon.
    """
    B = query.n_bootstrap
    times = _eval_times(state, query)
    model = state.model
    rng = np.random.default_rng(query.seed)
    z = rng.standard_normal((B, model.K))
    xi = state.score_mean + z @ _cov_sqrt(state.score_cov).T
    paths = model.mean_at(times)[None, :] + xi @ design_matrix(model, times).T
    T, hit, j = _first_crossing(times, paths, query.threshold)
    if not hit.any():
        raise FitError(
            f"none of the {B} bootstrap trajectories reaches the threshold "
            f"{query.threshold:g} before the horizon"
        )
    censored = ~hit
    resid = np.where(censored, query.max_residual, T - query.t_star)
    bc = _back_crossing(paths, query.threshold, hit, j, max(20, B // 20))
    return BootstrapSample(resid, censored, bc)


def confidence_interval(sample: Union[BootstrapSample, np.ndarray], alpha: float):
    """Equal-tailed ``1 - alpha`` quantile interval of the uncensored draws.

    Quantiles interpolate linearly between order statistics.

    Raises
    ------
    FitError
        If fewer than 100 uncensored draws are available.
    """
    x, n_cens = _uncensored(sample)
    lo, hi = np.quantile(x, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def _uncensored(sample):
    if isinstance(sample, BootstrapSample):
        x, n_cens = sample.uncensored, sample.censored_count
    else:
        x, n_cens = np.asarray(sample, dtype=float), 0
    if x.size < MIN_UNCENSORED:
        raise FitError(
            f"only {x.size} uncensored bootstrap draws ({n_cens} censored); "
            f"at least {MIN_UNCENSORED} are required"
        )
    return x, n_cens


def mean_crossing(state: PosteriorState, query: RldQuery) -> float:
    """Residual time until the posterior mean curve reaches the threshold."""
    times = _eval_times(state, query)
    mu = posterior_mean_curve(state, times)
    T, hit, _ = _first_crossing(times, mu[None, :], query.threshold)
    if not hit[0]:
        raise FitError("the posterior mean curve never reaches the threshold")
    return float(T[0] - query.t_star)


PointRule = Literal["median", "mean_crossing"]


def point_estimate(
    sample: Union[BootstrapSample, np.ndarray, None] = None,
    rule: PointRule = "median",
    state: Optional[PosteriorState] = None,
    query: Optional[RldQuery] = None,
) -> float:
    """Residual-life point estimate.

    ``rule='median'`` takes the median of the uncensored bootstrap draws;
    ``rule='mean_crossing'`` uses :func:`mean_crossing` and needs ``state``
    and ``query``.
    """
    if rule == "median":
        x, _ = _uncensored(sample)
        return float(np.median(x))
    if rule == "mean_crossing":
        if state is None or query is None:
            raise ValueError("rule='mean_crossing' needs state and query")
        return mean_crossing(state, query)
    raise ValueError(f"unknown point-estimate rule {rule!r}")


@dataclass(frozen=True, eq=False)
class RldResult:
    """Residual-life prediction for one component at ``t*``."""

    state: PosteriorState
    query: RldQuery
    point_estimate: float
    interval: tuple
    sample: BootstrapSample
    rule: str = "median"
    alternative_estimate: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def censored_count(self) -> int:
        return self.sample.censored_count

    @property
    def bootstrap_samples(self) -> np.ndarray:
        return self.sample.residuals

    def cdf(self, y):
        return rld_cdf(self.state, self.query, y, degenerate="step")

    def cdf_samples(self, num: int = 51):
        ys = np.linspace(0.0, self.query.max_residual, num)
        try:
            vals = self.cdf(ys)
        except AlreadyFailedError:
            return None
        return [[float(a), float(b)] for a, b in zip(ys, vals)]

    def to_dict(self) -> dict:
        q = self.query
        return {
            "t_star": q.t_star,
            "D": q.threshold,
            "point_estimate": self.point_estimate,
            "point_rule": self.rule,
            "alternative_estimate": self.alternative_estimate,
            "ci": list(self.interval),
            "alpha": q.alpha,
            "B": q.n_bootstrap,
            "censored_count": self.censored_count,
            "back_crossing": self.sample.back_crossing,
            "cdf_samples": self.cdf_samples(),
            "posterior": self.state.to_dict(),
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())


def predict_residual_life(state: PosteriorState, query: RldQuery,
                          rule: PointRule = "median") -> RldResult:
    """Bootstrap, interval and point estimate for one component.

    Both point-estimate rules are computed when possible; ``rule`` selects
    the reported one.

    Raises
    ------
    AlreadyFailedError
        If the posterior mean is already past the threshold at ``t*``.
    """
    rld_cdf(state, query, 0.0, degenerate="step")
    sample = bootstrap_residual_life(state, query)
    interval = confidence_interval(sample, query.alpha)
    med = point_estimate(sample, "median")
    try:
        crossing = mean_crossing(state, query)
    except FitError:
        crossing = None
    if rule == "median":
        est, alt = med, crossing
    else:
        if crossing is None:
            raise FitError("the posterior mean curve never reaches the threshold")
        est, alt = crossing, med
    return RldResult(state, query, est, interval, sample, rule, alt)
