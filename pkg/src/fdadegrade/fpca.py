"""Functional principal component model of an ensemble of degradation signals.

The fitted prior consists of a smoothed mean curve, the leading eigenpairs
of a smoothed covariance surface and a measurement-error variance, all
represented on a common evaluation grid over ``[0, M]``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Optional, Sequence

import numpy as np
from scipy import linalg, optimize

from .exceptions import DomainError, FitError, ModelFormatError
from .signals import SignalEnsemble
from .smoothing import (
    SmoothingConfig,
    bilinear,
    default_bandwidth_candidates,
    local_quadratic_fit,
    local_quadratic_surface,
    select_bandwidth_locv,
    uniform_grid,
)

# Eigenvalues below this fraction of the largest one are treated as zero.
EIGEN_RTOL = 1e-10
# Floor applied to the noise variance before it is inverted.
NOISE_FLOOR_RTOL = 1e-8


def trapezoid_weights(grid) -> np.ndarray:
    """Quadrature weights of the trapezoid rule on ``grid``."""
    grid = np.asarray(grid, dtype=float)
    d = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def floored_noise_variance(sigma2: float, eigenvalues) -> float:
    lam1 = float(eigenvalues[0]) if len(eigenvalues) else 0.0
    return max(float(sigma2), NOISE_FLOOR_RTOL * max(lam1, 1.0))


@dataclass(frozen=True)
class FitConfig:
    """Options for :func:`fit_model`.

    ``k_rule`` is one of ``"aic"`` (modified Akaike criterion), ``"fixed"``
    (use ``num_components``) or ``"fve"`` (smallest K explaining at least
    ``fve_threshold`` of the positive eigenvalue mass). ``aic_likelihood``
    selects the likelihood inside the criterion: ``"conditional"`` plugs in
    the posterior-mean scores, ``"marginal"`` integrates the scores out.
    ``noise_method`` is ``"diagonal"`` (excess of the smoothed squared
    residuals over the covariance diagonal) or ``"marginal"`` (maximum
    marginal likelihood given the mean and the leading ``k_max`` eigenpairs).
    """

    grid_size: int = 101
    mean_bandwidth: Optional[float] = None
    mean_candidates: Optional[Sequence[float]] = None
    cov_bandwidth: Optional[float] = None
    cov_candidates: Optional[Sequence[float]] = None
    k_rule: Literal["aic", "fixed", "fve"] = "aic"
    num_components: Optional[int] = None
    fve_threshold: float = 0.95
    k_max: int = 10
    aic_likelihood: Literal["conditional", "marginal"] = "conditional"
    noise_method: Literal["diagonal", "marginal"] = "diagonal"
    cv_folds: int = 5
    cv_grid_size: int = 41
    seed: int = 0

    def __post_init__(self):
        if self.grid_size < 21:
            raise ValueError("grid_size must be at least 21")
        if self.k_rule not in ("aic", "fixed", "fve"):
            raise ValueError(f"unknown k_rule {self.k_rule!r}")
        if self.k_rule == "fixed" and (self.num_components is None or self.num_components < 1):
            raise ValueError("k_rule='fixed' requires num_components >= 1")
        if self.k_rule != "fixed" and self.num_components is not None:
            raise ValueError("num_components is only used with k_rule='fixed'")
        if self.aic_likelihood not in ("conditional", "marginal"):
            raise ValueError(f"unknown aic_likelihood {self.aic_likelihood!r}")
        if self.noise_method not in ("diagonal", "marginal"):
            raise ValueError(f"unknown noise_method {self.noise_method!r}")
        if not 0 < self.fve_threshold <= 1:
            raise ValueError("fve_threshold must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class FpcaModel:
    """Fitted prior of the degradation process.

    Attributes
    ----------
    grid : ndarray, shape (G,)
    mean : ndarray, shape (G,)
    eigenvalues : ndarray, shape (K,)
        Strictly decreasing, positive.
    eigenfunctions : ndarray, shape (K, G)
        Orthonormal under trapezoid quadrature on ``grid``.
    noise_variance : float
    metadata : dict
        Bandwidths, full eigenvalue spectrum and other fit diagnostics.
    """

    grid: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    noise_variance: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        mean = np.asarray(self.mean, dtype=float)
        lam = np.asarray(self.eigenvalues, dtype=float).reshape(-1)
        phi = np.asarray(self.eigenfunctions, dtype=float).reshape(lam.size, grid.size)
        for name, arr in (("grid", grid), ("mean", mean), ("eigenvalues", lam),
                          ("eigenfunctions", phi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if mean.shape != grid.shape:
            raise ValueError("mean must be defined on the grid")
        if np.any(lam <= 0):
            raise ValueError("eigenvalues must be positive")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be non-negative")
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    @property
    def K(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def _check_domain(self, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        tol = 1e-12 * max(self.horizon, 1.0)
        if t.size and (np.min(t) < self.grid[0] - tol or np.max(t) > self.grid[-1] + tol):
            bad = t[(t < self.grid[0] - tol) | (t > self.grid[-1] + tol)]
            raise DomainError(
                f"time {bad.flat[0]:g} outside the model domain [{self.grid[0]:g}, {self.grid[-1]:g}]"
            )
        return np.clip(t, self.grid[0], self.grid[-1])

    def mean_at(self, times) -> np.ndarray:
        t = self._check_domain(times)
        return np.interp(t, self.grid, self.mean)

    def eigenfunctions_at(self, times) -> np.ndarray:
        """Matrix ``P[j, k] = phi_k(t_j)`` by linear interpolation."""
        t = self._check_domain(times).reshape(-1)
        if self.K == 0:
            return np.zeros((t.size, 0))
        return np.stack([np.interp(t, self.grid, f) for f in self.eigenfunctions], axis=1)

    def covariance(self) -> np.ndarray:
        """Truncated covariance surface on the grid."""
        return (self.eigenfunctions.T * self.eigenvalues) @ self.eigenfunctions

    def truncate(self, K: int) -> "FpcaModel":
        return FpcaModel(self.grid, self.mean, self.eigenvalues[:K],
                         self.eigenfunctions[:K], self.noise_variance, dict(self.metadata))

    # --- serialisation ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "mean": self.mean.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenfunctions": self.eigenfunctions.tolist(),
            "noise_variance": self.noise_variance,
            "K": self.K,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "FpcaModel":
        try:
            K = int(doc["K"])
            phi = np.asarray(doc["eigenfunctions"], dtype=float).reshape(K, -1)
            model = cls(
                grid=np.asarray(doc["grid"], dtype=float),
                mean=np.asarray(doc["mean"], dtype=float),
                eigenvalues=np.asarray(doc["eigenvalues"], dtype=float),
                eigenfunctions=phi,
                noise_variance=float(doc["noise_variance"]),
                metadata=dict(doc.get("metadata", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"invalid model document: {exc}") from None
        if model.K != K:
            raise ModelFormatError("K does not match the number of eigenvalues")
        return model

    @classmethod
    def from_json(cls, text: str) -> "FpcaModel":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"model is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ModelFormatError("model document must be a JSON object")
        return cls.from_dict(doc)


def _render(obj) -> str:
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError("cannot serialise non-finite number")
        text = "%.17g" % x
        if "." not in text and "e" not in text and "n" not in text:
            text += ".0"
        return text
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_render(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_render(v) for v in obj) + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON with every float written to 17 significant digits."""
    return _render(obj)


# --- estimation steps ----------------------------------------------------------


class MeanEstimate(NamedTuple):
    curve: np.ndarray
    bandwidth: float
    extrapolated: np.ndarray


def _coverage_gap(times, horizon):
    u = np.unique(times)
    edges = np.concatenate([[0.0], u, [horizon]])
    return float(np.max(np.diff(edges)))


def estimate_mean(ensemble: SignalEnsemble, config: FitConfig = FitConfig(), grid=None) -> MeanEstimate:
    """Local quadratic smooth of the pooled observations.

    The bandwidth is ``config.mean_bandwidth`` or, when unset, the
    leave-one-curve-out choice among ``config.mean_candidates``.

    Raises
    ------
    FitError
        If the pooled time points leave a gap wider than ``M / 2``.
    """
    M = ensemble.horizon
    grid = uniform_grid(M, config.grid_size) if grid is None else np.asarray(grid, dtype=float)
    times, values, index = ensemble.pooled()
    gap = _coverage_gap(times, M)
    if gap > M / 2:
        raise FitError(
            f"pooled observation times leave a gap of {gap:g} (> M/2); the time "
            "domain is not covered, consider a nonuniform sampling plan"
        )
    if gap > M / 4:
        warnings.warn(f"pooled observation times leave a gap of {gap:g} (> M/4)", stacklevel=2)
    h = config.mean_bandwidth
    if h is None:
        if len(ensemble) < 2:
            raise FitError("bandwidth selection needs at least 2 signals; set mean_bandwidth")
        cands = config.mean_candidates
        if cands is None:
            cands = default_bandwidth_candidates(times, M)
        h = select_bandwidth_locv(times, values, index, cands, grid)
    fit = local_quadratic_fit(times, values, SmoothingConfig(h, grid))
    return MeanEstimate(fit.values, float(h), fit.extrapolated)


class RawCovariance(NamedTuple):
    """Off-diagonal residual products binned on distinct time pairs."""

    times: np.ndarray
    counts: np.ndarray  # (F, U, U) per fold
    sums: np.ndarray
    squares: np.ndarray


def raw_covariance(ensemble: SignalEnsemble, mean_curve, grid, folds=None) -> RawCovariance:
    """Bin products ``r_ij r_il`` (``j != l``) of demeaned observations.

    ``folds`` assigns each signal to a cross-validation fold; bins are kept
    separately per fold so that training sets are formed by subtraction.
    """
    times, _, _ = ensemble.pooled()
    u = np.unique(times)
    nf = 1 if folds is None else int(np.max(folds)) + 1
    N = np.zeros((nf, u.size, u.size))
    Y = np.zeros_like(N)
    Q = np.zeros_like(N)
    for i, s in enumerate(ensemble):
        if len(s) < 2:
            continue
        f = 0 if folds is None else folds[i]
        idx = np.searchsorted(u, s.times)
        r = s.values - np.interp(s.times, grid, mean_curve)
        prod = np.outer(r, r)
        off = ~np.eye(len(s), dtype=bool)
        ii, jj = np.meshgrid(idx, idx, indexing="ij")
        N[f, ii[off], jj[off]] += 1.0
        Y[f, ii[off], jj[off]] += prod[off]
        Q[f, ii[off], jj[off]] += prod[off] ** 2
    return RawCovariance(u, N, Y, Q)


class CovarianceEstimate(NamedTuple):
    surface: np.ndarray
    bandwidth: float
    cv_scores: Optional[np.ndarray]


def _cov_bandwidth_cv(raw: RawCovariance, candidates, cv_grid) -> np.ndarray:
    N_tot, Y_tot = raw.counts.sum(0), raw.sums.sum(0)
    u = raw.times
    scores = np.zeros(len(candidates))
    for c, h in enumerate(candidates):
        for f in range(raw.counts.shape[0]):
            Nf, Yf, Qf = raw.counts[f], raw.sums[f], raw.squares[f]
            if not Nf.any():
                continue
            try:
                fit = local_quadratic_surface(u, N_tot - Nf, Y_tot - Yf, cv_grid, h).values
            except FitError:
                scores[c] = np.inf
                break
            a, b = np.nonzero(Nf)
            pred = bilinear(cv_grid, fit, u[a], u[b])
            scores[c] += float(np.sum(Qf[a, b] - 2 * pred * Yf[a, b] + Nf[a, b] * pred**2))
    return scores


def estimate_covariance_surface(
    ensemble: SignalEnsemble, mean_curve, config: FitConfig = FitConfig(), grid=None
) -> CovarianceEstimate:
    """Smoothed covariance surface from off-diagonal residual products.

    The 2-d bandwidth is ``config.cov_bandwidth`` or the ``cv_folds``-fold
    cross-validated choice (folds formed by signal) among
    ``config.cov_candidates``. The result is symmetrised.
    """
    M = ensemble.horizon
    grid = uniform_grid(M, config.grid_size) if grid is None else np.asarray(grid, dtype=float)
    n = len(ensemble)
    h = config.cov_bandwidth
    scores = None
    if h is None:
        nf = max(1, min(config.cv_folds, n))
        rng = np.random.default_rng(config.seed)
        folds = rng.permutation(np.arange(n) % nf)
        raw = raw_covariance(ensemble, mean_curve, grid, folds)
    else:
        raw = raw_covariance(ensemble, mean_curve, grid)
    N, Y = raw.counts.sum(0), raw.sums.sum(0)
    if not N.any():
        raise FitError("no signal has two observations; the covariance is not identifiable")
    if h is None:
        cands = config.cov_candidates
        if cands is None:
            times, _, _ = ensemble.pooled()
            cands = default_bandwidth_candidates(times, M, num=10)
            cands = cands[cands >= M / 50] if np.any(cands >= M / 50) else cands[-1:]
        cands = np.asarray(cands, dtype=float)
        if raw.counts.shape[0] < 2:
            h = float(cands.max())
        else:
            cv_grid = uniform_grid(M, min(config.cv_grid_size, grid.size))
            scores = _cov_bandwidth_cv(raw, cands, cv_grid)
            if not np.isfinite(scores).any():
                raise FitError(f"every covariance bandwidth failed: {cands.tolist()}")
            h = float(cands[scores == scores.min()].min())
    surface = local_quadratic_surface(raw.times, N, Y, grid, h).values
    surface = (surface + surface.T) / 2
    return CovarianceEstimate(surface, float(h), scores)


def estimate_noise_variance(
    ensemble: SignalEnsemble, mean_curve, surface, grid, bandwidth: float
) -> float:
    """Average excess of the smoothed squared residuals over the covariance
    diagonal on the central 80% of the domain, clamped at zero."""
    grid = np.asarray(grid, dtype=float)
    times, values, _ = ensemble.pooled()
    r2 = (values - np.interp(times, grid, mean_curve)) ** 2
    diag_raw = local_quadratic_fit(times, r2, SmoothingConfig(bandwidth, grid)).values
    M0, M1 = grid[0], grid[-1]
    inner = (grid >= M0 + 0.1 * (M1 - M0)) & (grid <= M1 - 0.1 * (M1 - M0))
    return max(0.0, float(np.mean(diag_raw[inner] - np.diag(surface)[inner])))


def _residual_designs(ensemble, grid, mean_curve, functions):
    out = []
    for s in ensemble:
        r = s.values - np.interp(s.times, grid, mean_curve)
        P = np.stack([np.interp(s.times, grid, f) for f in functions], 1)
        out.append((r, P))
    return out


def _marginal_loglik(pairs, lam, s2) -> float:
    """Sum of ``log N(r_i; 0, P_i diag(lam) P_i' + s2 I)``."""
    total = 0.0
    for r, P in pairs:
        S = (P * lam) @ P.T
        S[np.diag_indices_from(S)] += s2
        c, low = linalg.cho_factor(S, lower=True)
        z = linalg.cho_solve((c, low), r)
        total -= 0.5 * (r.size * math.log(2 * math.pi)
                        + 2 * np.sum(np.log(np.diag(c))) + float(r @ z))
    return total


def estimate_noise_variance_marginal(ensemble: SignalEnsemble, mean_curve, eig: "Eigenpairs",
                                     grid, k_max: int = 10) -> float:
    """Noise variance maximising the Gaussian marginal likelihood of the
    demeaned observations given the leading ``k_max`` eigenpairs.

    The search runs over ``log sigma^2`` between the noise floor and the
    pooled residual variance.
    """
    grid = np.asarray(grid, dtype=float)
    K = min(k_max, eig.values.size)
    pairs = _residual_designs(ensemble, grid, mean_curve, eig.functions[:K])
    lam = eig.values[:K]
    pooled = np.concatenate([r for r, _ in pairs])
    lo = floored_noise_variance(0.0, lam)
    hi = max(float(np.mean(pooled**2)), 2 * lo)
    res = optimize.minimize_scalar(
        lambda x: -_marginal_loglik(pairs, lam, math.exp(x)),
        bounds=(math.log(lo), math.log(hi)), method="bounded",
        options={"xatol": 1e-6},
    )
    return float(math.exp(res.x))


class Eigenpairs(NamedTuple):
    values: np.ndarray
    functions: np.ndarray  # (K, G)


def eigendecompose(surface, grid, rtol: float = EIGEN_RTOL) -> Eigenpairs:
    """Eigenpairs of the covariance operator discretised with trapezoid weights.

    Eigenfunctions are orthonormal under the same weights and signed to have
    a non-negative integral. Eigenvalues not exceeding ``rtol`` times the
    largest are dropped.
    """
    C = np.asarray(surface, dtype=float)
    w = trapezoid_weights(grid)
    sw = np.sqrt(w)
    lam, vec = np.linalg.eigh(sw[:, None] * C * sw[None, :])
    order = np.argsort(lam)[::-1]
    lam, vec = lam[order], vec[:, order]
    top = lam[0] if lam.size else 0.0
    keep = lam > max(rtol * top, 0.0) if top > 0 else np.zeros(lam.size, bool)
    lam, vec = lam[keep], vec[:, keep]
    phi = (vec / sw[:, None]).T
    sign = np.where(phi @ w < 0, -1.0, 1.0)
    return Eigenpairs(lam, phi * sign[:, None])


def _posterior_fit(P, r, lam, sigma2):
    """Posterior mean of the scores (see :mod:`fdadegrade.bayes`)."""
    A = P.T @ P / sigma2 + np.diag(1.0 / lam)
    return np.linalg.solve(A, P.T @ r / sigma2)


def aic_scores(ensemble: SignalEnsemble, grid, mean_curve, eig: Eigenpairs,
               sigma2: float, k_max: int,
               likelihood: str = "conditional") -> np.ndarray:
    """Modified AIC ``-2 sum_i loglik_i(K) + 2K`` for ``K = 1..k_max``.

    With ``likelihood="conditional"`` each signal contributes the Gaussian
    log-likelihood of its residuals around the fitted curve
    ``mu + sum_k xi_k phi_k`` (posterior-mean scores) at variance sigma^2.
    ``"marginal"`` uses ``N(mu, P Lambda P' + sigma^2 I)`` instead.
    """
    s2 = floored_noise_variance(sigma2, eig.values)
    out = np.empty(k_max)
    pairs = _residual_designs(ensemble, grid, mean_curve, eig.functions[:k_max])
    m_total = sum(r.size for r, _ in pairs)
    for K in range(1, k_max + 1):
        lam = eig.values[:K]
        if likelihood == "marginal":
            loglik = _marginal_loglik([(r, P[:, :K]) for r, P in pairs], lam, s2)
        else:
            rss = 0.0
            for r, P in pairs:
                xi = _posterior_fit(P[:, :K], r, lam, s2)
                e = r - P[:, :K] @ xi
                rss += float(e @ e)
            loglik = -0.5 * m_total * math.log(2 * math.pi * s2) - rss / (2 * s2)
        out[K - 1] = -2 * loglik + 2 * K
    return out


def select_num_components(ensemble: SignalEnsemble, grid, mean_curve, eig: Eigenpairs,
                          sigma2: float, config: FitConfig = FitConfig()) -> int:
    """Number of components under ``config.k_rule``.

    Raises
    ------
    FitError
        If the covariance has no positive eigenvalue.
    """
    n_pos = eig.values.size
    if n_pos == 0:
        raise FitError("covariance surface has no positive eigenvalue")
    if config.k_rule == "fixed":
        return min(int(config.num_components), n_pos)
    if config.k_rule == "fve":
        frac = np.cumsum(eig.values) / eig.values.sum()
        return int(np.searchsorted(frac, config.fve_threshold - 1e-12) + 1)
    k_max = min(config.k_max, n_pos)
    if k_max == 1:
        return 1
    scores = aic_scores(ensemble, grid, mean_curve, eig, sigma2, k_max, config.aic_likelihood)
    return int(np.argmin(scores) + 1)


def fit_model(ensemble: SignalEnsemble, config: FitConfig = FitConfig()) -> FpcaModel:
    """Estimate mean, covariance, noise variance and eigenpairs.

    Raises
    ------
    FitError
        If any estimation step fails.
    """
    if len(ensemble) < 2:
        raise FitError("fitting needs at least 2 signals")
    M = ensemble.horizon
    grid = uniform_grid(M, config.grid_size)
    mean = estimate_mean(ensemble, config, grid)
    cov = estimate_covariance_surface(ensemble, mean.curve, config, grid)
    eig = eigendecompose(cov.surface, grid)
    if config.noise_method == "marginal" and eig.values.size:
        sigma2 = estimate_noise_variance_marginal(ensemble, mean.curve, eig, grid, config.k_max)
    else:
        sigma2 = estimate_noise_variance(ensemble, mean.curve, cov.surface, grid, cov.bandwidth)
    K = select_num_components(ensemble, grid, mean.curve, eig, sigma2, config)
    meta = {
        "n_signals": len(ensemble),
        "n_observations": int(sum(len(s) for s in ensemble)),
        "mean_bandwidth": mean.bandwidth,
        "cov_bandwidth": cov.bandwidth,
        "k_rule": config.k_rule,
        "aic_likelihood": config.aic_likelihood,
        "noise_method": config.noise_method,
        "num_components": K,
        "noise_variance": sigma2,
        "eigenvalue_spectrum": eig.values[: max(config.k_max, K)].tolist(),
        "seed": config.seed,
    }
    return FpcaModel(grid, mean.curve, eig.values[:K], eig.functions[:K], sigma2, meta)
