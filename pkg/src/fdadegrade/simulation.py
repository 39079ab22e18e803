"""Simulation models and the percentile-conditioned prediction experiment.

Three generators share the form ``S(t) = mu(t) + sum_k xi_k phi_k(t) +
sigma eps(t)`` on ``[0, 1]`` with failure threshold ``D = 10``. An
experiment fits a prior to simulated training signals, then predicts the
life of fresh validation signals observed up to a fraction ``p`` of their
actual life and records the relative error of the predicted total life.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import optimize

from .baseline import parametric_baseline
from .bayes import update_posterior
from .exceptions import DegradationError
from .fpca import FitConfig, dumps, fit_model
from .rld import RldQuery, predict_residual_life
from .sampling import (
    SamplingSchedule,
    apply_schedule_all,
    exponential_time_grid,
    fragment_schedule,
    sparse_schedule,
)
from .signals import DegradationSignal, SignalEnsemble
from .smoothing import uniform_grid

log = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
SQRT80 = math.sqrt(80.0)


@dataclass(frozen=True)
class SimModelSpec:
    """Generator of one simulation model.

    Eigenfunctions are stored orthonormal on ``[0, 1]``. The first
    component of Models 2 and 3 is ``3 * 2t``, which is held here as the
    unit-norm ``sqrt(3) t`` with variance ``9 * 4/3 = 12``; the process law
    is the same.
    """

    model_id: int
    mean: Callable
    eigenvalues: Tuple[float, ...]
    eigenfunctions: Tuple[Callable, ...]
    sigma: float = 1.0
    threshold: float = 10.0
    horizon: float = 1.0
    grid_size: int = 51
    stop_low: float = 0.7
    stop_high: float = 1.0

    @property
    def grid(self) -> np.ndarray:
        return uniform_grid(self.horizon, self.grid_size)

    def mean_at(self, t) -> np.ndarray:
        return self.mean(np.asarray(t, dtype=float))

    def components_at(self, t) -> np.ndarray:
        """``(len(t), K)`` matrix of eigenfunction values."""
        t = np.asarray(t, dtype=float).reshape(-1)
        return np.stack([f(t) for f in self.eigenfunctions], 1)

    def covariance(self, s, t) -> np.ndarray:
        P = self.components_at(s)
        Q = self.components_at(t)
        return (P * np.asarray(self.eigenvalues)) @ Q.T


def _quadratic_mean(t):
    return 30.0 * t**2


def _model3_mean(t):
    return 30.0 * t**2 - 2.0 * np.sin(4 * np.pi * t)


def _phi_sqrt5_t2(t):
    return SQRT5 * t**2


def _phi_sqrt3_t(t):
    return math.sqrt(3.0) * t


def _phi_model2_second(t):
    return SQRT80 * t**2 - 0.75 * SQRT80 * t


def model_spec(model_id: int, sigma: float = 1.0) -> SimModelSpec:
    """Specification of simulation Model 1, 2 or 3."""
    if model_id == 1:
        return SimModelSpec(1, _quadratic_mean, (45 / 4,), (_phi_sqrt5_t2,), sigma)
    two = ((9.0 * 4 / 3, 2.25), (_phi_sqrt3_t, _phi_model2_second))
    if model_id == 2:
        return SimModelSpec(2, _quadratic_mean, *two, sigma)
    if model_id == 3:
        return SimModelSpec(3, _model3_mean, *two, sigma)
    raise ValueError(f"unknown simulation model {model_id!r}; expected 1, 2 or 3")


DISTRIBUTIONS = ("normal", "gamma", "t")
GAMMA_SHAPE = 2.0
T_DF = 5.0


def standardized_draws(rng: np.random.Generator, dist: str, size) -> np.ndarray:
    """Zero-mean, unit-variance draws from a normal, shape-2 Gamma or t(5) law."""
    if dist == "normal":
        return rng.standard_normal(size)
    if dist == "gamma":
        return (rng.standard_gamma(GAMMA_SHAPE, size) - GAMMA_SHAPE) / math.sqrt(GAMMA_SHAPE)
    if dist == "t":
        return rng.standard_t(T_DF, size) / math.sqrt(T_DF / (T_DF - 2))
    raise ValueError(f"unknown distribution {dist!r}; expected one of {DISTRIBUTIONS}")


class SimulatedSignal(NamedTuple):
    signal: DegradationSignal
    latent: np.ndarray
    scores: np.ndarray


def simulate_signal(spec: SimModelSpec, rng: np.random.Generator, times=None,
                    score_dist: str = "normal", error_dist: str = "normal",
                    scores=None, signal_id: str = "0") -> SimulatedSignal:
    """One noisy signal, by default on the model's 51-point grid.

    Scores are drawn before the measurement errors. Passing ``scores``
    fixes them instead.
    """
    t = spec.grid if times is None else np.asarray(times, dtype=float)
    K = len(spec.eigenvalues)
    if scores is None:
        z = standardized_draws(rng, score_dist, K)
        xi = np.sqrt(np.asarray(spec.eigenvalues)) * z
    else:
        xi = np.asarray(scores, dtype=float).reshape(K)
    latent = spec.mean_at(t) + spec.components_at(t) @ xi
    noisy = latent + spec.sigma * standardized_draws(rng, error_dist, t.size)
    return SimulatedSignal(DegradationSignal(signal_id, t, noisy), latent, xi)


def failure_time(times, values, threshold: float) -> Optional[float]:
    """First time with ``value >= threshold``; ``None`` if the signal never
    gets there."""
    hit = np.flatnonzero(np.asarray(values) >= threshold)
    return float(np.asarray(times)[hit[0]]) if hit.size else None


def latent_failure_time(spec: SimModelSpec, scores, threshold: Optional[float] = None,
                        resolution: int = 2001) -> Optional[float]:
    """First time the noise-free path ``mu + sum_k xi_k phi_k`` reaches the
    threshold, located on ``[0, M]`` to machine precision.

    The first sign change on a ``resolution``-point grid is refined with
    Brent's method.
    """
    D = spec.threshold if threshold is None else threshold
    xi = np.asarray(scores, dtype=float)

    def excess(t):
        return float(spec.mean_at(np.array([t]))[0] + spec.components_at([t])[0] @ xi - D)

    t = uniform_grid(spec.horizon, resolution)
    f = spec.mean_at(t) + spec.components_at(t) @ xi - D
    hit = np.flatnonzero(f >= 0)
    if hit.size == 0:
        return None
    j = int(hit[0])
    if j == 0:
        return 0.0
    return float(optimize.brentq(excess, t[j - 1], t[j], xtol=1e-14, rtol=1e-14))


def relative_error(estimated: float, actual: float) -> float:
    """``|estimated - actual| / actual``."""
    if not actual > 0:
        raise ValueError(f"actual life must be positive, got {actual}")
    return abs(estimated - actual) / actual


SCENARIOS = ("complete", "sparse", "fragmented")
SAMPLINGS = ("uniform", "nonuniform")
METHODS = ("fpca", "baseline")
DEFAULT_PERCENTILES = tuple(round(0.1 * k, 1) for k in range(1, 10))


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of :func:`run_experiment`.

    ``actual_life`` defines the life of a validation unit: ``"exact"`` is
    the first crossing of its noise-free path, ``"grid"`` the first point
    of the 51-point grid where that path is at or above the threshold.
    ``validation_sampling="scenario"`` observes validation units with the
    same plan as the training units (sparse or fragmented); ``"complete"``
    observes them at every point of the 51-point grid.
    ``stop_at_failure`` additionally ends each training signal at the
    first grid time its noise-free path reaches the threshold.
    ``fit`` defaults to the marginal-likelihood noise variance, which is
    far more stable than the diagonal estimate on six-point signals.
    ``methods`` lists the priors fitted to the same training data:
    ``"fpca"`` and/or ``"baseline"`` (see :mod:`fdadegrade.baseline`).
    """

    model_id: int = 1
    n_train: int = 100
    n_valid: int = 100
    scenario: str = "sparse"
    sampling: str = "nonuniform"
    m_sparse: int = 6
    fragments: int = 2
    fragment_duration: Optional[float] = None
    master_size: int = 51
    ratio: float = 0.9
    stop_at_failure: bool = False
    actual_life: str = "exact"
    validation_sampling: str = "complete"
    percentiles: Tuple[float, ...] = DEFAULT_PERCENTILES
    replications: int = 100
    seed: int = 20100101
    alpha: float = 0.1
    n_bootstrap: int = 500
    point_rule: str = "median"
    methods: Tuple[str, ...] = ("fpca",)
    fit: FitConfig = field(default_factory=lambda: FitConfig(noise_method="marginal"))
    baseline_basis: str = "linear"
    baseline_transform: str = "identity"
    score_dist: str = "normal"
    error_dist: str = "normal"
    sigma: float = 1.0

    def __post_init__(self):
        model_spec(self.model_id)
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"sampling must be one of {SAMPLINGS}")
        if not all(0 < p < 1 for p in self.percentiles):
            raise ValueError("percentiles must lie in (0, 1)")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.validation_sampling not in ("scenario", "complete"):
            raise ValueError("validation_sampling must be 'scenario' or 'complete'")
        if self.actual_life not in ("exact", "grid"):
            raise ValueError("actual_life must be 'exact' or 'grid'")
        if self.point_rule not in ("median", "mean_crossing"):
            raise ValueError("point_rule must be 'median' or 'mean_crossing'")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ValueError(f"methods must be drawn from {METHODS}")
        for d in (self.score_dist, self.error_dist):
            if d not in DISTRIBUTIONS:
                raise ValueError(f"unknown distribution {d!r}")

    @property
    def spec(self) -> SimModelSpec:
        return model_spec(self.model_id, self.sigma)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fit"] = asdict(self.fit)
        d["percentiles"] = list(self.percentiles)
        d["methods"] = list(self.methods)
        return d


def master_grid(config: ExperimentConfig) -> np.ndarray:
    """Candidate observation times for training signals."""
    M = config.spec.horizon
    if config.scenario == "complete":
        return config.spec.grid
    ratio = config.ratio if config.sampling == "nonuniform" else 1.0
    return exponential_time_grid(M, config.master_size, ratio)


def _planned_times(config: ExperimentConfig, grid, n: int, rng: np.random.Generator):
    if config.scenario == "complete":
        return tuple(grid for _ in range(n))
    if config.scenario == "sparse":
        return sparse_schedule(n, config.m_sparse, grid, rng).times
    return fragment_schedule(n, grid, rng, config.fragments, config.fragment_duration).times


def training_ensemble(config: ExperimentConfig, rng: np.random.Generator) -> SignalEnsemble:
    """Simulate, schedule and stop the training signals of one replication."""
    spec = config.spec
    grid = master_grid(config)
    sims = [simulate_signal(spec, rng, grid, config.score_dist, config.error_dist,
                            signal_id=f"train{i}") for i in range(config.n_train)]
    stops = rng.uniform(spec.stop_low, spec.stop_high, config.n_train)
    if config.stop_at_failure:
        for i, s in enumerate(sims):
            T = failure_time(grid, s.latent, spec.threshold)
            if T is not None:
                stops[i] = min(stops[i], T)
    times = _planned_times(config, grid, config.n_train, rng)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sigs = apply_schedule_all([s.signal for s in sims], SamplingSchedule(grid, tuple(times)), stops)
    return SignalEnsemble(tuple(sigs), spec.horizon, {"dropped": len(caught)})


def validation_units(config: ExperimentConfig, rng: np.random.Generator):
    """``(index, observed signal, actual life)`` of the validation units that fail
    within the horizon."""
    spec = config.spec
    sparse = config.validation_sampling == "scenario" and config.scenario != "complete"
    grid = master_grid(config) if sparse else spec.grid
    sims = [simulate_signal(spec, rng, grid, config.score_dist, config.error_dist,
                            signal_id=f"valid{j}") for j in range(config.n_valid)]
    if sparse:
        planned = _planned_times(config, grid, config.n_valid, rng)
    out = []
    for j, sim in enumerate(sims):
        if config.actual_life == "exact":
            T = latent_failure_time(spec, sim.scores)
        else:
            T = failure_time(grid, sim.latent, spec.threshold)
        if T is None or T <= 0:
            continue
        sig = sim.signal
        if sparse:
            idx = np.searchsorted(grid, planned[j])
            sig = DegradationSignal(sig.id, grid[idx], sig.values[idx])
        out.append((j, sig, T))
    return out


def _fit(config: ExperimentConfig, ensemble: SignalEnsemble, method: str):
    """Return ``(model, value transform)`` for one prior."""
    if method == "fpca":
        return fit_model(ensemble, config.fit), None
    base = parametric_baseline(ensemble, config.baseline_transform, config.baseline_basis,
                               config.fit.grid_size)
    return base.model, base


class ReplicationResult(NamedTuple):
    replication: int
    # method -> (P,) arrays; NaN where the prior could not be fitted
    median_error: Dict[str, np.ndarray]
    median_error_alt: Dict[str, np.ndarray]
    coverage: Dict[str, np.ndarray]
    ci_length: Dict[str, np.ndarray]
    n_valid: int
    n_pred_failures: int
    failures: List[str]
    num_components: Dict[str, int]


def run_replication(config: ExperimentConfig, rep: int) -> ReplicationResult:
    """One replication: fit on fresh training data, predict fresh validation data."""
    spec = config.spec
    ss_train, ss_valid, ss_boot = np.random.SeedSequence([config.seed, rep]).spawn(3)
    boot_key = int(ss_boot.generate_state(1)[0])
    P = len(config.percentiles)
    failures: List[str] = []
    ensemble = training_ensemble(config, np.random.default_rng(ss_train))

    priors = {}
    for method in config.methods:
        try:
            priors[method] = _fit(config, ensemble, method)
        except DegradationError as exc:
            failures.append(f"replication {rep}: {method} fit failed: {exc}")
            log.warning(failures[-1])

    valid = validation_units(config, np.random.default_rng(ss_valid))

    out = {k: {} for k in ("err", "alt", "cov", "len")}
    n_fail = 0
    ncomp = {}
    for method in config.methods:
        shape = (len(valid), P)
        err, alt, cov, length = (np.full(shape, np.nan) for _ in range(4))
        if method in priors:
            model, base = priors[method]
            ncomp[method] = model.K
            D = spec.threshold if base is None else base.transform_threshold(spec.threshold)
            for a, (j, sig, T) in enumerate(valid):
                if base is not None:
                    sig = base.transform_signal(sig)
                for b, p in enumerate(config.percentiles):
                    t_star = p * T
                    try:
                        state = update_posterior(model, sig.truncate(t_star + 1e-12), t_star)
                        q = RldQuery(D, t_star, spec.horizon, config.alpha, config.n_bootstrap,
                                     (boot_key, j, b))
                        res = predict_residual_life(state, q, config.point_rule)
                    except DegradationError:
                        n_fail += 1
                        continue
                    err[a, b] = relative_error(t_star + res.point_estimate, T)
                    if res.alternative_estimate is not None:
                        alt[a, b] = relative_error(t_star + res.alternative_estimate, T)
                    lo, hi = res.interval
                    cov[a, b] = float(lo <= T - t_star <= hi)
                    length[a, b] = hi - lo
        # all-NaN columns (failed fit) stay NaN
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out["err"][method] = _column_stat(np.nanmedian, err, P)
            out["alt"][method] = _column_stat(np.nanmedian, alt, P)
            out["cov"][method] = _column_stat(np.nanmean, cov, P)
            out["len"][method] = _column_stat(np.nanmean, length, P)
    return ReplicationResult(rep, out["err"], out["alt"], out["cov"], out["len"],
                             len(valid), n_fail, failures, ncomp)


def _nullable(x):
    """NaN (an all-failed cell) as JSON null."""
    if isinstance(x, dict):
        return {k: _nullable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_nullable(v) for v in x]
    if isinstance(x, (float, np.floating)) and not math.isfinite(x):
        return None
    return x


def _column_stat(fn, arr, P):
    return fn(arr, axis=0) if arr.shape[0] else np.full(P, np.nan)


def _run_one(args):
    return run_replication(*args)


@dataclass(eq=False)
class ExperimentResult:
    """Per-percentile, per-replication summaries of :func:`run_experiment`.

    Arrays have shape ``(n_percentiles, replications)``.
    """

    config: ExperimentConfig
    median_error: Dict[str, np.ndarray]
    median_error_alt: Dict[str, np.ndarray]
    coverage: Dict[str, np.ndarray]
    ci_length: Dict[str, np.ndarray]
    failures: List[str]
    num_components: Dict[str, List[int]]
    n_pred_failures: int = 0

    def summary(self, method: str = "fpca", what: str = "median_error") -> np.ndarray:
        """Across-replication aggregate per percentile: median for errors,
        mean for coverage and interval length."""
        arr = getattr(self, what)[method]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if what.startswith("median_error"):
                return np.nanmedian(arr, axis=1)
            return np.nanmean(arr, axis=1)

    def rows(self):
        c = self.config
        alt_name = "mean_crossing" if c.point_rule == "median" else "median"
        for method in c.methods:
            for b, p in enumerate(c.percentiles):
                for r in range(c.replications):
                    yield {
                        "percentile": p,
                        "replication": r,
                        "scenario": c.scenario,
                        "sampling": c.sampling,
                        "median_error": float(self.median_error[method][b, r]),
                        "coverage": float(self.coverage[method][b, r]),
                        "method": method,
                        "point_rule": c.point_rule,
                        f"median_error_{alt_name}": float(self.median_error_alt[method][b, r]),
                        "mean_ci_length": float(self.ci_length[method][b, r]),
                    }

    def write_table(self, dest, fmt: str = "csv") -> None:
        rows = list(self.rows())
        if fmt == "json":
            dest.write(dumps(_nullable(rows)) + "\n")
            return
        w = csv.DictWriter(dest, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    def manifest(self) -> dict:
        from . import __version__

        return _nullable({
            "package_version": __version__,
            "config": self.config.to_dict(),
            "distributions": {"gamma_shape": GAMMA_SHAPE, "t_df": T_DF},
            "failures": self.failures,
            "n_prediction_failures": self.n_pred_failures,
            "num_components": self.num_components,
            "summary": {
                m: {
                    "median_error": self.summary(m).tolist(),
                    "median_error_alt": self.summary(m, "median_error_alt").tolist(),
                    "coverage": self.summary(m, "coverage").tolist(),
                    "mean_ci_length": self.summary(m, "ci_length").tolist(),
                }
                for m in self.config.methods
            },
        })


def run_experiment(config: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Run all replications of ``config``.

    Replication ``r`` draws everything from ``SeedSequence([seed, r])``, so
    the result does not depend on ``threads``.
    """
    args = [(config, r) for r in range(config.replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            reps = list(ex.map(_run_one, args))
    else:
        reps = [_run_one(a) for a in args]
    P, R = len(config.percentiles), config.replications

    def stack(key):
        return {m: np.stack([getattr(x, key)[m] for x in reps], axis=1).reshape(P, R)
                for m in config.methods}

    return ExperimentResult(
        config,
        stack("median_error"),
        stack("median_error_alt"),
        stack("coverage"),
        stack("ci_length"),
        [f for x in reps for f in x.failures],
        {m: [x.num_components.get(m, 0) for x in reps] for m in config.methods},
        sum(x.n_pred_failures for x in reps),
    )
