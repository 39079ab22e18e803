"""Nonparametric degradation modelling and residual-life prediction.

The prior of the degradation process is estimated from an ensemble of
complete, sparse or fragmented training signals by functional principal
component analysis; a new unit's scores are then updated from its own
observations and the remaining life up to a failure threshold is
predicted with bootstrap intervals.
"""

from .baseline import BaselineModel, parametric_baseline
from .bayes import (
    PosteriorState,
    design_matrix,
    posterior_mean_curve,
    posterior_variance_curve,
    prior_state,
    update_posterior,
)
from .exceptions import (
    AlreadyFailedError,
    DegenerateVarianceError,
    DegradationError,
    DomainError,
    FitError,
    ModelFormatError,
    SignalError,
)
from .fpca import FitConfig, FpcaModel, eigendecompose, fit_model
from .rld import (
    RldQuery,
    RldResult,
    bootstrap_residual_life,
    confidence_interval,
    point_estimate,
    predict_residual_life,
    rld_cdf,
)
from .sampling import (
    SamplingSchedule,
    apply_schedule,
    exponential_time_grid,
    fragment_schedule,
    sparse_schedule,
)
from .signals import (
    DegradationSignal,
    FailureSpec,
    SignalEnsemble,
    censor_at_failure,
    load_ensemble,
    write_ensemble,
)
from .simulation import (
    ExperimentConfig,
    ExperimentResult,
    failure_time,
    model_spec,
    relative_error,
    run_experiment,
    simulate_signal,
)
from .smoothing import SmoothingConfig, local_quadratic_fit, select_bandwidth_locv

__version__ = "0.1.0"
