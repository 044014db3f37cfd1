"""Generalized Gaussian event triggers with matching remote estimators."""
from . import _backend
from .errors import (
    ConfigurationError,
    ConvergenceError,
    CovarianceNotPSDError,
    EvtriggerError,
    GridTooSmallError,
    NumericalError,
    SamplingStarvationError,
    UndefinedMetricError,
)
from .estimators import (
    SampleCloud,
    SamplingConfig,
    SamplingState,
    kf_predict,
    kf_update,
    moments,
    sampling_update,
    sebkf_update,
    select_max_variance,
)
from .model import (
    GaussianBelief,
    LinearSystemModel,
    Trajectory,
    constant_velocity_2d,
    sample_gaussian,
    simulate,
    steady_state_prediction_covariance,
)
from .triggers import (
    ImplicitPolicy,
    Payload,
    TriggerDecision,
    TriggerState,
    WeightingSpec,
    decide,
    on_event,
    phi,
    phi_batch,
    propagate_implicit,
    transmission_probability,
)

__version__ = "0.1.0"
BACKEND = _backend.name
