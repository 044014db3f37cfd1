"""Remote estimators for event-triggered measurements.

* :func:`kf_predict` / :func:`kf_update` -- the standard Kalman filter.
* :func:`sebkf_update` -- event-based Kalman update that, when no event
  occurred, fuses the implicit measurement ``c`` with noise ``R + Z``.
* :func:`sampling_update` -- rejection-sampling estimator that keeps only
  predicted samples whose synthesized measurements would not have fired the
  trigger either.  Exact for any weighting function up to Monte-Carlo error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalError, SamplingStarvationError
from .model import GaussianBelief, LinearSystemModel, cholesky_factor, symmetrize
from .triggers import WeightingSpec, phi_batch


def kf_predict(belief: GaussianBelief, model: LinearSystemModel) -> GaussianBelief:
    F = model.F
    return GaussianBelief(F @ belief.mean, symmetrize(F @ belief.cov @ F.T + model.Q))


def kf_update(belief_pred: GaussianBelief, model: LinearSystemModel, y) -> GaussianBelief:
    """Textbook Kalman measurement update with ``(y, R)``."""
    H = model.H
    P = belief_pred.cov
    S = H @ P @ H.T + model.R
    try:
        K = P @ H.T @ np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is singular") from exc
    y = np.asarray(y, dtype=float).reshape(-1)
    mean = belief_pred.mean + K @ (y - H @ belief_pred.mean)
    return GaussianBelief(mean, symmetrize(P - K @ S @ K.T))


def sebkf_update(belief_pred: GaussianBelief, model: LinearSystemModel, gamma, y, c, Z) -> GaussianBelief:
    """Event-based Kalman update.

    ``gamma`` true: ordinary update with the received ``y``.  ``gamma`` false:
    ``c`` acts as a measurement with covariance ``R + Z``.  The gain, and hence
    the covariance, depends only on ``gamma``, never on ``y`` or ``c``.
    """
    gamma = bool(gamma)
    H = model.H
    P = belief_pred.cov
    c = np.zeros(model.n_y) if c is None else np.asarray(c, dtype=float).reshape(-1)
    S = H @ P @ H.T + model.R
    if not gamma:
        S = S + np.asarray(Z, dtype=float).reshape(model.n_y, model.n_y)
    HP = H @ P
    try:
        K = np.linalg.solve(S, HP).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is singular") from exc
    z_pred = H @ belief_pred.mean - c
    if gamma:
        if y is None:
            raise ConfigurationError("gamma=1 requires a measurement")
        innovation = (np.asarray(y, dtype=float).reshape(-1) - c) - z_pred
    else:
        innovation = -z_pred
    mean = belief_pred.mean + K @ innovation
    cov = (np.eye(model.n_x) - K @ H) @ P
    return GaussianBelief(mean, symmetrize(cov))


@dataclass(frozen=True, eq=False)
class SampleCloud:
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 2:
            raise ConfigurationError("a sample cloud needs at least two state vectors")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class SamplingConfig:
    """``N`` samples kept per step, ``M`` extra subset draws, batch cap."""

    N: int = 1000
    M: int = 1
    max_batches: int = 1000

    def __post_init__(self):
        if self.N < 2 or self.M < 1 or self.max_batches < 1:
            raise ConfigurationError("SamplingConfig needs N >= 2, M >= 1, max_batches >= 1")


@dataclass(frozen=True, eq=False)
class SamplingState:
    """Posterior belief plus the sample cloud that produced it (non-event steps only)."""

    belief: GaussianBelief
    cloud: SampleCloud | None = None


def moments(cloud) -> GaussianBelief:
    """Sample mean and unbiased (``N - 1``) sample covariance."""
    x = cloud.samples if isinstance(cloud, SampleCloud) else np.asarray(cloud, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ConfigurationError("moments need at least two samples")
    mean = x.mean(axis=0)
    d = x - mean
    return GaussianBelief(mean, symmetrize(d.T @ d / (x.shape[0] - 1)))


def _total_variance(x):
    return float(np.var(x, axis=0, ddof=1).sum())


def select_max_variance(accepted, N: int, M: int, rng) -> SampleCloud:
    """Pick ``N`` of the accepted samples, ``M + 1`` times, keeping the widest.

    Subsets are drawn uniformly without replacement; a later subset replaces
    the kept one unless its total variance (trace of the sample covariance)
    is smaller.
    """
    x = accepted.samples if isinstance(accepted, SampleCloud) else np.asarray(accepted, dtype=float)
    if x.shape[0] < N:
        raise ConfigurationError(f"need at least {N} accepted samples, got {x.shape[0]}")
    if x.shape[0] == N:
        return SampleCloud(x)
    best = x[rng.choice(x.shape[0], size=N, replace=False)]
    best_var = _total_variance(best)
    for _ in range(M):
        cand = x[rng.choice(x.shape[0], size=N, replace=False)]
        var = _total_variance(cand)
        if not var < best_var:
            best, best_var = cand, var
    return SampleCloud(best)


@dataclass
class RejectionTrace:
    """Per-batch proposals recorded by :func:`sampling_update` for inspection."""

    batches: list

    def __init__(self):
        self.batches = []


def _propose_batch(parents, model, c, spec, rng):
    n = parents.shape[0]
    children = parents @ model.F.T + rng.standard_normal((n, model.n_x)) @ model.Q_chol.T
    ys = children @ model.H.T + rng.standard_normal((n, model.n_y)) @ model.R_chol.T
    zs = ys - c
    xi = rng.random(n)
    keep = xi <= phi_batch(zs, spec)
    return children, zs, xi, keep


def sampling_update(state: SamplingState, model: LinearSystemModel, gamma, y, c,
                    spec: WeightingSpec, config: SamplingConfig, rng,
                    trace: RejectionTrace | None = None) -> SamplingState:
    """One step of the rejection-sampling estimator.

    Event steps run the Kalman predict/update and drop the cloud.  Non-event
    steps propagate the cloud (drawn from the Gaussian belief if there is
    none), synthesize measurements, reject samples that would have triggered,
    and repeat with parents resampled from the cloud until ``N`` are accepted.
    """
    if gamma:
        if y is None:
            raise ConfigurationError("gamma=1 requires a measurement")
        pred = kf_predict(state.belief, model)
        return SamplingState(sebkf_update(pred, model, True, y, c, spec.Z), None)
    if c is None:
        raise ConfigurationError("gamma=0 requires the implicit measurement c")
    c = np.asarray(c, dtype=float).reshape(-1)
    N = config.N
    if state.cloud is None:
        L = cholesky_factor(state.belief.cov)
        parents = state.belief.mean + rng.standard_normal((N, model.n_x)) @ L.T
    else:
        parents = state.cloud.samples
    accepted = []
    n_accepted = 0
    batches = 0
    while n_accepted < N:
        if batches >= config.max_batches:
            raise SamplingStarvationError(
                f"only {n_accepted} of {N} samples accepted after {batches} batches; "
                "the non-transmission region is too tight (high event-rate regime)",
                accepted=n_accepted, batches=batches)
        if batches == 0 and parents.shape[0] == N:
            batch_parents = parents
        else:
            batch_parents = parents[rng.integers(0, parents.shape[0], size=N)]
        children, zs, xi, keep = _propose_batch(batch_parents, model, c, spec, rng)
        if trace is not None:
            trace.batches.append((children, zs, xi, keep))
        accepted.append(children[keep])
        n_accepted += int(keep.sum())
        batches += 1
    pool = np.concatenate(accepted, axis=0)
    cloud = select_max_variance(pool, N, config.M, rng)
    return SamplingState(moments(cloud), cloud)
