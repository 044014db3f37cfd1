"""Closed-loop Monte-Carlo experiments.

One run simulates the plant, lets the sensor decide transmissions from its
local Kalman filter (SODP) or its last transmission (SOD), and feeds the same
channel realization to every remote estimator:

* ``kf``       -- Kalman filter that receives every measurement (reference),
* ``sebkf``    -- event-based Kalman filter,
* ``sampling`` -- rejection-sampling estimator.

Every run draws from its own substreams (see :mod:`evtrigger.streams`), so
results do not depend on execution order or on the number of worker
processes.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _backend, metrics, streams
from .errors import ConfigurationError, SamplingStarvationError
from .estimators import SamplingConfig, SamplingState, sampling_update
from .metrics import RunRecord, SweepRow
from .model import GaussianBelief, LinearSystemModel, cholesky_factor, constant_velocity_2d
from .triggers import ImplicitPolicy, WeightingSpec

ESTIMATORS = ("kf", "sebkf", "sampling")
INITIAL_ESTIMATES = ("perturbed", "mean", "truth")
REFERENCE_ESTIMATOR = "sebkf"

# default alpha_z grid for trigger characterization, dense around event rates 0.05..0.9
ALPHA_GRID = (0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 1, 2, 4, 5, 10, 20, 50, 100,
              200, 300, 500, 1000, 2000, 10000, 50000, 1000000)
# the estimator sweeps stop at 1e4
SWEEP_ALPHA_GRID = ALPHA_GRID[:-2]
BETA_GRID = (2.0, 3.0, 5.0, 10.0, 1000.0)


def parse_estimators(names) -> tuple[str, ...]:
    if isinstance(names, str):
        names = [n for n in names.split(",")]
    out = []
    for n in names:
        n = n.strip().lower()
        if not n:
            continue
        if n not in ESTIMATORS:
            raise ConfigurationError(f"unknown estimator {n!r}; choose from {', '.join(ESTIMATORS)}")
        if n not in out:
            out.append(n)
    if not out:
        raise ConfigurationError("at least one estimator is required")
    return tuple(e for e in ESTIMATORS if e in out)


@dataclass
class ScenarioConfig:
    betas: Sequence[float] = (2.0,)
    alphas: Sequence[float] = ALPHA_GRID
    policy: str = "sodp"
    estimators: Sequence[str] = ESTIMATORS
    runs: int = 100
    steps: int = 150
    seed: int = 0
    delta: float = 0.3
    q: float = 1.0
    model: LinearSystemModel | None = None
    prior_mean: Sequence[float] | None = None
    prior_cov: np.ndarray | None = None
    initial_estimate: str = "perturbed"
    samples: int = 1000
    samples_low_rate: int | None = 5000
    low_rate_threshold: float = 0.1
    mselect: int = 1
    max_batches: int = 1000
    deterministic: bool = False
    burn_in: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.runs < 1 or self.steps < 1:
            raise ConfigurationError("runs and steps must be >= 1")
        if not self.betas or not self.alphas:
            raise ConfigurationError("beta and alpha_z lists must be nonempty")
        if any(not (b > 0 and math.isfinite(b)) for b in self.betas):
            raise ConfigurationError("every beta must be finite and > 0")
        if any(not (a > 0 and math.isfinite(a)) for a in self.alphas):
            raise ConfigurationError("every alpha_z must be finite and > 0")
        if not 0 <= self.burn_in < self.steps:
            raise ConfigurationError("burn_in must lie in [0, steps)")
        ImplicitPolicy.parse(self.policy)
        SamplingConfig(self.samples, self.mselect, self.max_batches)
        if self.samples_low_rate is not None and self.samples_low_rate < 2:
            raise ConfigurationError("samples_low_rate must be >= 2")
        if self.jobs < 1:
            raise ConfigurationError("jobs must be >= 1")
        if self.initial_estimate not in INITIAL_ESTIMATES:
            raise ConfigurationError(f"initial_estimate must be one of {', '.join(INITIAL_ESTIMATES)}")

    def build_model(self) -> LinearSystemModel:
        return self.model if self.model is not None else constant_velocity_2d(self.delta, self.q)

    def build_prior(self, model) -> GaussianBelief:
        mean = np.zeros(model.n_x) if self.prior_mean is None else np.asarray(self.prior_mean, float)
        cov = np.eye(model.n_x) if self.prior_cov is None else np.asarray(self.prior_cov, float)
        return GaussianBelief(mean, cov)

    def point(self, beta, alpha_z, model=None, samples=None) -> "ScenarioPoint":
        model = model or self.build_model()
        spec = WeightingSpec.scaled_identity(beta, alpha_z, model.n_y, deterministic=self.deterministic)
        return ScenarioPoint(
            model=model,
            spec=spec,
            policy=ImplicitPolicy.parse(self.policy),
            steps=self.steps,
            prior=self.build_prior(model),
            seed=self.seed,
            estimators=parse_estimators(self.estimators),
            sampling=SamplingConfig(samples or self.samples, self.mselect, self.max_batches),
            alpha_z=float(alpha_z),
            initial_estimate=self.initial_estimate,
        )


def local_gain_schedule(model: LinearSystemModel, P0, steps: int) -> np.ndarray:
    """Kalman gains of a filter seeing every measurement; data independent."""
    gains = np.empty((steps, model.n_x, model.n_y))
    P = np.asarray(P0, dtype=float)
    F, H = model.F, model.H
    for k in range(steps):
        P = F @ P @ F.T + model.Q
        S = H @ P @ H.T + model.R
        K = np.linalg.solve(S, H @ P).T
        P = (np.eye(model.n_x) - K @ H) @ P
        P = 0.5 * (P + P.T)
        gains[k] = K
    return gains


@dataclass(frozen=True, eq=False)
class ScenarioPoint:
    """Everything a single run needs: one beta, one Z.

    The true initial state ``x0`` is drawn from ``prior``; every estimator
    starts with covariance ``prior.cov`` and a mean chosen by
    ``initial_estimate``:

    ``"perturbed"``  ``x0`` plus an independent ``N(0, prior.cov)`` error,
    ``"mean"``       ``prior.mean``,
    ``"truth"``      ``x0`` itself; the covariance then overstates the
                     error for a while, which pulls ANEES below 1.
    """

    model: LinearSystemModel
    spec: WeightingSpec
    policy: ImplicitPolicy
    steps: int
    prior: GaussianBelief
    seed: int = 0
    estimators: tuple = ESTIMATORS
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    alpha_z: float = math.nan
    initial_estimate: str = "perturbed"
    gains: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "gains", local_gain_schedule(self.model, self.prior.cov, self.steps))

    @property
    def beta(self) -> float:
        return self.spec.beta


@dataclass(frozen=True, eq=False)
class SensorTrace:
    """Ground truth and sensor-side trigger history of one run."""

    states: np.ndarray
    ys: np.ndarray
    cs: np.ndarray
    zs: np.ndarray
    phis: np.ndarray
    gammas: np.ndarray
    local: np.ndarray
    xi: np.ndarray
    xhat0: np.ndarray


@dataclass(frozen=True, eq=False)
class ChannelLog:
    """Transmissions of one run; ``payload_sizes[k]`` counts transmitted floats."""

    gammas: np.ndarray
    payload_sizes: np.ndarray

    @property
    def transmissions(self) -> int:
        return int(np.count_nonzero(self.gammas))


@dataclass(frozen=True, eq=False)
class RunOutcome:
    records: dict
    channel: ChannelLog
    sensor: SensorTrace
    receiver_cs: np.ndarray


def run_sensor(point: ScenarioPoint, run_index: int) -> SensorTrace:
    """Simulate the plant and the sensor's trigger for one run."""
    model = point.model
    T = point.steps
    rng = streams.substream(point.seed, run_index, streams.SENSOR)
    L0 = cholesky_factor(point.prior.cov)
    x0 = point.prior.mean + L0 @ rng.standard_normal(model.n_x)
    if point.initial_estimate == "perturbed":
        xhat0 = x0 + L0 @ rng.standard_normal(model.n_x)
    elif point.initial_estimate == "truth":
        xhat0 = x0.copy()
    else:
        xhat0 = np.array(point.prior.mean, dtype=float)
    W = rng.standard_normal((T, model.n_x)) @ model.Q_chol.T
    V = rng.standard_normal((T, model.n_y)) @ model.R_chol.T
    xi = rng.random(T)
    out = _backend.kernels.sensor_loop(model, point.spec, int(point.policy), point.gains, x0, xhat0,
                                       np.ascontiguousarray(W), np.ascontiguousarray(V), xi)
    return SensorTrace(*out, xi=xi, xhat0=xhat0)


def _run_filter(point, sensor, periodic):
    ys = sensor.ys if periodic else np.where(sensor.gammas[:, None] == 1, sensor.ys, np.nan)
    return _backend.kernels.filter_loop(point.model, point.spec, int(point.policy), periodic,
                                        sensor.xhat0, np.array(point.prior.cov, dtype=float),
                                        sensor.gammas, np.ascontiguousarray(ys), sensor.local)


def _run_sampling(point, sensor, receiver_cs, run_index):
    rng = streams.substream(point.seed, run_index, streams.SAMPLING)
    T = point.steps
    means = np.empty((T, point.model.n_x))
    covs = np.empty((T, point.model.n_x, point.model.n_x))
    state = SamplingState(GaussianBelief(sensor.xhat0, point.prior.cov))
    for k in range(T):
        gamma = bool(sensor.gammas[k])
        try:
            state = sampling_update(state, point.model, gamma, sensor.ys[k] if gamma else None,
                                    receiver_cs[k], point.spec, point.sampling, rng)
        except SamplingStarvationError as exc:
            exc.scenario = {"beta": point.beta, "alpha_z": point.alpha_z, "run": run_index, "step": k}
            raise
        means[k] = state.belief.mean
        covs[k] = state.belief.cov
    return means, covs


def run_closed_loop(point: ScenarioPoint, run_index: int) -> RunOutcome:
    """One Monte-Carlo run of sensor, channel and every requested estimator."""
    sensor = run_sensor(point, run_index)
    sizes = sensor.gammas.astype(int) * (point.model.n_y + (point.model.n_x if point.policy is ImplicitPolicy.SODP else 0))
    channel = ChannelLog(gammas=sensor.gammas, payload_sizes=sizes)

    def record(name, means, covs):
        return RunRecord(gammas=sensor.gammas, zs=sensor.zs, errors=means - sensor.states[1:],
                         covs=covs, seed=point.seed, run_index=run_index, estimator=name)

    records = {}
    means, covs, receiver_cs = _run_filter(point, sensor, periodic=False)
    if not np.array_equal(receiver_cs, sensor.cs):
        raise RuntimeError(f"sensor and receiver implicit measurements diverged in run {run_index}")
    if "sebkf" in point.estimators:
        records["sebkf"] = record("sebkf", means, covs)
    if "kf" in point.estimators:
        m, P, _ = _run_filter(point, sensor, periodic=True)
        records["kf"] = record("kf", m, P)
    if "sampling" in point.estimators:
        m, P = _run_sampling(point, sensor, receiver_cs, run_index)
        records["sampling"] = record("sampling", m, P)
    records = {name: records[name] for name in ESTIMATORS if name in records}
    return RunOutcome(records=records, channel=channel, sensor=sensor, receiver_cs=receiver_cs)


def _sensor_record(point, run_index):
    s = run_sensor(point, run_index)
    return RunRecord(gammas=s.gammas, zs=s.zs, seed=point.seed, run_index=run_index, estimator="trigger")


def _closed_loop_records(point, run_index):
    return run_closed_loop(point, run_index).records


def _map_runs(fn, point, runs, jobs):
    if jobs <= 1:
        return [fn(point, r) for r in range(runs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, [point] * runs, range(runs)))


def characterize_trigger(config: ScenarioConfig) -> list[SweepRow]:
    """Event rate and conditional innovation energy for each (beta, alpha_z)."""
    model = config.build_model()
    rows = []
    for beta in config.betas:
        for alpha in config.alphas:
            point = config.point(beta, alpha, model)
            records = [r.trimmed(config.burn_in) for r in _map_runs(_sensor_record, point, config.runs, config.jobs)]
            rows.append(SweepRow(
                beta=float(beta), alpha_z=float(alpha), estimator="trigger",
                event_rate=metrics.event_rate(records),
                mean_conditional_z_energy=metrics.conditional_z_energy(records),
                runs=config.runs, steps=config.steps, seed=config.seed))
    return rows


def sweep_estimators(config: ScenarioConfig) -> list[SweepRow]:
    """MSE, relative MSE and ANEES per estimator at each (beta, alpha_z).

    The event-based Kalman filter is always evaluated because it is the
    relative-MSE reference.  When the event rate (from a sensor-only pass)
    falls below ``low_rate_threshold``, the sampling estimator uses
    ``samples_low_rate`` samples.
    """
    requested = parse_estimators(config.estimators)
    config = replace(config, estimators=parse_estimators(set(requested) | {REFERENCE_ESTIMATOR}))
    model = config.build_model()
    rows = []
    for beta in config.betas:
        for alpha in config.alphas:
            point = config.point(beta, alpha, model)
            n_samples = config.samples
            if "sampling" in point.estimators and config.samples_low_rate:
                trig = _map_runs(_sensor_record, point, config.runs, config.jobs)
                if metrics.event_rate(trig) < config.low_rate_threshold:
                    n_samples = config.samples_low_rate
                    point = config.point(beta, alpha, model, samples=n_samples)
            per_run = _map_runs(_closed_loop_records, point, config.runs, config.jobs)
            by_est = {name: [rec[name].trimmed(config.burn_in) for rec in per_run] for name in point.estimators}
            rate = metrics.event_rate(by_est[REFERENCE_ESTIMATOR])
            ref_mse = metrics.mse(by_est[REFERENCE_ESTIMATOR])
            for name in point.estimators:
                recs = by_est[name]
                est_mse = metrics.mse(recs)
                rows.append(SweepRow(
                    beta=float(beta), alpha_z=float(alpha), estimator=name, event_rate=rate,
                    mse=est_mse, relative_mse=est_mse / ref_mse if ref_mse > 0 else math.nan,
                    anees=metrics.anees(recs),
                    mean_conditional_z_energy=_safe_energy(recs),
                    runs=config.runs, steps=config.steps,
                    N=n_samples if name == "sampling" else 0, seed=config.seed))
    return rows


def _safe_energy(records):
    try:
        return metrics.conditional_z_energy(records)
    except metrics.UndefinedMetricError:
        return math.nan


def rows_for_beta(rows, beta):
    sel = sorted((r for r in rows if math.isclose(r.beta, beta)), key=lambda r: r.alpha_z)
    if not sel:
        raise ConfigurationError(f"no rows for beta={beta}")
    return sel


def energy_at_event_rate(rows, beta, rates):
    """Conditional innovation energy of one beta curve at given event rates.

    Interpolates linearly in log-log coordinates, as the curves are plotted.
    """
    sel = rows_for_beta(rows, beta)
    x = np.log([r.event_rate for r in sel])
    y = np.log([r.mean_conditional_z_energy for r in sel])
    order = np.argsort(x)
    return np.exp(np.interp(np.log(np.asarray(rates, dtype=float)), x[order], y[order]))


@dataclass(frozen=True)
class BoundaryResult:
    """Largest alpha_z before the target curve's innovation energy exceeds the reference's."""

    alpha_z: float
    event_rate: float
    crossed: bool


def consistency_boundary(source, beta_target: float = 1000.0, beta_reference: float = 2.0) -> BoundaryResult:
    """Graphical consistency limit of the event-based Kalman filter.

    Scans the alpha_z grid upwards while the conditional innovation energy
    of ``beta_target`` stays at or below that of ``beta_reference`` and
    returns the last such grid point with its event rate (under
    ``beta_target``).  ``crossed`` is False when the condition holds on the
    whole grid, in which case the grid maximum is returned.

    ``source`` is either characterization rows or a :class:`ScenarioConfig`
    (characterized for the two betas first).
    """
    if isinstance(source, ScenarioConfig):
        source = characterize_trigger(replace(source, betas=sorted({beta_reference, beta_target})))
    target = {r.alpha_z: r for r in rows_for_beta(source, beta_target)}
    reference = {r.alpha_z: r for r in rows_for_beta(source, beta_reference)}
    grid = sorted(set(target) & set(reference))
    if not grid:
        raise ConfigurationError("target and reference rows share no alpha_z values")
    last = None
    for alpha in grid:
        if target[alpha].mean_conditional_z_energy <= reference[alpha].mean_conditional_z_energy:
            last = alpha
        else:
            if last is None:
                return BoundaryResult(alpha, target[alpha].event_rate, True)
            return BoundaryResult(last, target[last].event_rate, True)
    return BoundaryResult(grid[-1], target[grid[-1]].event_rate, False)
