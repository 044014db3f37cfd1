"""Monte-Carlo evaluation metrics over per-run records."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import NumericalError, UndefinedMetricError


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Per-step outcome of one run for one estimator.

    ``errors`` and ``covs`` are ``None`` for trigger-only studies.
    """

    gammas: np.ndarray
    zs: np.ndarray
    errors: np.ndarray | None = None
    covs: np.ndarray | None = None
    seed: int = 0
    run_index: int = 0
    estimator: str = ""

    @property
    def steps(self) -> int:
        return self.gammas.shape[0]

    def trimmed(self, burn_in: int) -> "RunRecord":
        """Drop the first ``burn_in`` steps."""
        if burn_in <= 0:
            return self
        cut = lambda a: None if a is None else a[burn_in:]  # noqa: E731
        return RunRecord(cut(self.gammas), cut(self.zs), cut(self.errors), cut(self.covs),
                         self.seed, self.run_index, self.estimator)


@dataclass(frozen=True)
class SweepRow:
    beta: float
    alpha_z: float
    estimator: str = ""
    event_rate: float = math.nan
    mse: float = math.nan
    relative_mse: float = math.nan
    anees: float = math.nan
    mean_conditional_z_energy: float = math.nan
    runs: int = 0
    steps: int = 0
    N: int = 0
    seed: int = 0

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _nonempty(records):
    records = list(records)
    if not records:
        raise UndefinedMetricError("no records")
    return records


def _with_errors(records):
    records = _nonempty(records)
    if any(r.errors is None for r in records):
        raise UndefinedMetricError("records carry no estimation errors")
    return records


def mse(records) -> float:
    """Mean over runs and steps of the squared error norm."""
    records = _with_errors(records)
    total = sum(float(np.sum(r.errors**2)) for r in records)
    count = sum(r.errors.shape[0] for r in records)
    if count == 0:
        raise UndefinedMetricError("records are empty")
    return total / count


def relative_mse(target_records, reference_records) -> float:
    ref = mse(reference_records)
    if ref == 0.0:
        raise UndefinedMetricError("reference MSE is zero")
    return mse(target_records) / ref


def nees(record: RunRecord) -> np.ndarray:
    """Per-step ``e' P^-1 e`` for one run."""
    out = np.empty(record.errors.shape[0])
    for k, (e, P) in enumerate(zip(record.errors, record.covs)):
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            raise NumericalError(
                f"covariance not positive definite in run {record.run_index}, step {k}") from None
        u = np.linalg.solve(L, e)
        out[k] = u @ u
    return out


def anees(records) -> float:
    """Average NEES normalized by ``n_x`` so that a consistent filter scores 1."""
    records = _with_errors(records)
    total = 0.0
    count = 0
    for r in records:
        try:
            u = np.linalg.solve(np.linalg.cholesky(r.covs), r.errors[..., None])[..., 0]
        except np.linalg.LinAlgError:
            nees(r)  # locates the offending step
            raise
        total += float(np.sum(u * u))
        count += r.errors.size
    if count == 0:
        raise UndefinedMetricError("records are empty")
    return total / count


def event_rate(records) -> float:
    records = _nonempty(records)
    n = sum(r.gammas.shape[0] for r in records)
    if n == 0:
        raise UndefinedMetricError("records are empty")
    return sum(int(np.count_nonzero(r.gammas)) for r in records) / n


def conditional_z_energy(records) -> float:
    """Mean of ``z' z`` over the non-event steps."""
    records = _nonempty(records)
    total = 0.0
    count = 0
    for r in records:
        quiet = np.asarray(r.gammas) == 0
        total += float(np.sum(r.zs[quiet] ** 2))
        count += int(np.count_nonzero(quiet))
    if count == 0:
        raise UndefinedMetricError("no non-event steps")
    return total / count
