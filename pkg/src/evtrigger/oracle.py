"""Reference computations for the estimators.

:func:`quadrature_posterior_no_event` evaluates the exact posterior after a
step without transmission by brute-force trapezoidal quadrature::

    p(x | no event) ∝ w(x) N(x; prior),   w(x) = ∫ phi(y - c) N(y; Hx, R) dy

It is limited to ``n_x <= 2`` and scalar measurements.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import streams
from .errors import ConfigurationError, GridTooSmallError
from .model import GaussianBelief, LinearSystemModel
from .triggers import WeightingSpec, phi_batch

# radius (in units of sqrt(Z)) beyond which phi_beta < 1e-16
_PHI_LOG_FLOOR = 2.0 * np.log(1e16)
_CHUNK = 512


@dataclass(frozen=True)
class GridSpec:
    """Uniform quadrature grids.

    Bounds default to ``mean ± state_halfwidth`` prior standard deviations for
    the state axes; the measurement axis defaults to the overlap of the
    weighting function's support with the measurement likelihood's support.
    """

    state_points: int = 1025
    meas_points: int = 4097
    state_halfwidth: float = 8.0
    meas_halfwidth: float = 8.0
    state_bounds: tuple | None = None
    meas_bounds: tuple | None = None
    boundary_tol: float = 1e-8

    def __post_init__(self):
        if self.state_points < 64 or self.meas_points < 64:
            raise ConfigurationError("quadrature grids need at least 64 points per axis")
        if not self.state_halfwidth > 0 or not self.meas_halfwidth > 0:
            raise ConfigurationError("grid half-widths must be positive")

    def refined(self) -> "GridSpec":
        """Same bounds with twice the resolution."""
        return GridSpec(2 * self.state_points - 1, 2 * self.meas_points - 1, self.state_halfwidth,
                        self.meas_halfwidth, self.state_bounds, self.meas_bounds, self.boundary_tol)


def _trapezoid_weights(n, step):
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    return w


def _check_scope(model, spec, max_states=None):
    if model.n_y != 1 or spec.n_y != 1:
        raise ConfigurationError("quadrature oracle supports scalar measurements only")
    if max_states is not None and model.n_x > max_states:
        raise ConfigurationError(f"quadrature oracle supports at most {max_states} state dimensions")


def _meas_axis(s_min, s_max, c, model, spec, grid):
    if grid.meas_bounds is not None:
        lo, hi = map(float, grid.meas_bounds)
    else:
        sigma = float(np.sqrt(model.R[0, 0]))
        lo, hi = s_min - grid.meas_halfwidth * sigma, s_max + grid.meas_halfwidth * sigma
        if spec.deterministic:
            radius = 1.0
        else:
            radius = _PHI_LOG_FLOOR ** (1.0 / spec.beta)
        half = radius * float(np.sqrt(spec.Z[0, 0]))
        lo, hi = max(lo, c - half), min(hi, c + half)
    if not hi > lo:
        raise GridTooSmallError("measurement grid is empty: the trigger region misses the likelihood support")
    return np.linspace(lo, hi, grid.meas_points)


def nontransmission_likelihood(s, c, model: LinearSystemModel, spec: WeightingSpec, grid: GridSpec | None = None):
    """``w(s) = ∫ phi(y - c) N(y; s, R) dy`` for scalar measurement means ``s``."""
    grid = grid or GridSpec()
    _check_scope(model, spec)
    s = np.asarray(s, dtype=float).reshape(-1)
    c = float(np.asarray(c, dtype=float).reshape(-1)[0])
    var = float(model.R[0, 0])
    if var == 0.0:
        return phi_batch((s - c)[:, None], spec)
    y = _meas_axis(s.min(), s.max(), c, model, spec, grid)
    weights = _trapezoid_weights(y.size, y[1] - y[0]) * phi_batch((y - c)[:, None], spec)
    norm = 1.0 / np.sqrt(2.0 * np.pi * var)
    out = np.empty_like(s)
    for start in range(0, s.size, _CHUNK):
        block = s[start:start + _CHUNK, None]
        out[start:start + _CHUNK] = norm * np.exp(-0.5 * (y[None, :] - block) ** 2 / var) @ weights
    return out


def quadrature_posterior_no_event(prior: GaussianBelief, model: LinearSystemModel, c,
                                  spec: WeightingSpec, grid: GridSpec | None = None):
    """Posterior mean and covariance after a non-event step.

    ``prior`` is the *predicted* belief; the caller applies the prediction.
    Raises :class:`GridTooSmallError` when the posterior density on the
    state-grid boundary exceeds ``boundary_tol`` times its peak.
    """
    grid = grid or GridSpec()
    _check_scope(model, spec, max_states=2)
    n_x = model.n_x
    mean0 = prior.mean
    sd = np.sqrt(np.diag(prior.cov))
    if grid.state_bounds is not None:
        bounds = np.asarray(grid.state_bounds, dtype=float).reshape(n_x, 2)
    else:
        bounds = np.stack([mean0 - grid.state_halfwidth * sd, mean0 + grid.state_halfwidth * sd], axis=1)
    axes = [np.linspace(lo, hi, grid.state_points) for lo, hi in bounds]
    weights_1d = [_trapezoid_weights(a.size, a[1] - a[0]) for a in axes]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)  # (..., n_x)
    pts = mesh.reshape(-1, n_x)

    s = pts @ model.H[0]
    if n_x == 1:
        w = nontransmission_likelihood(s, c, model, spec, grid)
    else:
        # w depends on x only through s = Hx; tabulate on a fine s-axis
        s_axis = np.linspace(s.min(), s.max(), 8 * grid.state_points + 1)
        w = np.interp(s, s_axis, nontransmission_likelihood(s_axis, c, model, spec, grid))

    d = pts - mean0
    maha = np.einsum("ij,ij->i", d @ np.linalg.inv(prior.cov), d)
    dens = (w * np.exp(-0.5 * maha)).reshape(mesh.shape[:-1])

    peak = dens.max()
    if not peak > 0:
        raise GridTooSmallError("posterior density vanishes on the grid")
    edge = max(np.abs(np.take(dens, idx, axis=ax)).max() for ax in range(n_x) for idx in (0, -1))
    if edge > grid.boundary_tol * peak:
        raise GridTooSmallError(
            f"posterior density on the grid boundary is {edge / peak:.2e} of its peak "
            f"(tolerance {grid.boundary_tol:.0e}); widen the state grid")

    W = weights_1d[0]
    for wd in weights_1d[1:]:
        W = np.multiply.outer(W, wd)
    mass = (W * dens).reshape(-1)
    total = mass.sum()
    mean = mass @ pts / total
    d = pts - mean
    cov = (d * mass[:, None]).T @ d / total
    return mean, 0.5 * (cov + cov.T)


def chi2_anees_bounds(runs: int, steps: int, n_x: int, confidence: float = 0.95):
    """Two-sided chi-square band for an ``n_x``-normalized ANEES.

    Treats the ``runs * steps * n_x`` unit-variance error components as
    independent, so the band is optimistic for time-correlated errors.
    """
    if not 0.0 < confidence < 1.0:
        raise ConfigurationError("confidence must lie in (0, 1)")
    dof = int(runs) * int(steps) * int(n_x)
    if dof < 1:
        raise ConfigurationError("need at least one degree of freedom")
    tail = 0.5 * (1.0 - confidence)
    return float(stats.chi2.ppf(tail, dof) / dof), float(stats.chi2.ppf(1.0 - tail, dof) / dof)


# agreement required by check_estimators
SEBKF_TOLERANCE = 1e-3
SAMPLING_MEAN_TOLERANCE = 0.01
SAMPLING_VAR_RELATIVE_TOLERANCE = 0.05


@dataclass(frozen=True)
class OracleComparison:
    """One estimator's non-event posterior next to the quadrature reference."""

    beta: float
    method: str
    mean: float
    var: float
    oracle_mean: float
    oracle_var: float
    mean_error: float
    var_error: float
    var_relative: bool
    mean_tolerance: float
    var_tolerance: float

    @property
    def ok(self) -> bool:
        return self.mean_error <= self.mean_tolerance and self.var_error <= self.var_tolerance


def check_estimators(posterior: GaussianBelief, model: LinearSystemModel, c, alpha_z: float, betas,
                     samples: int = 100_000, mselect: int = 1, seed: int = 0,
                     grid: GridSpec | None = None, deterministic: bool = False):
    """Compare one non-event step of both estimators with quadrature.

    ``posterior`` is the belief before the step; the oracle sees its Kalman
    prediction.  The event-based Kalman filter is compared only at
    ``beta == 2``, where it is exact; the sampling estimator at every beta.
    Only scalar models are supported.  :class:`GridTooSmallError` propagates.
    """
    from .estimators import SamplingConfig, SamplingState, kf_predict, sampling_update, sebkf_update

    if model.n_x != 1:
        raise ConfigurationError("the estimator check uses scalar models")
    c = np.atleast_1d(np.asarray(c, dtype=float))
    pred = kf_predict(posterior, model)
    out = []
    for i, beta in enumerate(betas):
        spec = WeightingSpec.scaled_identity(beta, alpha_z, 1, deterministic=deterministic)
        om, ov = quadrature_posterior_no_event(pred, model, c, spec, grid)
        om, ov = float(om[0]), float(ov[0, 0])
        if beta == 2 and not deterministic:
            b = sebkf_update(pred, model, False, None, c, spec.Z)
            m, v = float(b.mean[0]), float(b.cov[0, 0])
            out.append(OracleComparison(float(beta), "sebkf", m, v, om, ov, abs(m - om), abs(v - ov), False,
                                        SEBKF_TOLERANCE, SEBKF_TOLERANCE))
        rng = streams.substream(seed, i, streams.SAMPLING)
        st = sampling_update(SamplingState(posterior), model, False, None, c, spec,
                             SamplingConfig(samples, mselect), rng)
        m, v = float(st.belief.mean[0]), float(st.belief.cov[0, 0])
        out.append(OracleComparison(float(beta), "sampling", m, v, om, ov, abs(m - om), abs(v - ov) / ov, True,
                                    SAMPLING_MEAN_TOLERANCE, SAMPLING_VAR_RELATIVE_TOLERANCE))
    return out
