"""Discrete-time LTI Gaussian state-space model.

    x[k+1] = F x[k] + w[k],   w ~ N(0, Q)
    y[k]   = H x[k] + v[k],   v ~ N(0, R)
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConvergenceError, CovarianceNotPSDError
from .streams import make_rng

SYM_RTOL = 1e-10
_TINY = np.finfo(float).tiny


def _as_matrix(a, name):
    m = np.array(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise ConfigurationError(f"{name} must be a matrix, got shape {m.shape}")
    return m


def _is_symmetric(m, rtol=SYM_RTOL):
    scale = max(np.abs(m).max(), _TINY)
    return np.abs(m - m.T).max() <= rtol * scale


def symmetrize(m):
    return 0.5 * (m + m.T)


def _check_psd(m, name, strict):
    if m.shape[0] != m.shape[1]:
        raise ConfigurationError(f"{name} must be square, got {m.shape}")
    if not _is_symmetric(m):
        raise ConfigurationError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(symmetrize(m))
    floor = SYM_RTOL * max(np.abs(eig).max(), _TINY)
    if strict and eig.min() <= 0.0:
        raise CovarianceNotPSDError(f"{name} must be positive definite (min eigenvalue {eig.min():.3g})")
    if eig.min() < -floor:
        raise CovarianceNotPSDError(f"{name} must be positive semidefinite (min eigenvalue {eig.min():.3g})")


@dataclass(frozen=True, eq=False)
class LinearSystemModel:
    """Time-invariant linear Gaussian plant ``(F, H, Q, R)``.

    Detectability of ``(F, H)`` is the caller's responsibility; the
    constructor emits a :class:`UserWarning` when the PBH test fails but
    never rejects the model.
    """

    F: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_chol: np.ndarray = field(init=False, repr=False)
    R_chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        F = _as_matrix(self.F, "F")
        H = _as_matrix(self.H, "H")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        n_x = F.shape[0]
        if F.shape != (n_x, n_x):
            raise ConfigurationError(f"F must be square, got {F.shape}")
        if H.shape[1] != n_x:
            raise ConfigurationError(f"H has {H.shape[1]} columns, expected {n_x}")
        n_y = H.shape[0]
        if Q.shape != (n_x, n_x):
            raise ConfigurationError(f"Q must be {n_x}x{n_x}, got {Q.shape}")
        if R.shape != (n_y, n_y):
            raise ConfigurationError(f"R must be {n_y}x{n_y}, got {R.shape}")
        _check_psd(Q, "Q", strict=False)
        # exactly-zero R is a noise-free sensor; any other singular R is rejected
        _check_psd(R, "R", strict=bool(np.any(R)))
        for name, m in (("F", F), ("H", H), ("Q", symmetrize(Q)), ("R", symmetrize(R))):
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        object.__setattr__(self, "Q_chol", cholesky_factor(self.Q))
        object.__setattr__(self, "R_chol", cholesky_factor(self.R))
        if not _pbh_detectable(F, H):
            warnings.warn("(F, H) is not detectable; Kalman covariances may diverge", stacklevel=3)

    @property
    def n_x(self) -> int:
        return self.F.shape[0]

    @property
    def n_y(self) -> int:
        return self.H.shape[0]


def _pbh_detectable(F, H):
    n = F.shape[0]
    for lam in np.linalg.eigvals(F):
        if abs(lam) < 1.0 - 1e-12:
            continue
        pencil = np.vstack([lam * np.eye(n) - F, H])
        if np.linalg.matrix_rank(pencil) < n:
            return False
    return True


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    """State estimate ``(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        cov = np.asarray(self.cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        object.__setattr__(self, "cov", cov)
        if cov.shape != (self.mean.size, self.mean.size):
            raise ConfigurationError(f"covariance shape {cov.shape} does not match mean of size {self.mean.size}")

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_valid(self) -> bool:
        """Symmetric to 1e-10 and numerically PSD (eigenvalues >= -1e-12 trace)."""
        cov = self.cov
        if not np.all(np.isfinite(cov)) or not np.all(np.isfinite(self.mean)):
            return False
        if not _is_symmetric(cov):
            return False
        tr = max(np.trace(cov), 0.0)
        return bool(np.linalg.eigvalsh(symmetrize(cov)).min() >= -1e-12 * tr)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ground truth: ``states[0..T]`` and ``measurements[0..T-1]``."""

    states: np.ndarray
    measurements: np.ndarray

    @property
    def steps(self) -> int:
        return self.measurements.shape[0]


def cholesky_factor(cov):
    """Lower Cholesky factor, retrying once with ``1e-12 trace(cov)`` jitter.

    A zero matrix factors to zero.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-12 * np.trace(cov)
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise CovarianceNotPSDError("covariance is not positive semidefinite") from exc


def gaussian_draws(cov, size, rng) -> np.ndarray:
    """``size`` zero-mean draws with covariance ``cov``, shape ``(size, n)``."""
    L = cholesky_factor(cov)
    u = rng.standard_normal((size, L.shape[0]))
    return u @ L.T


def sample_gaussian(mean, cov, rng) -> np.ndarray:
    mean = np.asarray(mean, dtype=float).reshape(-1)
    return mean + gaussian_draws(cov, 1, make_rng(rng))[0]


def simulate(model: LinearSystemModel, x0, T: int, rng) -> Trajectory:
    """Simulate ``T`` steps; draws all process noise, then all measurement noise."""
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != model.n_x:
        raise ConfigurationError(f"x0 has length {x0.size}, expected {model.n_x}")
    rng = make_rng(rng)
    W = gaussian_draws(model.Q, T, rng)
    V = gaussian_draws(model.R, T, rng)
    states = np.empty((T + 1, model.n_x))
    states[0] = x0
    for k in range(T):
        states[k + 1] = model.F @ states[k] + W[k]
    measurements = states[:T] @ model.H.T + V
    return Trajectory(states=states, measurements=measurements)


def constant_velocity_2d(delta: float = 0.3, q: float = 1.0) -> LinearSystemModel:
    """Nearly-constant-velocity model in the plane, state ``[px, vx, py, vy]``."""
    if not delta > 0:
        raise ConfigurationError("delta must be > 0")
    if not q > 0:
        raise ConfigurationError("q must be > 0")
    f = np.array([[1.0, delta], [0.0, 1.0]])
    g = q * np.array([[delta**3 / 3, delta**2 / 2], [delta**2 / 2, delta]])
    z = np.zeros((2, 2))
    F = np.block([[f, z], [z, f]])
    Q = np.block([[g, z], [z, g]])
    H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    return LinearSystemModel(F=F, H=H, Q=Q, R=np.eye(2))


def riccati_step(model: LinearSystemModel, M):
    H, R = model.H, model.R
    S = H @ M @ H.T + R
    MHt = M @ H.T
    filtered = M - MHt @ np.linalg.solve(S, MHt.T)
    return symmetrize(model.F @ filtered @ model.F.T + model.Q)


def steady_state_prediction_covariance(model: LinearSystemModel, tol=1e-12, max_iter=100_000):
    """Fixed point of the prediction Riccati recursion, iterated from ``M = Q``."""
    M = np.array(model.Q, dtype=float)
    change = np.inf
    for _ in range(max_iter):
        M_next = riccati_step(model, M)
        diff = np.abs(M_next - M).max()
        scale = np.abs(M_next).max()
        M = M_next
        change = diff / scale if scale > 0 else diff
        if diff <= tol * scale or diff == 0.0:
            return M
    raise ConvergenceError(
        f"Riccati iteration did not converge in {max_iter} iterations (last relative change {change:.3e})",
        residual=change,
    )
