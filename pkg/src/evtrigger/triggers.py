"""Innovation-based event triggers.

A sensor compares its measurement ``y`` with an implicit measurement ``c``
that the receiver can reproduce, ``z = y - c``, and transmits when a uniform
draw ``xi`` exceeds the non-transmission weight ``phi(z)``.  The weight is a
generalized Gaussian of the Mahalanobis radius ``sqrt(z' Z^-1 z)``::

    phi_beta(z) = exp(-1/2 * (z' Z^-1 z) ** (beta / 2))

``beta = 2`` is the classical Gaussian stochastic trigger; the deterministic
ellipsoid trigger (``phi = 1`` inside, ``0`` outside) is selected with the
``deterministic`` flag rather than ``beta = inf``.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import _backend
from .errors import ConfigurationError
from .model import GaussianBelief, LinearSystemModel, _as_matrix, _is_symmetric


@dataclass(frozen=True, eq=False)
class WeightingSpec:
    """Shape exponent ``beta`` and positive-definite shape matrix ``Z``."""

    beta: float
    Z: np.ndarray
    deterministic: bool = False
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        beta = float(self.beta)
        if not beta > 0 or not np.isfinite(beta):
            raise ConfigurationError(f"beta must be a finite positive number, got {self.beta!r}")
        Z = _as_matrix(self.Z, "Z")
        if Z.shape[0] != Z.shape[1] or not _is_symmetric(Z):
            raise ConfigurationError("Z must be a symmetric square matrix")
        try:
            L = np.linalg.cholesky(0.5 * (Z + Z.T))
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("Z must be positive definite") from exc
        if beta < 2 and not self.deterministic:
            warnings.warn(f"beta={beta} < 2 gives a heavy-tailed weighting function", stacklevel=3)
        Z.setflags(write=False)
        L.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "chol", L)
        object.__setattr__(self, "deterministic", bool(self.deterministic))

    @classmethod
    def scaled_identity(cls, beta, alpha_z, n_y, deterministic=False):
        """``Z = alpha_z * I``."""
        if not alpha_z > 0:
            raise ConfigurationError(f"alpha_z must be > 0, got {alpha_z!r}")
        return cls(beta=beta, Z=float(alpha_z) * np.eye(n_y), deterministic=deterministic)

    @property
    def n_y(self) -> int:
        return self.Z.shape[0]


def mahalanobis_sq(z, spec: WeightingSpec):
    """``z' Z^-1 z`` for one vector or for the rows of a 2-D array."""
    z = np.asarray(z, dtype=float)
    u = solve_triangular(spec.chol, z.T, lower=True, check_finite=False)
    return np.sum(u * u, axis=0)


def weight_from_quadform(q, beta, deterministic=False):
    """Map squared radii to non-transmission weights in [0, 1].

    The power is evaluated as ``exp(beta/2 * log q)``; ``q = 0`` maps to 1 and
    overflow to ``inf`` maps to 0, so large ``beta`` never produces NaN.
    """
    q = np.asarray(q, dtype=float)
    if deterministic:
        return (q <= 1.0).astype(float)
    with np.errstate(divide="ignore", over="ignore"):
        power = np.exp(0.5 * beta * np.log(q))
    return np.exp(-0.5 * power)


def phi(z, spec: WeightingSpec) -> float:
    """Non-transmission probability for one innovation vector."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.size != spec.n_y:
        raise ConfigurationError(f"z has length {z.size}, expected {spec.n_y}")
    return float(_backend.kernels.phi_batch(np.ascontiguousarray(z[None, :]), spec.chol, spec.beta, spec.deterministic)[0])


def phi_batch(zs, spec: WeightingSpec) -> np.ndarray:
    """Vectorized :func:`phi` over the rows of ``zs`` (shape ``(n, n_y)``)."""
    zs = np.ascontiguousarray(zs, dtype=float)
    if zs.ndim != 2 or zs.shape[1] != spec.n_y:
        raise ConfigurationError(f"zs must have shape (n, {spec.n_y}), got {zs.shape}")
    return _backend.kernels.phi_batch(zs, np.ascontiguousarray(spec.chol), spec.beta, spec.deterministic)


def transmission_probability(y, c, spec: WeightingSpec) -> float:
    """Probability of an event given the measurement, ``1 - phi(y - c)``."""
    y = np.asarray(y, dtype=float).reshape(-1)
    c = np.asarray(c, dtype=float).reshape(-1)
    if y.shape != c.shape:
        raise ConfigurationError("y and c must have the same length")
    return 1.0 - phi(y - c, spec)


class ImplicitPolicy(enum.IntEnum):
    """Rule generating the implicit measurement ``c`` between events.

    ZERO: ``c = 0``.  SOD: the last transmitted measurement.  SODP: the last
    transmitted local estimate predicted forward, ``H F^l xs``.
    """

    ZERO = 0
    SOD = 1
    SODP = 2

    @classmethod
    def parse(cls, value) -> "ImplicitPolicy":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            try:
                return cls(int(value))
            except ValueError:
                raise ConfigurationError(f"unknown implicit-measurement policy {value!r}") from None
        try:
            return cls[str(value).strip().upper()]
        except KeyError:
            raise ConfigurationError(f"unknown implicit-measurement policy {value!r}") from None


@dataclass(eq=False)
class TriggerState:
    """Implicit-measurement bookkeeping shared by sensor and receiver.

    ``anchor`` is what the last event fixed (``y`` for SOD, the local estimate
    for SODP) and ``projected`` is ``F^l anchor``, advanced one step at a time.
    ``local`` holds the sensor's own filtered belief and is ``None`` at the
    receiver.
    """

    policy: ImplicitPolicy
    c: np.ndarray
    k: int = 0
    k_e: int = 0
    l: int = 0
    anchor: np.ndarray | None = None
    projected: np.ndarray | None = None
    local: GaussianBelief | None = None

    @classmethod
    def initial(cls, policy, model: LinearSystemModel, prior: GaussianBelief, sensor=True) -> "TriggerState":
        """State at ``k = 0`` with the shared prior acting as the first anchor."""
        policy = ImplicitPolicy.parse(policy)
        mean = np.array(prior.mean, dtype=float)
        if policy is ImplicitPolicy.ZERO:
            return cls(policy, np.zeros(model.n_y), local=prior if sensor else None)
        if policy is ImplicitPolicy.SOD:
            anchor = model.H @ mean
            return cls(policy, anchor.copy(), anchor=anchor, local=prior if sensor else None)
        return cls(policy, model.H @ mean, anchor=mean, projected=mean.copy(), local=prior if sensor else None)


@dataclass(frozen=True, eq=False)
class Payload:
    """Content of one transmission."""

    y: np.ndarray
    local_estimate: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.y.size + (0 if self.local_estimate is None else self.local_estimate.size)


@dataclass(frozen=True, eq=False)
class TriggerDecision:
    gamma: bool
    payload: Payload | None
    xi: float
    z: np.ndarray
    phi: float


def propagate_implicit(state: TriggerState, model: LinearSystemModel) -> TriggerState:
    """Advance ``state`` to the next time step and refresh ``c`` (in place)."""
    state.k += 1
    state.l += 1
    if state.policy is ImplicitPolicy.ZERO:
        state.c = np.zeros(model.n_y)
    elif state.policy is ImplicitPolicy.SOD:
        if state.anchor is None:
            raise ConfigurationError("SOD state has no transmitted measurement")
        state.c = state.anchor.copy()
    else:
        if state.projected is None:
            if state.anchor is None:
                raise ConfigurationError("SODP state has no local estimate")
            state.projected = np.linalg.matrix_power(model.F, state.l - 1) @ state.anchor
        state.projected = model.F @ state.projected
        state.c = model.H @ state.projected
    return state


def decide_with_draw(y, state: TriggerState, spec: WeightingSpec, xi: float) -> TriggerDecision:
    """Decision for a given uniform draw ``xi``; see :func:`decide`."""
    y = np.asarray(y, dtype=float).reshape(-1)
    z = y - state.c
    p = phi(z, spec)
    gamma = bool(xi > p)
    payload = None
    if gamma:
        local = None
        if state.policy is ImplicitPolicy.SODP:
            if state.local is None:
                raise ConfigurationError("SODP sensor has no local estimate to transmit")
            local = np.array(state.local.mean, dtype=float)
        payload = Payload(y=y.copy(), local_estimate=local)
    return TriggerDecision(gamma=gamma, payload=payload, xi=float(xi), z=z, phi=p)


def decide(y, state: TriggerState, spec: WeightingSpec, rng) -> TriggerDecision:
    """Draw ``xi ~ U(0, 1)`` and transmit iff ``xi > phi(y - c)``.

    Exactly one uniform is consumed per call in both stochastic and
    deterministic mode.
    """
    return decide_with_draw(y, state, spec, rng.random())


def on_event(state: TriggerState, y, local_estimate=None) -> TriggerState:
    """Re-anchor after a transmission at the current step (in place).

    ``local_estimate`` is the sensor's filtered mean (or a belief); at the
    sensor it defaults to ``state.local``.
    """
    state.k_e = state.k
    state.l = 0
    if state.policy is ImplicitPolicy.SOD:
        state.anchor = np.array(y, dtype=float).reshape(-1)
    elif state.policy is ImplicitPolicy.SODP:
        if local_estimate is None:
            local_estimate = state.local
        if isinstance(local_estimate, GaussianBelief):
            local_estimate = local_estimate.mean
        if local_estimate is None:
            raise ConfigurationError("SODP event without a local estimate")
        state.anchor = np.array(local_estimate, dtype=float).reshape(-1)
        state.projected = state.anchor.copy()
    return state


def receive(state: TriggerState, payload: Payload) -> TriggerState:
    """Receiver-side counterpart of :func:`on_event`."""
    return on_event(state, payload.y, payload.local_estimate)
