"""Pure-Python kernels, used when the Cython extension is unavailable.

These run the library's per-step operations directly and define the
semantics the compiled kernels must reproduce.
"""
import numpy as np
from scipy.linalg import solve_triangular


def phi_batch(zs, chol, beta, deterministic):
    from .triggers import weight_from_quadform

    u = solve_triangular(chol, zs.T, lower=True, check_finite=False)
    return weight_from_quadform(np.sum(u * u, axis=0), beta, deterministic)


def sensor_loop(model, spec, policy, gains, x0, xhat0, W, V, xi):
    """Plant, local Kalman filter and trigger for one run.

    Returns ``(states, ys, cs, zs, phis, gammas, local)`` where ``local[k]`` is
    the sensor's filtered mean after step ``k``.
    """
    from .model import GaussianBelief
    from .triggers import TriggerState, decide_with_draw, on_event, propagate_implicit

    F, H = model.F, model.H
    T = W.shape[0]
    states = np.empty((T + 1, model.n_x))
    ys = np.empty((T, model.n_y))
    cs = np.empty((T, model.n_y))
    zs = np.empty((T, model.n_y))
    phis = np.empty(T)
    gammas = np.zeros(T, dtype=np.uint8)
    local = np.empty((T, model.n_x))

    prior = GaussianBelief(np.array(xhat0, dtype=float), np.eye(model.n_x))
    state = TriggerState.initial(policy, model, prior, sensor=True)
    x = np.array(x0, dtype=float)
    xh = np.array(xhat0, dtype=float)
    states[0] = x
    for k in range(T):
        x = F @ x + W[k]
        y = H @ x + V[k]
        states[k + 1] = x
        ys[k] = y
        xp = F @ xh
        xh = xp + gains[k] @ (y - H @ xp)
        local[k] = xh
        state.local = GaussianBelief(xh, prior.cov)
        propagate_implicit(state, model)
        decision = decide_with_draw(y, state, spec, xi[k])
        cs[k] = state.c
        zs[k] = decision.z
        phis[k] = decision.phi
        if decision.gamma:
            gammas[k] = 1
            on_event(state, y, xh)
    return states, ys, cs, zs, phis, gammas, local


def filter_loop(model, spec, policy, periodic, xhat0, P0, gammas, ys, local):
    """Receiver-side Kalman filter (``periodic``) or event-based Kalman filter.

    The receiver maintains its own implicit measurement from the received
    payloads.  Returns ``(means, covs, cs)``.
    """
    from .estimators import kf_predict, sebkf_update
    from .model import GaussianBelief
    from .triggers import Payload, TriggerState, propagate_implicit, receive

    T = gammas.shape[0]
    means = np.empty((T, model.n_x))
    covs = np.empty((T, model.n_x, model.n_x))
    cs = np.empty((T, model.n_y))
    belief = GaussianBelief(np.array(xhat0, dtype=float), np.array(P0, dtype=float))
    state = TriggerState.initial(policy, model, belief, sensor=False)
    for k in range(T):
        propagate_implicit(state, model)
        cs[k] = state.c
        event = bool(gammas[k])
        pred = kf_predict(belief, model)
        belief = sebkf_update(pred, model, event or periodic, ys[k], state.c, spec.Z)
        means[k] = belief.mean
        covs[k] = belief.cov
        if event:
            receive(state, Payload(y=ys[k], local_estimate=local[k]))
    return means, covs, cs
