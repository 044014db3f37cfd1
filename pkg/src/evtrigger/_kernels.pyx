# cython: language_level=3
"""Compiled kernels for the per-step recursions.

Same signatures and semantics as :mod:`evtrigger._fallback`; the matrices
are tiny (n <= 32), so everything is plain loops over C-contiguous buffers.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()


cdef inline double _weight(double q, double beta, bint deterministic) noexcept nogil:
    if deterministic:
        return 1.0 if q <= 1.0 else 0.0
    if q <= 0.0:
        return 1.0
    return exp(-0.5 * exp(0.5 * beta * log(q)))


cdef inline double _quad(const double[:, ::1] L, double[::1] z, double[::1] u, Py_ssize_t n) noexcept nogil:
    # forward substitution L u = z, returns |u|^2
    cdef Py_ssize_t i, j
    cdef double s
    cdef double acc = 0.0
    for i in range(n):
        s = z[i]
        for j in range(i):
            s -= L[i, j] * u[j]
        u[i] = s / L[i, i]
        acc += u[i] * u[i]
    return acc


cdef inline void _matvec(const double[:, ::1] A, double[::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(A.shape[0]):
        s = 0.0
        for j in range(A.shape[1]):
            s += A[i, j] * x[j]
        out[i] = s


cdef int _cholesky(double[:, ::1] A, double[:, ::1] L, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j, k
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return -1
                L[i, i] = sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, n):
            L[i, j] = 0.0
    return 0


cdef void _chol_solve(double[:, ::1] L, double[::1] b, double[::1] tmp, Py_ssize_t n) noexcept nogil:
    # solves (L L') x = b in place
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(n):
        s = b[i]
        for j in range(i):
            s -= L[i, j] * tmp[j]
        tmp[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = tmp[i]
        for j in range(i + 1, n):
            s -= L[j, i] * b[j]
        b[i] = s / L[i, i]


def phi_batch(const double[:, ::1] zs, const double[:, ::1] chol, double beta, bint deterministic):
    cdef Py_ssize_t n = zs.shape[0], ny = zs.shape[1], i, j
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double[::1] z = np.empty(ny)
    cdef double[::1] u = np.empty(ny)
    with nogil:
        for i in range(n):
            for j in range(ny):
                z[j] = zs[i, j]
            out[i] = _weight(_quad(chol, z, u, ny), beta, deterministic)
    return out_arr


def sensor_loop(model, spec, int policy, const double[:, :, ::1] gains,
                x0, xhat0, const double[:, ::1] W, const double[:, ::1] V, const double[::1] xi):
    cdef const double[:, ::1] F = np.ascontiguousarray(model.F)
    cdef const double[:, ::1] H = np.ascontiguousarray(model.H)
    cdef const double[:, ::1] L = np.ascontiguousarray(spec.chol)
    cdef double beta = spec.beta
    cdef bint deterministic = spec.deterministic
    cdef Py_ssize_t T = W.shape[0], nx = F.shape[0], ny = H.shape[0]
    cdef Py_ssize_t k, i, j

    states_a = np.empty((T + 1, nx))
    ys_a = np.empty((T, ny))
    cs_a = np.empty((T, ny))
    zs_a = np.empty((T, ny))
    phis_a = np.empty(T)
    gammas_a = np.zeros(T, dtype=np.uint8)
    local_a = np.empty((T, nx))
    cdef double[:, ::1] states = states_a
    cdef double[:, ::1] ys = ys_a
    cdef double[:, ::1] cs = cs_a
    cdef double[:, ::1] zs = zs_a
    cdef double[::1] phis = phis_a
    cdef unsigned char[::1] gammas = gammas_a
    cdef double[:, ::1] local = local_a

    cdef double[::1] x = np.array(x0, dtype=float)
    cdef double[::1] xh = np.array(xhat0, dtype=float)
    cdef double[::1] proj = np.array(xhat0, dtype=float)
    cdef double[::1] xtmp = np.empty(nx)
    cdef double[::1] xp = np.empty(nx)
    cdef double[::1] y = np.empty(ny)
    cdef double[::1] c = np.zeros(ny)
    cdef double[::1] anchor_y = np.empty(ny)
    cdef double[::1] innov = np.empty(ny)
    cdef double[::1] z = np.empty(ny)
    cdef double[::1] u = np.empty(ny)
    cdef double s, p

    _matvec(H, xh, anchor_y)
    with nogil:
        for i in range(nx):
            states[0, i] = x[i]
        for k in range(T):
            _matvec(F, x, xtmp)
            for i in range(nx):
                x[i] = xtmp[i] + W[k, i]
                states[k + 1, i] = x[i]
            _matvec(H, x, y)
            for i in range(ny):
                y[i] += V[k, i]
                ys[k, i] = y[i]
            # local Kalman filter with precomputed gain
            _matvec(F, xh, xp)
            _matvec(H, xp, innov)
            for i in range(ny):
                innov[i] = y[i] - innov[i]
            for i in range(nx):
                s = 0.0
                for j in range(ny):
                    s += gains[k, i, j] * innov[j]
                xh[i] = xp[i] + s
                local[k, i] = xh[i]
            # implicit measurement
            if policy == 0:
                for i in range(ny):
                    c[i] = 0.0
            elif policy == 1:
                for i in range(ny):
                    c[i] = anchor_y[i]
            else:
                _matvec(F, proj, xtmp)
                for i in range(nx):
                    proj[i] = xtmp[i]
                _matvec(H, proj, c)
            for i in range(ny):
                z[i] = y[i] - c[i]
                cs[k, i] = c[i]
                zs[k, i] = z[i]
            p = _weight(_quad(L, z, u, ny), beta, deterministic)
            phis[k] = p
            if xi[k] > p:
                gammas[k] = 1
                if policy == 1:
                    for i in range(ny):
                        anchor_y[i] = y[i]
                elif policy == 2:
                    for i in range(nx):
                        proj[i] = xh[i]
    return states_a, ys_a, cs_a, zs_a, phis_a, gammas_a, local_a


def filter_loop(model, spec, int policy, bint periodic, xhat0, P0,
                const unsigned char[::1] gammas, const double[:, ::1] ys, const double[:, ::1] local):
    cdef const double[:, ::1] F = np.ascontiguousarray(model.F)
    cdef const double[:, ::1] H = np.ascontiguousarray(model.H)
    cdef const double[:, ::1] Q = np.ascontiguousarray(model.Q)
    cdef const double[:, ::1] R = np.ascontiguousarray(model.R)
    cdef const double[:, ::1] Z = np.ascontiguousarray(spec.Z)
    cdef Py_ssize_t T = gammas.shape[0], nx = F.shape[0], ny = H.shape[0]
    cdef Py_ssize_t k, i, j, l

    means_a = np.empty((T, nx))
    covs_a = np.empty((T, nx, nx))
    cs_a = np.empty((T, ny))
    cdef double[:, ::1] means = means_a
    cdef double[:, :, ::1] covs = covs_a
    cdef double[:, ::1] cs = cs_a

    cdef double[::1] m = np.array(xhat0, dtype=float)
    cdef double[:, ::1] P = np.array(P0, dtype=float)
    cdef double[::1] mtmp = np.empty(nx)
    cdef double[:, ::1] FP = np.empty((nx, nx))
    cdef double[:, ::1] PHt = np.empty((nx, ny))
    cdef double[:, ::1] S = np.empty((ny, ny))
    cdef double[:, ::1] SL = np.empty((ny, ny))
    cdef double[:, ::1] K = np.empty((nx, ny))
    cdef double[::1] row = np.empty(ny)
    cdef double[::1] tmp = np.empty(ny)
    cdef double[::1] hm = np.empty(ny)
    cdef double[::1] innov = np.empty(ny)
    cdef double[::1] proj = np.array(xhat0, dtype=float)
    cdef double[::1] c = np.zeros(ny)
    cdef double[::1] anchor_y = np.empty(ny)
    cdef double s
    cdef bint event, update_with_y
    cdef int status = 0

    _matvec(H, proj, anchor_y)
    with nogil:
        for k in range(T):
            # receiver implicit measurement
            if policy == 0:
                for i in range(ny):
                    c[i] = 0.0
            elif policy == 1:
                for i in range(ny):
                    c[i] = anchor_y[i]
            else:
                _matvec(F, proj, mtmp)
                for i in range(nx):
                    proj[i] = mtmp[i]
                _matvec(H, proj, c)
            for i in range(ny):
                cs[k, i] = c[i]
            event = gammas[k] != 0
            update_with_y = event or periodic

            # predict
            _matvec(F, m, mtmp)
            for i in range(nx):
                m[i] = mtmp[i]
            for i in range(nx):
                for j in range(nx):
                    s = 0.0
                    for l in range(nx):
                        s += F[i, l] * P[l, j]
                    FP[i, j] = s
            for i in range(nx):
                for j in range(nx):
                    s = 0.0
                    for l in range(nx):
                        s += FP[i, l] * F[j, l]
                    P[i, j] = s + Q[i, j]
            for i in range(nx):
                for j in range(i):
                    s = 0.5 * (P[i, j] + P[j, i])
                    P[i, j] = s
                    P[j, i] = s

            # gain
            for i in range(nx):
                for j in range(ny):
                    s = 0.0
                    for l in range(nx):
                        s += P[i, l] * H[j, l]
                    PHt[i, j] = s
            for i in range(ny):
                for j in range(ny):
                    s = 0.0
                    for l in range(nx):
                        s += H[i, l] * PHt[l, j]
                    S[i, j] = s + R[i, j]
                    if not update_with_y:
                        S[i, j] += Z[i, j]
            if _cholesky(S, SL, ny) != 0:
                status = -1
                break
            for i in range(nx):
                for j in range(ny):
                    row[j] = PHt[i, j]
                _chol_solve(SL, row, tmp, ny)
                for j in range(ny):
                    K[i, j] = row[j]

            # innovation: gamma * (y - c) - (H m - c)
            _matvec(H, m, hm)
            for i in range(ny):
                if update_with_y:
                    innov[i] = (ys[k, i] - c[i]) - (hm[i] - c[i])
                else:
                    innov[i] = -(hm[i] - c[i])
            for i in range(nx):
                s = 0.0
                for j in range(ny):
                    s += K[i, j] * innov[j]
                m[i] += s
                means[k, i] = m[i]
            # P <- (I - K H) P
            for i in range(nx):
                for j in range(nx):
                    s = 0.0
                    for l in range(ny):
                        s += K[i, l] * PHt[j, l]
                    FP[i, j] = P[i, j] - s
            for i in range(nx):
                for j in range(nx):
                    P[i, j] = 0.5 * (FP[i, j] + FP[j, i])
                    covs[k, i, j] = P[i, j]

            if event:
                if policy == 1:
                    for i in range(ny):
                        anchor_y[i] = ys[k, i]
                elif policy == 2:
                    for i in range(nx):
                        proj[i] = local[k, i]
    if status != 0:
        from .errors import NumericalError
        raise NumericalError(f"innovation covariance is not positive definite at step {k}")
    return means_a, covs_a, cs_a
