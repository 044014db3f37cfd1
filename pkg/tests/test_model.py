import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evtrigger import (
    ConfigurationError,
    ConvergenceError,
    CovarianceNotPSDError,
    GaussianBelief,
    LinearSystemModel,
    constant_velocity_2d,
    sample_gaussian,
    simulate,
    steady_state_prediction_covariance,
)
from evtrigger.model import cholesky_factor, riccati_step


class TestLinearSystemModel:
    def test_scalar_inputs_promoted(self):
        m = LinearSystemModel(F=1.0, H=1.0, Q=1.0, R=1.0)
        assert (m.n_x, m.n_y) == (1, 1)
        assert m.F.shape == (1, 1)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            LinearSystemModel(F=np.eye(2), H=np.ones((1, 3)), Q=np.eye(2), R=1.0)
        with pytest.raises(ConfigurationError):
            LinearSystemModel(F=np.eye(2), H=np.ones((1, 2)), Q=np.eye(3), R=1.0)

    def test_rejects_indefinite_q(self):
        with pytest.raises(CovarianceNotPSDError):
            LinearSystemModel(F=np.eye(2), H=[[1.0, 0.0]], Q=[[1.0, 0.0], [0.0, -1.0]], R=1.0)

    def test_rejects_asymmetric_q(self):
        with pytest.raises((CovarianceNotPSDError, ConfigurationError)):
            LinearSystemModel(F=np.eye(2), H=[[1.0, 0.0]], Q=[[1.0, 0.5], [0.0, 1.0]], R=1.0)

    def test_rejects_singular_nonzero_r(self):
        with pytest.raises(CovarianceNotPSDError):
            LinearSystemModel(F=np.eye(2), H=np.eye(2), Q=np.eye(2), R=[[1.0, 0.0], [0.0, 0.0]])

    def test_zero_r_allowed_as_noise_free_sensor(self):
        m = LinearSystemModel(F=1.0, H=1.0, Q=0.0, R=0.0)
        assert not np.any(m.R_chol)

    def test_matrices_are_read_only(self):
        m = constant_velocity_2d()
        with pytest.raises(ValueError):
            m.F[0, 0] = 5.0

    def test_undetectable_pair_warns(self):
        with pytest.warns(UserWarning):
            LinearSystemModel(F=np.diag([2.0, 0.5]), H=[[0.0, 1.0]], Q=np.eye(2), R=1.0)

    def test_detectable_pair_silent(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            constant_velocity_2d()


class TestGaussianBelief:
    def test_valid(self):
        assert GaussianBelief([0.0, 1.0], np.eye(2)).is_valid()

    def test_negative_eigenvalue_invalid(self):
        b = GaussianBelief([0.0, 0.0], [[1.0, 0.0], [0.0, -0.1]])
        assert not b.is_valid()

    def test_nan_invalid(self):
        assert not GaussianBelief([np.nan], [[1.0]]).is_valid()


class TestSampleGaussian:
    def test_zero_cov_returns_mean(self, rng):
        out = sample_gaussian([1.5, -2.0], np.zeros((2, 2)), rng)
        assert np.array_equal(out, [1.5, -2.0])

    def test_empirical_mean(self):
        rng = np.random.default_rng(1)
        draws = np.array([sample_gaussian([1.0, 2.0], np.eye(2), rng) for _ in range(100_000)])
        assert np.all(np.abs(draws.mean(axis=0) - [1.0, 2.0]) < 0.02)

    def test_empirical_cov(self):
        rng = np.random.default_rng(2)
        cov = np.array([[2.0, 1.0], [1.0, 2.0]])
        draws = np.array([sample_gaussian([0.0, 0.0], cov, rng) for _ in range(100_000)])
        assert np.all(np.abs(np.cov(draws.T) - cov) < 0.1)

    def test_semidefinite_cov_uses_jitter(self, rng):
        cov = np.array([[1.0, 1.0], [1.0, 1.0]])
        L = cholesky_factor(cov)
        assert np.allclose(L @ L.T, cov, atol=1e-6)
        out = sample_gaussian([0.0, 0.0], cov, rng)
        assert abs(out[0] - out[1]) < 1e-5

    def test_indefinite_cov_raises(self, rng):
        with pytest.raises(CovarianceNotPSDError):
            sample_gaussian([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]], rng)


class TestSimulate:
    def test_noise_free_fixed_point(self, rng):
        m = LinearSystemModel(F=1.0, H=2.0, Q=0.0, R=0.0)
        tr = simulate(m, [3.0], 5, rng)
        assert np.all(tr.states == 3.0)
        assert np.all(tr.measurements == 6.0)

    def test_deterministic_constant_velocity(self, rng):
        m = LinearSystemModel(F=[[1.0, 0.3], [0.0, 1.0]], H=[[1.0, 0.0]], Q=np.zeros((2, 2)), R=1.0)
        tr = simulate(m, [0.0, 1.0], 2, rng)
        assert np.allclose(tr.states, [[0.0, 1.0], [0.3, 1.0], [0.6, 1.0]], atol=1e-15)

    def test_shapes(self, rng):
        tr = simulate(constant_velocity_2d(), np.zeros(4), 7, rng)
        assert tr.states.shape == (8, 4)
        assert tr.measurements.shape == (7, 2)
        assert tr.steps == 7

    def test_process_residual_moments(self):
        m = constant_velocity_2d(0.3, 1.0)
        tr = simulate(m, np.zeros(4), 10_000, np.random.default_rng(3))
        res = tr.states[1:] - tr.states[:-1] @ m.F.T
        emp = np.cov(res.T)
        nz = np.abs(m.Q) > 0
        assert np.all(np.abs(emp[nz] / m.Q[nz] - 1) < 0.05)

    def test_measurement_residual_moments(self):
        m = constant_velocity_2d()
        tr = simulate(m, np.zeros(4), 10_000, np.random.default_rng(4))
        res = tr.measurements - tr.states[:-1] @ m.H.T
        assert np.allclose(np.cov(res.T), m.R, atol=0.05)

    def test_reproducible(self):
        m = constant_velocity_2d()
        a = simulate(m, np.zeros(4), 50, 9)
        b = simulate(m, np.zeros(4), 50, 9)
        assert a.states.tobytes() == b.states.tobytes()
        assert a.measurements.tobytes() == b.measurements.tobytes()

    def test_bad_inputs(self, rng):
        m = constant_velocity_2d()
        with pytest.raises(ConfigurationError):
            simulate(m, np.zeros(4), 0, rng)
        with pytest.raises(ConfigurationError):
            simulate(m, np.zeros(3), 5, rng)


class TestConstantVelocity:
    def test_reference_matrices(self):
        m = constant_velocity_2d(0.3, 1.0)
        assert m.F[0, 1] == pytest.approx(0.3)
        assert m.Q[0, 0] == pytest.approx(0.009)
        assert m.Q[0, 1] == pytest.approx(0.045)
        assert m.Q[1, 1] == pytest.approx(0.3)
        assert np.array_equal(m.R, np.eye(2))

    def test_unit_period_block(self):
        m = constant_velocity_2d(1.0, 1.0)
        assert np.allclose(m.Q[:2, :2], [[1 / 3, 1 / 2], [1 / 2, 1.0]])
        assert np.array_equal(m.Q[2:, 2:], m.Q[:2, :2])

    def test_measurement_picks_positions(self):
        m = constant_velocity_2d()
        assert np.array_equal(m.H @ np.array([1.0, 2.0, 3.0, 4.0]), [1.0, 3.0])

    @pytest.mark.parametrize("delta,q", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)])
    def test_rejects_nonpositive(self, delta, q):
        with pytest.raises(ConfigurationError):
            constant_velocity_2d(delta, q)


class TestRiccati:
    def test_scalar_golden_ratio(self):
        m = LinearSystemModel(F=1.0, H=1.0, Q=1.0, R=1.0)
        M = steady_state_prediction_covariance(m)
        assert M[0, 0] == pytest.approx((1 + math.sqrt(5)) / 2, abs=1e-9)

    def test_stable_noise_free_plant(self):
        m = LinearSystemModel(F=0.5, H=1.0, Q=0.0, R=1.0)
        assert steady_state_prediction_covariance(m)[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_constant_velocity_residual(self):
        m = constant_velocity_2d(0.3, 1.0)
        M = steady_state_prediction_covariance(m)
        assert np.abs(riccati_step(m, M) - M).max() < 1e-9
        assert np.allclose(M, M.T)
        assert np.linalg.eigvalsh(M).min() > 0

    def test_non_convergence_reports_residual(self):
        m = LinearSystemModel(F=1.0, H=1.0, Q=1.0, R=1.0)
        with pytest.raises(ConvergenceError) as info:
            steady_state_prediction_covariance(m, max_iter=2)
        assert info.value.residual > 0

    @settings(max_examples=40, deadline=None)
    @given(f=st.floats(-1.5, 1.5), h=st.floats(0.2, 3.0), q=st.floats(0.01, 5.0), r=st.floats(0.01, 5.0))
    def test_scalar_closed_form(self, f, h, q, r):
        # scalar DARE: M = f^2 M r / (h^2 M + r) + q, positive root of a quadratic
        m = LinearSystemModel(F=f, H=h, Q=q, R=r)
        M = steady_state_prediction_covariance(m)[0, 0]
        a = h * h
        b = r * (1 - f * f) - q * a
        c = -q * r
        root = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
        assert M == pytest.approx(root, rel=1e-9)
