import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evtrigger import NumericalError, UndefinedMetricError
from evtrigger.metrics import (
    RunRecord,
    SweepRow,
    anees,
    conditional_z_energy,
    event_rate,
    mse,
    nees,
    relative_mse,
)


def rec(errors, covs=None, gammas=None, zs=None, run=0):
    errors = np.asarray(errors, dtype=float)
    if errors.ndim == 1:
        errors = errors[:, None]
    T, n = errors.shape
    covs = np.tile(np.eye(n), (T, 1, 1)) if covs is None else np.asarray(covs, dtype=float)
    gammas = np.zeros(T, dtype=np.uint8) if gammas is None else np.asarray(gammas, dtype=np.uint8)
    zs = np.zeros((T, 1)) if zs is None else np.asarray(zs, dtype=float)
    return RunRecord(gammas=gammas, zs=zs, errors=errors, covs=covs, run_index=run)


class TestMse:
    def test_zero(self):
        assert mse([rec(np.zeros((5, 2)))]) == 0.0

    def test_single(self):
        assert mse([rec([2.0])]) == 4.0

    def test_run_average(self):
        a = rec(np.ones(4))                   # per-run mean 1
        b = rec(np.full(4, np.sqrt(3.0)))     # per-run mean 3
        assert mse([a, b]) == pytest.approx(2.0)

    def test_full_norm(self):
        assert mse([rec([[1.0, 2.0]])]) == 5.0

    def test_empty(self):
        with pytest.raises(UndefinedMetricError):
            mse([])
        with pytest.raises(UndefinedMetricError):
            mse([RunRecord(gammas=np.zeros(2), zs=np.zeros((2, 1)))])


class TestRelativeMse:
    def test_identity(self):
        r = [rec([1.0, -2.0])]
        assert relative_mse(r, r) == 1.0

    def test_zero_reference(self):
        with pytest.raises(UndefinedMetricError):
            relative_mse([rec([1.0])], [rec([0.0])])


class TestAnees:
    def test_zero_errors(self):
        assert anees([rec(np.zeros((3, 2)))]) == 0.0

    def test_unit(self):
        assert anees([rec([1.0])]) == 1.0

    def test_normalized_by_dimension(self):
        r = rec([[1.0, 1.0]], covs=[np.eye(2)])
        assert anees([r]) == 1.0

    def test_singular_reports_location(self):
        covs = np.tile(np.eye(2), (4, 1, 1))
        covs[2] = [[1.0, 1.0], [1.0, 1.0]]
        with pytest.raises(NumericalError, match="run 7, step 2"):
            anees([rec(np.ones((4, 2)), covs=covs, run=7)])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_matches_per_step_nees(self, seed):
        rng = np.random.default_rng(seed)
        A = rng.normal(size=(6, 3, 3))
        covs = A @ A.transpose(0, 2, 1) + 0.1 * np.eye(3)
        r = rec(rng.normal(size=(6, 3)), covs=covs)
        direct = np.mean([e @ np.linalg.solve(P, e) for e, P in zip(r.errors, r.covs)]) / 3
        assert anees([r]) == pytest.approx(direct, rel=1e-10)
        assert nees(r).mean() / 3 == pytest.approx(direct, rel=1e-10)

    def test_gaussian_errors_consistent(self):
        from evtrigger.oracle import chi2_anees_bounds
        rng = np.random.default_rng(3)
        P = np.array([[2.0, 0.5], [0.5, 1.0]])
        L = np.linalg.cholesky(P)
        recs = [rec(rng.standard_normal((150, 2)) @ L.T, covs=np.tile(P, (150, 1, 1))) for _ in range(100)]
        lo, hi = chi2_anees_bounds(100, 150, 2)
        assert lo <= anees(recs) <= hi


class TestEventRate:
    def test_all_events(self):
        assert event_rate([rec(np.zeros(5), gammas=np.ones(5))]) == 1.0

    def test_alternating(self):
        assert event_rate([rec(np.zeros(6), gammas=[0, 1, 0, 1, 0, 1])]) == 0.5

    def test_empty(self):
        with pytest.raises(UndefinedMetricError):
            event_rate([])


class TestConditionalEnergy:
    def test_zero(self):
        assert conditional_z_energy([rec(np.zeros(3), zs=np.zeros((3, 2)))]) == 0.0

    def test_single_quiet_step(self):
        r = rec(np.zeros(2), gammas=[1, 0], zs=[[9.0, 9.0], [1.0, 1.0]])
        assert conditional_z_energy([r]) == 2.0

    def test_all_events(self):
        with pytest.raises(UndefinedMetricError):
            conditional_z_energy([rec(np.zeros(2), gammas=[1, 1])])


def test_trimmed_drops_leading_steps():
    r = rec(np.arange(5.0), gammas=[1, 1, 0, 0, 0])
    t = r.trimmed(2)
    assert t.steps == 3 and event_rate([t]) == 0.0
    assert r.trimmed(0) is r


def test_sweep_row_dict():
    row = SweepRow(beta=2.0, alpha_z=1.0, estimator="sebkf", N=0)
    d = row.as_dict()
    assert d["beta"] == 2.0 and d["estimator"] == "sebkf" and np.isnan(d["mse"])
