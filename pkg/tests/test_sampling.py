import numpy as np
import pytest

from regtyler.errors import DegenerateSampleError, DomainError
from regtyler.estimators import ShrinkageConfig, SolverOptions, kl_estimate, tyler_estimate, wiesel_estimate
from regtyler.sampling import (
    EllipticalSpec,
    SampleSet,
    ar1_scatter,
    draw_samples,
    normalize_angular,
    random_target,
    trial_rng,
)


class TestAr1:
    def test_examples(self):
        assert np.array_equal(ar1_scatter(3, 0.0).entries, np.eye(3))
        assert np.array_equal(ar1_scatter(2, 0.8).entries, [[1.0, 0.8], [0.8, 1.0]])
        assert ar1_scatter(4, 0.7).entries[0, 3] == pytest.approx(0.343, abs=1e-15)

    def test_toeplitz_unit_diagonal_pd(self):
        S = ar1_scatter(8, 0.95).entries
        assert np.all(np.diag(S) == 1.0)
        assert np.array_equal(S[:-1, :-1], S[1:, 1:])
        assert ar1_scatter(8, 0.95).is_pd

    @pytest.mark.parametrize("beta", [-0.1, 1.0, 1.5])
    def test_domain(self, beta):
        with pytest.raises(DomainError):
            ar1_scatter(3, beta)


class TestSampleSet:
    def test_drops_zero_rows(self):
        s = SampleSet.from_array([[1.0, 2.0], [0.0, 0.0], [3.0, 0.0]])
        assert s.n == 2 and s.dim == 2 and s.dropped_zero_rows == 1

    def test_zero_tol(self):
        s = SampleSet.from_array([[1e-9, 0.0], [1.0, 1.0]], zero_tol=1e-6)
        assert s.n == 1 and s.dropped_zero_rows == 1

    def test_all_zero(self):
        with pytest.raises(DegenerateSampleError):
            SampleSet.from_array(np.zeros((3, 2)))

    def test_direct_construction_rejects_zero_rows(self):
        with pytest.raises(DegenerateSampleError):
            SampleSet(np.array([[0.0, 0.0]]))


class TestDraw:
    def test_gaussian_covariance(self):
        X = draw_samples(EllipticalSpec("gaussian", np.eye(2)), 10_000, 7).rows
        assert np.linalg.norm(X.T @ X / len(X) - np.eye(2)) < 0.1

    def test_deterministic(self):
        spec = EllipticalSpec("student_t", ar1_scatter(4, 0.5), 3.0)
        a = draw_samples(spec, 50, 99).rows
        b = draw_samples(spec, 50, 99).rows
        assert np.array_equal(a, b)
        assert not np.array_equal(a, draw_samples(spec, 50, 100).rows)

    def test_student_t_angular_moment(self):
        X = draw_samples(EllipticalSpec("student_t", np.eye(2), 3.0), 10_000, 11)
        s = normalize_angular(X).rows
        assert np.max(np.abs(s.T @ s / len(s) - np.eye(2) / 2)) < 0.05

    def test_location(self):
        X = draw_samples(EllipticalSpec("gaussian", np.eye(2), location=[5.0, -5.0]), 5000, 1).rows
        assert np.allclose(X.mean(axis=0), [5.0, -5.0], atol=0.1)

    def test_spec_validation(self):
        with pytest.raises(DomainError):
            EllipticalSpec("student_t", np.eye(2))
        with pytest.raises(Exception):
            EllipticalSpec("gaussian", np.diag([1.0, -1.0]))

    def test_trial_streams_independent_of_order(self):
        a = [trial_rng(5, t).random() for t in range(4)]
        b = [trial_rng(5, t).random() for t in reversed(range(4))][::-1]
        assert a == b
        assert len(set(a)) == 4

    def test_random_target_is_seeded_pd(self):
        T1, T2 = random_target(6, 3), random_target(6, 3)
        assert np.array_equal(T1.entries, T2.entries) and T1.is_pd


class TestNormalizeAngular:
    def test_examples(self):
        assert np.allclose(normalize_angular([[3.0, 4.0]]).rows, [[0.6, 0.8]])
        U = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert np.array_equal(normalize_angular(U).rows, U)

    def test_unit_norm(self, rng):
        s = normalize_angular(rng.standard_normal((20, 4))).rows
        assert np.allclose(np.linalg.norm(s, axis=1), 1.0)

    def test_tyler_iterates_identical(self, rng):
        X = rng.standard_normal((15, 4)) * rng.uniform(0.1, 10, size=(15, 1))
        a = tyler_estimate(X)
        b = tyler_estimate(normalize_angular(X))
        assert np.max(np.abs(a.sigma.entries - b.sigma.entries)) <= 1e-12
        assert np.allclose(a.trace.step, b.trace.step, rtol=1e-9, atol=1e-14, equal_nan=True)


def test_sign_flip_leaves_estimates_unchanged():
    X = draw_samples(EllipticalSpec("student_t", ar1_scatter(4, 0.6), 3.0), 30, 4)
    for fit in (
        lambda Y: tyler_estimate(Y),
        lambda Y: wiesel_estimate(Y, ShrinkageConfig.wiesel(0.4)),
        lambda Y: kl_estimate(Y, ShrinkageConfig.kl(0.4)),
    ):
        a, b = fit(X.rows), fit(-X.rows)
        assert np.max(np.abs(a.sigma.entries - b.sigma.entries)) <= 1e-12
