import numpy as np
import pytest

from obsmatch import errors
from obsmatch.distance import (DistanceSpec, EXACT, LINEAR_PROPENSITY,
                               MAHALANOBIS, MAHALANOBIS_WITHIN_CALIPER,
                               PROPENSITY, build_matrix,
                               coarsened_exact_distance, exact_distance,
                               mahalanobis_distance,
                               mahalanobis_within_caliper, propensity_distance)
from obsmatch.propensity import expit

from conftest import make_frame, model_with_scores, random_observational_frame


class TestExact:
    def test_identical_vectors(self):
        assert exact_distance((1, 2, 3), (1, 2, 3)) == 0.0

    def test_different_vectors(self):
        assert exact_distance((1, 2, 3), (1, 2, 4)) == np.inf

    def test_length_mismatch(self):
        with pytest.raises(errors.LengthMismatch):
            exact_distance((1, 2), (1, 2, 3))

    def test_coarsened_same_bin(self):
        assert coarsened_exact_distance([2.4], [2.6], [(2.0, 3.0)]) == 0.0

    def test_coarsened_different_bin(self):
        assert coarsened_exact_distance([1.9], [2.1], [(2.0, 3.0)]) == np.inf

    def test_zero_inf_pattern_invariant_under_monotone_maps(self, rng):
        x = rng.integers(0, 3, size=(12, 2)).astype(float)
        for f in (lambda v: v ** 3, lambda v: 2 * v + 5, np.expm1):
            for i in range(6):
                for j in range(6, 12):
                    assert exact_distance(x[i], x[j]) == \
                        exact_distance(f(x[i]), f(x[j]))


class TestMahalanobis:
    def test_zero_difference(self):
        sigma = np.array([[2.0, 0.3], [0.3, 1.0]])
        assert mahalanobis_distance([1, 2], [1, 2], sigma) == 0.0

    def test_identity_sigma_is_squared_euclidean(self):
        assert mahalanobis_distance([3, 4], [0, 0], np.eye(2)) == pytest.approx(25.0)

    def test_diagonal_sigma(self):
        assert mahalanobis_distance([2, 1], [0, 0], np.diag([4.0, 1.0])) == \
            pytest.approx(2.0)

    def test_singular_sigma(self):
        with pytest.raises(errors.SingularSigma):
            mahalanobis_distance([1, 2], [0, 0], np.ones((2, 2)))

    def test_symmetry(self, rng):
        sigma = np.array([[2.0, 0.5], [0.5, 1.5]])
        for _ in range(20):
            a, b = rng.normal(size=2), rng.normal(size=2)
            assert mahalanobis_distance(a, b, sigma) == \
                pytest.approx(mahalanobis_distance(b, a, sigma))

    def test_affine_invariance_with_reestimated_sigma(self, rng):
        x = rng.normal(size=(60, 3))
        sigma = np.cov(x, rowvar=False, ddof=1)
        a = rng.normal(size=(3, 3)) + 2 * np.eye(3)
        b = rng.normal(size=3)
        z = x @ a.T + b
        sigma_z = np.cov(z, rowvar=False, ddof=1)
        for i in range(5):
            for j in range(5, 10):
                d1 = mahalanobis_distance(x[i], x[j], sigma)
                d2 = mahalanobis_distance(z[i], z[j], sigma_z)
                assert d2 == pytest.approx(d1, abs=1e-8)


class TestPropensityDistance:
    def test_equal_scores(self):
        assert propensity_distance(0.4, 0.4) == 0.0
        assert propensity_distance(0.4, 0.4, linear=True) == 0.0

    def test_linear_scale(self):
        e_j = float(expit(np.array([1.0]))[0])
        assert propensity_distance(0.5, e_j, linear=True) == pytest.approx(1.0)

    def test_probability_scale(self):
        assert propensity_distance(0.2, 0.5) == pytest.approx(0.3)

    def test_out_of_range(self):
        with pytest.raises(errors.ScoreOutOfRange):
            propensity_distance(0.0, 0.5)


class TestCaliperDistance:
    sigma = np.eye(2)

    def test_boundary_equality_is_inside(self):
        d = mahalanobis_within_caliper([1, 0], [0, 0], self.sigma,
                                       logit_i=1.0, logit_j=0.5, c=0.5)
        assert d == pytest.approx(1.0)

    def test_outside_caliper(self):
        d = mahalanobis_within_caliper([1, 0], [0, 0], self.sigma,
                                       logit_i=1.0, logit_j=0.4, c=0.5)
        assert d == np.inf

    def test_zero_difference_inside(self):
        assert mahalanobis_within_caliper([2, 3], [2, 3], self.sigma,
                                          logit_i=0.1, logit_j=0.0, c=0.5) == 0.0


class TestBuildMatrix:
    def test_shape(self, rng):
        frame = make_frame(rng.normal(size=(5, 2)), [1, 1, 0, 0, 0])
        model = model_with_scores([0.5, 0.6, 0.4, 0.5, 0.6], frame.treatment)
        d = build_matrix(frame, DistanceSpec(kind=PROPENSITY), model)
        assert d.shape == (2, 3)
        np.testing.assert_array_equal(d.rows, [0, 1])
        np.testing.assert_array_equal(d.cols, [2, 3, 4])

    def test_exact_without_twins_is_all_inf(self):
        frame = make_frame([[1.0], [2.0], [3.0], [4.0]], [1, 1, 0, 0])
        d = build_matrix(frame, DistanceSpec(kind=EXACT))
        assert np.isinf(d.d).all()

    def test_constant_scores_give_zero_matrix(self):
        frame = make_frame([[1.0], [2.0], [3.0], [4.0]], [1, 1, 0, 0])
        model = model_with_scores([0.5] * 4, frame.treatment)
        d = build_matrix(frame, DistanceSpec(kind=LINEAR_PROPENSITY), model)
        np.testing.assert_array_equal(d.d, 0.0)

    def test_symmetry_of_underlying_measure(self, rng):
        frame = random_observational_frame(rng, 6, 6, p=2)
        spec = DistanceSpec(kind=MAHALANOBIS, sigma_source="pooled")
        d = build_matrix(frame, spec)
        swapped = make_frame(frame.matrix(frame.covariates.names),
                             1 - frame.treatment)
        d2 = build_matrix(swapped, spec)
        np.testing.assert_allclose(d.d, d2.d.T, atol=1e-10)

    def test_degenerate_variance(self):
        frame = make_frame([[1.0, 1.0], [2.0, 5.0], [3.0, 5.0], [4.0, 5.0]],
                           [1, 0, 0, 0])
        with pytest.raises(errors.DegenerateVariance):
            build_matrix(frame, DistanceSpec(kind=MAHALANOBIS))

    def test_caliper_converted_to_absolute_units(self, rng):
        frame = random_observational_frame(rng, 10, 20, p=1)
        scores = np.clip(rng.uniform(0.2, 0.8, 30), 1e-3, 1 - 1e-3)
        model = model_with_scores(scores, frame.treatment)
        spec = DistanceSpec(kind=LINEAR_PROPENSITY, caliper_sd=0.25)
        d = build_matrix(frame, spec, model)
        assert d.caliper_abs == pytest.approx(
            0.25 * model.linear_scores.std(ddof=1))

    def test_mahalanobis_within_caliper_marks_far_pairs(self, rng):
        frame = random_observational_frame(rng, 8, 16, p=2)
        model = model_with_scores(
            np.clip(rng.uniform(0.1, 0.9, 24), 1e-3, 1 - 1e-3), frame.treatment)
        spec = DistanceSpec(kind=MAHALANOBIS_WITHIN_CALIPER, caliper_sd=0.2,
                            key_columns=("x0", "x1"))
        d = build_matrix(frame, spec, model)
        gap = np.abs(model.linear_scores[d.rows][:, None]
                     - model.linear_scores[d.cols][None, :])
        assert np.isinf(d.d[gap > d.caliper_abs]).all()
        assert np.isfinite(d.d[gap <= d.caliper_abs]).all()

    def test_matrix_matches_pairwise_op(self, rng):
        frame = random_observational_frame(rng, 4, 5, p=3)
        spec = DistanceSpec(kind=MAHALANOBIS)
        d = build_matrix(frame, spec)
        names = frame.covariates.names
        x = frame.matrix(names)
        sigma = np.cov(x[frame.control_idx], rowvar=False, ddof=1)
        for r, i in enumerate(d.rows):
            for c, j in enumerate(d.cols):
                assert d.d[r, c] == pytest.approx(
                    mahalanobis_distance(x[i], x[j], sigma), abs=1e-9)
