import numpy as np
import pytest

from obsmatch import errors
from obsmatch.distance import DistanceSpec, EXACT, build_matrix
from obsmatch.estimation import (adjusted_effect, bootstrap_se, diff_in_means,
                                 subclass_effect)
from obsmatch.matchers import Subclassification, greedy_nn

from conftest import make_frame, random_observational_frame


class TestDiffInMeans:
    def test_unit_weights(self):
        frame = make_frame(np.zeros((4, 0)), [1, 1, 0, 0], y=[3.0, 5.0, 1.0, 2.0])
        assert diff_in_means(frame, np.ones(4)).tau_hat == pytest.approx(2.5)

    def test_identical_arms(self):
        frame = make_frame(np.zeros((4, 0)), [1, 0, 1, 0], y=[1.0, 1.0, 4.0, 4.0])
        assert diff_in_means(frame, np.ones(4)).tau_hat == 0.0

    def test_weighted_control_mean(self):
        frame = make_frame(np.zeros((4, 0)), [1, 0, 0, 0], y=[4.0, 0.0, 3.0, 6.0])
        w = np.array([1.0, 1 / 3, 1 / 3, 1 / 3])
        assert diff_in_means(frame, w).tau_hat == pytest.approx(1.0)

    def test_no_outcome(self):
        frame = make_frame(np.zeros((2, 0)), [1, 0])
        with pytest.raises(errors.NoOutcome):
            diff_in_means(frame, np.ones(2))

    def test_empty_arm(self):
        frame = make_frame(np.zeros((2, 0)), [1, 0], y=[1.0, 2.0])
        with pytest.raises(errors.EmptyArm):
            diff_in_means(frame, np.array([1.0, 0.0]))

    def test_pooled_equals_mean_of_pair_differences(self, rng):
        # 1:1 matching without replacement, unit weights on matched units
        frame = random_observational_frame(rng, 20, 50, p=1, outcome=True)
        d = build_matrix(frame, DistanceSpec(kind="mahalanobis"))
        res = greedy_nn(d, order="index")
        est = diff_in_means(frame, res)
        pair_diffs = [frame.outcome[s.treated[0]] - frame.outcome[s.controls[0]]
                      for s in res.sets]
        assert est.tau_hat == pytest.approx(np.mean(pair_diffs), abs=1e-12)


def exact_matched_frame():
    """Treated and controls share covariate values exactly; Y = 2T + f(X)."""
    grid = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    x = np.concatenate([grid, grid, grid])  # 5 treated, 10 controls
    t = np.array([1] * 5 + [0] * 10)
    f = np.sin(3 * x) + x ** 2
    y = 2.0 * t + f
    return make_frame(x[:, None], t, y=y)


class TestAdjusted:
    def test_exact_matching_recovers_effect_exactly(self):
        frame = exact_matched_frame()
        d = build_matrix(frame, DistanceSpec(kind=EXACT))
        res = greedy_nn(d, k=2, order="index")
        dm = diff_in_means(frame, res)
        adj = adjusted_effect(frame, res, covariates=["x0"])
        assert dm.tau_hat == pytest.approx(2.0, abs=1e-10)
        assert adj.tau_hat == pytest.approx(2.0, abs=1e-10)

    def test_zero_covariates_equals_diff_in_means(self, rng):
        frame = random_observational_frame(rng, 20, 40, p=2, outcome=True)
        w = np.ones(frame.n_units)
        assert adjusted_effect(frame, w, covariates=[]).tau_hat == \
            pytest.approx(diff_in_means(frame, w).tau_hat, abs=1e-12)

    def test_perfectly_balanced_covariate_changes_nothing(self, rng):
        # same covariate values in both arms -> projection leaves tau alone
        x = np.tile(np.linspace(-1, 1, 8), 2)
        t = np.array([1] * 8 + [0] * 8)
        y = 1.5 * t + rng.normal(size=16)
        frame = make_frame(x[:, None], t, y=y)
        w = np.ones(16)
        without = adjusted_effect(frame, w, covariates=[]).tau_hat
        with_cov = adjusted_effect(frame, w, covariates=["x0"]).tau_hat
        assert with_cov == pytest.approx(without, abs=1e-8)

    def test_singular_design(self, rng):
        frame = random_observational_frame(rng, 10, 10, p=1, outcome=True)
        x = frame.matrix(["x0"])
        dup = make_frame(np.hstack([x, x]), frame.treatment, y=frame.outcome)
        with pytest.raises(errors.SingularDesign):
            adjusted_effect(dup, np.ones(20), covariates=["x0", "x1"])


def subclass_fixture(sizes, betas, t_share=0.5):
    """Noiseless outcome with a known per-subclass effect."""
    labels, t, y = [], [], []
    for s, (n, beta) in enumerate(zip(sizes, betas)):
        n_t = int(n * t_share)
        for i in range(n):
            treated = 1 if i < n_t else 0
            labels.append(s)
            t.append(treated)
            y.append(beta * treated + 10.0 * s)
    n_total = len(labels)
    frame = make_frame(np.zeros((n_total, 0)), t, y=y)
    sub = Subclassification(n_subclasses=len(sizes),
                            boundaries=np.arange(1, len(sizes)) / len(sizes),
                            subclass_of=np.asarray(labels), estimand="ATE")
    return frame, sub


class TestSubclassEffect:
    def test_ate_aggregation_by_total_size(self):
        frame, sub = subclass_fixture([60, 40], [1.0, 2.0])
        est = subclass_effect(frame, sub, "ATE")
        assert est.tau_hat == pytest.approx(1.4, abs=1e-12)

    def test_constant_effect_is_weighting_invariant(self):
        frame, sub = subclass_fixture([30, 70], [1.7, 1.7])
        for estimand in ("ATT", "ATE"):
            assert subclass_effect(frame, sub, estimand).tau_hat == \
                pytest.approx(1.7, abs=1e-12)

    def test_att_all_treated_in_first_subclass(self):
        # subclass 2 has controls only: zero ATT weight, aggregate = beta_1
        t = [1, 1, 0, 0, 0, 0]
        labels = [0, 0, 0, 0, 1, 1]
        y = [3.0, 3.0, 0.0, 0.0, 5.0, 7.0]
        frame = make_frame(np.zeros((6, 0)), t, y=y)
        sub = Subclassification(2, np.array([0.5]), np.asarray(labels), "ATT")
        est = subclass_effect(frame, sub, "ATT")
        assert est.tau_hat == pytest.approx(3.0, abs=1e-12)

    def test_joint_mode_matches_per_subclass_without_covariates(self):
        frame, sub = subclass_fixture([40, 60], [0.5, 2.5])
        a = subclass_effect(frame, sub, "ATE", mode="per_subclass")
        b = subclass_effect(frame, sub, "ATE", mode="joint")
        assert a.tau_hat == pytest.approx(b.tau_hat, abs=1e-10)

    def test_aggregation_shares_sum_to_one(self):
        frame, sub = subclass_fixture([25, 25, 50], [1.0, 2.0, 3.0])
        est = subclass_effect(frame, sub, "ATE")
        assert sum(est.method["shares"]) == pytest.approx(1.0)

    def test_empty_arm_raises(self):
        t = [1, 1, 0, 0]
        labels = [0, 0, 1, 1]
        frame = make_frame(np.zeros((4, 0)), t, y=[1.0, 2.0, 3.0, 4.0])
        sub = Subclassification(2, np.array([0.5]), np.asarray(labels), "ATE")
        with pytest.raises(errors.EmptySubclassArm):
            subclass_effect(frame, sub, "ATE")


class TestBootstrap:
    @staticmethod
    def pipeline(frame):
        return diff_in_means(frame, np.ones(frame.n_units))

    def test_seeded_determinism(self, rng):
        frame = random_observational_frame(rng, 20, 30, p=1, outcome=True)
        a = bootstrap_se(self.pipeline, frame, n_reps=50, seed=4)
        b = bootstrap_se(self.pipeline, frame, n_reps=50, seed=4)
        assert a.se == b.se
        assert a.ci95 == b.ci95

    def test_single_replicate_invalid(self, rng):
        frame = random_observational_frame(rng, 10, 10, p=1, outcome=True)
        with pytest.raises(errors.InvalidArgument):
            bootstrap_se(self.pipeline, frame, n_reps=1, seed=0)

    def test_constant_outcome_gives_zero_se(self):
        frame = make_frame(np.zeros((8, 0)), [1, 1, 1, 1, 0, 0, 0, 0],
                           y=[3.0] * 8)
        est = bootstrap_se(self.pipeline, frame, n_reps=25, seed=1)
        assert est.se == 0.0
        assert est.tau_hat == 0.0

    def test_too_many_failures(self, rng):
        frame = random_observational_frame(rng, 10, 10, p=1, outcome=True)
        calls = {"n": 0}

        def flaky(f):
            calls["n"] += 1
            if calls["n"] > 1:  # point estimate succeeds, replicates fail
                raise errors.EmptyArm("synthetic failure")
            return self.pipeline(f)

        with pytest.raises(errors.TooManyFailures):
            bootstrap_se(flaky, frame, n_reps=20, seed=0)

    def test_failed_replicates_recorded(self, rng):
        frame = random_observational_frame(rng, 12, 12, p=1, outcome=True)
        calls = {"n": 0}

        def sometimes(f):
            calls["n"] += 1
            if calls["n"] % 10 == 0:
                raise errors.EmptyArm("synthetic failure")
            return self.pipeline(f)

        est = bootstrap_se(sometimes, frame, n_reps=40, seed=2)
        assert est.method["bootstrap_failures"] > 0
        assert est.method["se_kind"] == "bootstrap"

    def test_ci_is_tau_plus_minus_196_se(self, rng):
        frame = random_observational_frame(rng, 15, 20, p=1, outcome=True)
        est = bootstrap_se(self.pipeline, frame, n_reps=30, seed=3)
        lo, hi = est.ci95
        assert lo == pytest.approx(est.tau_hat - 1.96 * est.se)
        assert hi == pytest.approx(est.tau_hat + 1.96 * est.se)


def test_design_stages_accept_outcome_free_frames(rng):
    """The design path never needs Y: fit, match, diagnose without outcome."""
    from obsmatch.diagnostics import compute_balance
    from obsmatch.propensity import fit_logistic

    frame = random_observational_frame(rng, 25, 50, p=2, outcome=False)
    assert frame.outcome is None
    model = fit_logistic(frame, frame.covariates.names)
    d = build_matrix(frame, DistanceSpec(kind="linear_propensity"), model)
    res = greedy_nn(d, order="index")
    compute_balance(frame, model, res)  # no outcome required anywhere
