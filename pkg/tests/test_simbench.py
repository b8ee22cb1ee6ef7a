import numpy as np
import pytest

from obsmatch import errors
from obsmatch import simbench as sb
from obsmatch.estimation import diff_in_means
from obsmatch.propensity import expit


def one_cov(n_t=200, n_c=400, shift=0.5, seed=1, **kw):
    return sb.Scenario(
        n_treated=n_t, n_control=n_c,
        covariates=(sb.CovariateSpec("x", treated_mean=shift, control_mean=0.0),),
        seed=seed, **kw)


class TestGenerate:
    def test_shape(self):
        frame, _ = sb.generate(one_cov(100, 400))
        assert frame.n_units == 500
        assert frame.n_treated == 100

    def test_deterministic_per_seed(self):
        a, _ = sb.generate(one_cov(seed=3))
        b, _ = sb.generate(one_cov(seed=3))
        np.testing.assert_array_equal(a.covariates.values, b.covariates.values)
        np.testing.assert_array_equal(a.outcome, b.outcome)

    def test_null_effect_constant_covariates(self):
        scen = sb.Scenario(
            n_treated=50, n_control=50,
            covariates=(sb.CovariateSpec("x", 1.0, 1.0, treated_sd=0.0,
                                         control_sd=0.0),),
            true_tau=0.0,
            outcome=sb.OutcomeSpec(coefficients=(2.0,), noise_sd=0.0))
        frame, _ = sb.generate(scen)
        assert diff_in_means(frame, np.ones(100)).tau_hat == 0.0

    def test_attached_scores_follow_the_formula(self):
        beta = (-0.2, 0.8)
        scen = one_cov(propensity_coefficients=beta)
        frame, scores = sb.generate(scen)
        x = frame.column("x")
        np.testing.assert_allclose(scores, expit(beta[0] + beta[1] * x),
                                   atol=1e-12)

    def test_invalid_scenario(self):
        with pytest.raises(errors.InvalidScenario):
            sb.generate(sb.Scenario(n_treated=0, n_control=5,
                                    covariates=(sb.CovariateSpec("x", 0, 0),)))

    def test_json_round_trip(self):
        scen = one_cov(true_tau=1.5,
                       outcome=sb.OutcomeSpec(coefficients=(0.7,), noise_sd=0.5),
                       propensity_coefficients=(-0.1, 0.5))
        assert sb.Scenario.from_json(scen.to_json()) == scen

    def test_implied_coefficients_recover_arm_model(self):
        scen = one_cov(5000, 5000, shift=0.5, seed=9)
        beta = scen.implied_propensity_coefficients()
        assert beta[1] == pytest.approx(0.5)  # (mu_t - mu_c) / sigma^2
        # check the Bayes scores calibrate: mean score about N_t / N
        frame, scores = sb.generate(
            sb.Scenario(**{**scen.__dict__, "propensity_coefficients": beta}))
        assert scores.mean() == pytest.approx(0.5, abs=0.02)


class TestBiasReduction:
    def test_exact_matching_removes_all_bias(self):
        scen = sb.Scenario(
            n_treated=60, n_control=600,
            covariates=(sb.CovariateSpec("x", 0.5, 0.0, round_decimals=1),),
            seed=2)
        pct = sb.bias_reduction(scen, sb.exact_design(["x"]), "x", reps=3)
        assert pct == pytest.approx(100.0, abs=1e-9)

    def test_identity_design_removes_nothing(self):
        pct = sb.bias_reduction(one_cov(), sb.identity_design(), "x", reps=3)
        assert pct == 0.0

    def test_zero_initial_bias_rejected(self):
        scen = sb.Scenario(n_treated=50, n_control=50,
                           covariates=(sb.CovariateSpec("x", 0.3, 0.3),))
        with pytest.raises(errors.ZeroInitialBias):
            sb.bias_reduction(scen, sb.identity_design(), "x")

    def test_subclassification_at_scale_hits_the_claim(self):
        scen = one_cov(2500, 2500, shift=0.5, seed=17)
        pct = sb.bias_reduction(scen, sb.subclass_design(5, "ATT"), "x", reps=20)
        assert pct >= 85.0

    def test_deterministic_given_seeds(self):
        scen = one_cov(300, 900, seed=6)
        a = sb.bias_reduction(scen, sb.subclass_design(5, "ATT"), "x", reps=4)
        b = sb.bias_reduction(scen, sb.subclass_design(5, "ATT"), "x", reps=4)
        assert a == b


def test_epbr_same_reduction_across_covariates():
    scen = sb.Scenario(
        n_treated=1000, n_control=4000,
        covariates=(sb.CovariateSpec("a", 0.4, 0.0),
                    sb.CovariateSpec("b", 0.4, 0.0)),
        seed=4)
    design = sb.caliper_nn_design(0.25)
    ra = sb.bias_reduction(scen, design, "a", reps=5)
    rb = sb.bias_reduction(scen, design, "b", reps=5)
    assert abs(ra - rb) < 10.0


def test_true_score_weighting_balances(rng):
    spec = sb.CovariateSpec("x", 0.5, 0.0)
    base = sb.Scenario(n_treated=2000, n_control=2000,
                       covariates=(spec,), seed=8)
    scen = sb.Scenario(**{**base.__dict__,
                          "propensity_coefficients":
                          base.implied_propensity_coefficients()})
    frame, scores = sb.generate(scen)
    from obsmatch.diagnostics import std_diff, treated_sd
    sigma = treated_sd(frame, "x")
    for kind in ("iptw", "odds"):
        w = sb.true_score_weight_design(kind)(frame, scores)
        assert abs(std_diff(frame, "x", w, sigma)) < 0.1


def test_inverse_score_weights_recover_population_size():
    # with true scores, sum over treated of 1/e estimates the total n
    base = sb.Scenario(n_treated=5000, n_control=5000,
                       covariates=(sb.CovariateSpec("x", 0.5, 0.0),), seed=12)
    scen = sb.Scenario(**{**base.__dict__,
                          "propensity_coefficients":
                          base.implied_propensity_coefficients()})
    frame, scores = sb.generate(scen)
    total = (1.0 / scores[frame.treated_idx]).sum()
    assert abs(total - frame.n_units) / frame.n_units < 0.05
