"""Synthetic observational studies with known truth.

Generates frames from per-arm normal covariate models with an optional known
propensity model and a known constant effect, and measures percent bias
reduction for a given design. This is the oracle bed for the calibration
claims (five subclasses, calipers, weighting).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import errors
from .dataset import CONTINUOUS, Column, CovariateTable, StudyFrame
from .diagnostics import weighted_mean
from .distance import (LINEAR_PROPENSITY, DistanceSpec, EXACT, build_matrix)
from .matchers import ATT, greedy_nn, result_from_subclassification, subclassify
from .propensity import PropensityModel, expit, fit_logistic
from .weighting import as_weights, iptw, odds_weights, subclass_weights


@dataclass(frozen=True)
class CovariateSpec:
    """Normal covariate with per-arm mean/SD; optional rounding gives the
    discrete support that exact matching needs."""

    name: str
    treated_mean: float
    control_mean: float
    treated_sd: float = 1.0
    control_sd: float = 1.0
    round_decimals: int | None = None


@dataclass(frozen=True)
class OutcomeSpec:
    intercept: float = 0.0
    coefficients: tuple[float, ...] = ()
    noise_sd: float = 1.0


@dataclass(frozen=True)
class Scenario:
    n_treated: int
    n_control: int
    covariates: tuple[CovariateSpec, ...]
    true_tau: float = 0.0
    outcome: OutcomeSpec = field(default_factory=OutcomeSpec)
    propensity_coefficients: tuple[float, ...] | None = None  # intercept first
    seed: int = 0

    def validate(self) -> None:
        if self.n_treated < 1 or self.n_control < 1:
            raise errors.InvalidScenario("both arms need at least one unit")
        if not self.covariates:
            raise errors.InvalidScenario("need at least one covariate")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise errors.InvalidScenario("duplicate covariate names")
        for c in self.covariates:
            if c.treated_sd < 0 or c.control_sd < 0:
                raise errors.InvalidScenario(f"negative SD for {c.name!r}")
        if self.outcome.coefficients and \
                len(self.outcome.coefficients) != len(self.covariates):
            raise errors.InvalidScenario("outcome coefficients do not match covariates")
        if self.propensity_coefficients is not None and \
                len(self.propensity_coefficients) != len(self.covariates) + 1:
            raise errors.InvalidScenario(
                "propensity coefficients must be intercept + one per covariate")

    def implied_propensity_coefficients(self) -> tuple[float, ...]:
        """True logistic coefficients implied by equal-variance normal arms.

        With X | T=t ~ N(mu_t, sigma^2) per covariate (independent), Bayes'
        rule gives logit P(T=1 | x) = const + sum_j (mu_tj - mu_cj)/sigma_j^2 x_j.
        """
        slopes = []
        intercept = float(np.log(self.n_treated / self.n_control))
        for c in self.covariates:
            if abs(c.treated_sd - c.control_sd) > 1e-12:
                raise errors.InvalidScenario(
                    f"{c.name!r} has unequal arm SDs; the true score is not logistic")
            var = c.treated_sd ** 2
            if var <= 0:
                raise errors.InvalidScenario(f"{c.name!r} has zero variance")
            slopes.append((c.treated_mean - c.control_mean) / var)
            intercept += (c.control_mean ** 2 - c.treated_mean ** 2) / (2 * var)
        return tuple([intercept] + slopes)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        raw = json.loads(text)
        raw["covariates"] = tuple(CovariateSpec(**c) for c in raw["covariates"])
        raw["outcome"] = OutcomeSpec(**{
            **raw.get("outcome", {}),
            "coefficients": tuple(raw.get("outcome", {}).get("coefficients", ())),
        })
        if raw.get("propensity_coefficients") is not None:
            raw["propensity_coefficients"] = tuple(raw["propensity_coefficients"])
        return cls(**raw)


def generate(scenario: Scenario,
             seed: int | None = None) -> tuple[StudyFrame, np.ndarray | None]:
    """Draw a frame from the scenario; byte-identical per (scenario, seed).

    Y = true_tau * T + linear(X) + noise. When propensity coefficients are
    given, the attached true scores are expit(x' beta) elementwise.
    """
    scenario.validate()
    rng = np.random.default_rng(scenario.seed if seed is None else seed)
    n_t, n_c = scenario.n_treated, scenario.n_control
    n = n_t + n_c
    treatment = np.concatenate([np.ones(n_t, dtype=int), np.zeros(n_c, dtype=int)])

    columns = []
    values = np.empty((n, len(scenario.covariates)))
    for j, spec in enumerate(scenario.covariates):
        xt = rng.normal(spec.treated_mean, spec.treated_sd, size=n_t)
        xc = rng.normal(spec.control_mean, spec.control_sd, size=n_c)
        x = np.concatenate([xt, xc])
        if spec.round_decimals is not None:
            x = np.round(x, spec.round_decimals)
        values[:, j] = x
        columns.append(Column(spec.name, CONTINUOUS))

    coefs = np.asarray(scenario.outcome.coefficients or
                       [0.0] * len(scenario.covariates))
    y = (scenario.true_tau * treatment
         + scenario.outcome.intercept
         + values @ coefs
         + scenario.outcome.noise_sd * rng.standard_normal(n))

    table = CovariateTable(columns=columns, values=values,
                           missing_mask=np.zeros_like(values, dtype=bool))
    frame = StudyFrame(covariates=table, treatment=treatment, outcome=y,
                       unit_ids=[f"u{i}" for i in range(n)])
    true_scores = None
    if scenario.propensity_coefficients is not None:
        beta = np.asarray(scenario.propensity_coefficients)
        true_scores = expit(beta[0] + values @ beta[1:])
    return frame, true_scores


# -- canned designs (frame, true_scores) -> per-unit weights -----------------

def identity_design():
    """No adjustment at all: every unit keeps weight 1."""
    def run(frame: StudyFrame, true_scores=None) -> np.ndarray:
        return np.ones(frame.n_units)
    return run


def subclass_design(n_subclasses: int = 5, estimand: str = ATT):
    """Fit the propensity model on all covariates, stratify, reweight."""
    def run(frame: StudyFrame, true_scores=None) -> np.ndarray:
        model = fit_logistic(frame, frame.covariates.names)
        sub = subclassify(model, frame, n_subclasses, estimand)
        return subclass_weights(sub, frame).weights
    return run


def caliper_nn_design(caliper_sd: float = 0.2, k: int = 1,
                      with_replacement: bool = False):
    """1:k nearest neighbor on the linear propensity score within a caliper."""
    def run(frame: StudyFrame, true_scores=None) -> np.ndarray:
        model = fit_logistic(frame, frame.covariates.names)
        spec = DistanceSpec(kind=LINEAR_PROPENSITY, caliper_sd=caliper_sd)
        d = build_matrix(frame, spec, model)
        result = greedy_nn(d, k=k, with_replacement=with_replacement,
                           caliper=d.caliper_abs,
                           order="descending_propensity",
                           scores=model.scores[d.rows])
        return result.unit_weight
    return run


def exact_design(columns: list[str] | None = None):
    """Exact matching (with replacement) on the named columns."""
    def run(frame: StudyFrame, true_scores=None) -> np.ndarray:
        spec = DistanceSpec(kind=EXACT,
                            key_columns=tuple(columns) if columns else None)
        d = build_matrix(frame, spec)
        result = greedy_nn(d, k=1, with_replacement=True)
        return result.unit_weight
    return run


def true_score_weight_design(kind: str = "iptw"):
    """IPTW or odds weighting straight from the scenario's true scores."""
    def run(frame: StudyFrame, true_scores=None) -> np.ndarray:
        if true_scores is None:
            raise errors.InvalidScenario(
                "design needs true scores; set propensity_coefficients")
        model = PropensityModel(
            coefficients=np.zeros(1), column_names=[],
            scores=np.asarray(true_scores),
            linear_scores=np.log(true_scores) - np.log1p(-np.asarray(true_scores)),
            converged=True, iterations=0, treatment=frame.treatment)
        wv = iptw(model) if kind == "iptw" else odds_weights(model)
        return wv.weights
    return run


def bias_reduction(scenario: Scenario, design, covariate: str,
                   reps: int = 20, base_seed: int | None = None) -> float:
    """Mean percent bias reduction of a design on one covariate.

    100 * (1 - |post-design weighted mean difference| / |initial difference|),
    averaged over ``reps`` independently seeded draws.
    """
    scenario.validate()
    spec = next((c for c in scenario.covariates if c.name == covariate), None)
    if spec is None:
        raise errors.InvalidScenario(f"no covariate named {covariate!r}")
    if spec.treated_mean == spec.control_mean:
        raise errors.ZeroInitialBias(
            f"{covariate!r} has equal arm means in the scenario")
    root = scenario.seed if base_seed is None else base_seed
    seeds = [root + 7919 * r for r in range(reps)]
    reductions = []
    for s in seeds:
        frame, true_scores = generate(scenario, seed=s)
        x = frame.column(covariate)
        initial = (x[frame.treated_idx].mean() - x[frame.control_idx].mean())
        if initial == 0:
            raise errors.ZeroInitialBias(
                f"realized initial difference on {covariate!r} is zero")
        w = as_weights(design(frame, true_scores))
        post = (weighted_mean(x[frame.treated_idx], w[frame.treated_idx])
                - weighted_mean(x[frame.control_idx], w[frame.control_idx]))
        reductions.append(100.0 * (1.0 - abs(post) / abs(initial)))
    return float(np.mean(reductions))
