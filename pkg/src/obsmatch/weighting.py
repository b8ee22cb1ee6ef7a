"""Analysis weights: IPTW (ATE), weighting by the odds (ATT), weight trimming,
and the weights implied by matched-set structure."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import errors
from .dataset import StudyFrame
from .matchers import ATE, ATT, MatchResult, Subclassification, _stratum_weights
from .propensity import PropensityModel

SCORE_EPS = 1e-6


@dataclass
class WeightVector:
    weights: np.ndarray
    scheme: str  # iptw | odds | frequency | variable_ratio | subclass
    estimand: str
    trim_cap: float | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def n_units(self) -> int:
        return self.weights.size


def _checked_scores(model: PropensityModel, clamp: bool) -> np.ndarray:
    e = np.asarray(model.scores, dtype=float)
    if clamp:
        return np.clip(e, SCORE_EPS, 1.0 - SCORE_EPS)
    bad = (e <= SCORE_EPS) | (e >= 1.0 - SCORE_EPS)
    if bad.any():
        raise errors.DegenerateScore(
            f"{int(bad.sum())} scores within {SCORE_EPS} of 0/1; "
            "enable trimming to clamp them")
    return e


def iptw(model: PropensityModel, discard: np.ndarray | None = None,
         clamp: bool = False) -> WeightVector:
    """Inverse probability of treatment weights: T/e + (1-T)/(1-e). ATE."""
    e = _checked_scores(model, clamp)
    t = model.treatment
    w = np.where(t == 1, 1.0 / e, 1.0 / (1.0 - e))
    if discard is not None:
        w = np.where(np.asarray(discard, dtype=bool), 0.0, w)
    return WeightVector(weights=w, scheme="iptw", estimand=ATE,
                        provenance={"clamped": bool(clamp)})


def odds_weights(model: PropensityModel, discard: np.ndarray | None = None,
                 clamp: bool = False) -> WeightVector:
    """Weighting by the odds: treated 1, controls e/(1-e). ATT."""
    e = _checked_scores(model, clamp)
    t = model.treatment
    w = np.where(t == 1, 1.0, e / (1.0 - e))
    if discard is not None:
        w = np.where(np.asarray(discard, dtype=bool), 0.0, w)
    return WeightVector(weights=w, scheme="odds", estimand=ATT,
                        provenance={"clamped": bool(clamp)})


def trim(w: WeightVector, cap: float) -> WeightVector:
    """Cap weights at ``cap``; idempotent and monotone in the cap."""
    if cap <= 0:
        raise errors.InvalidArgument("trim cap must be positive")
    capped = np.minimum(w.weights, cap)
    n_capped = int((w.weights > cap).sum())
    prov = dict(w.provenance)
    prov["n_capped"] = n_capped
    return WeightVector(weights=capped, scheme=w.scheme, estimand=w.estimand,
                        trim_cap=cap, provenance=prov)


def weights_from_match(result: MatchResult) -> WeightVector:
    """Match-implied weights for pair / ratio matching results.

    Treated units keep weight 1. Without replacement each control in a
    k-control set gets 1/k (variable ratio); with replacement a control's
    weight is the number of times it was selected (frequency).
    """
    kind = result.method.get("kind")
    if kind not in ("greedy_nn", "optimal_pair"):
        raise errors.WrongResultKind(
            f"match-implied weights need a pair/ratio result, got {kind!r}")
    with_replacement = bool(result.method.get("params", {}).get("with_replacement"))
    scheme = "frequency" if with_replacement else "variable_ratio"
    return WeightVector(weights=result.unit_weight.copy(), scheme=scheme,
                        estimand=result.estimand,
                        provenance={"matcher": kind})


def subclass_weights(sub: Subclassification, frame: StudyFrame,
                     estimand: str | None = None) -> WeightVector:
    """Weights mirroring the subclass aggregation of effect estimates.

    ATT: within subclass j treated get 1, controls get N_tj / N_cj so the
    weighted controls mirror the subclass treated count. ATE: both arms are
    weighted to the subclass share of all retained units (N_j / N_arm_j).
    """
    estimand = estimand or sub.estimand
    if estimand not in (ATT, ATE):
        raise errors.InvalidArgument(f"unknown estimand {estimand!r}")
    w = _stratum_weights(frame.treatment, sub.subclass_of,
                         sub.n_subclasses, estimand)
    convention = ("controls mirror subclass treated counts (N_tj/N_cj)"
                  if estimand == ATT
                  else "arms weighted to subclass size (N_j/N_tj, N_j/N_cj)")
    return WeightVector(weights=w, scheme="subclass", estimand=estimand,
                        provenance={"normalization": convention})


def as_weights(w) -> np.ndarray:
    """Accept a WeightVector, MatchResult, or plain array."""
    if isinstance(w, WeightVector):
        return w.weights
    if isinstance(w, MatchResult):
        return w.unit_weight
    return np.asarray(w, dtype=float)
