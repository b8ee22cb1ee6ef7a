"""Observational-study design toolkit.

Four-step workflow: define closeness (distance), match, diagnose balance,
estimate the effect. The design stages never read the outcome.
"""

from . import errors
from .dataset import (CovariateTable, StudyFrame, expand_terms,
                      impute_with_indicators, load_csv, save_csv)
from .diagnostics import (BalanceReport, compute_balance, eqq_stats,
                          plot_jitter, plot_love, rubin_metrics, std_diff,
                          treated_sd)
from .distance import DistanceMatrix, DistanceSpec, build_matrix
from .estimation import (EffectEstimate, adjusted_effect, bootstrap_se,
                         diff_in_means, subclass_effect)
from .matchers import (MatchResult, Subclassification, full_match, greedy_nn,
                       optimal_pair, result_from_subclassification,
                       subclassify, trim_common_support)
from .propensity import PropensityModel, fit_logistic, respecify
from .weighting import (WeightVector, iptw, odds_weights, subclass_weights,
                        trim, weights_from_match)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "CovariateTable", "StudyFrame", "load_csv", "save_csv",
    "impute_with_indicators", "expand_terms",
    "PropensityModel", "fit_logistic", "respecify",
    "DistanceSpec", "DistanceMatrix", "build_matrix",
    "MatchResult", "Subclassification", "greedy_nn", "optimal_pair",
    "full_match", "subclassify", "result_from_subclassification",
    "trim_common_support",
    "WeightVector", "iptw", "odds_weights", "trim", "weights_from_match",
    "subclass_weights",
    "BalanceReport", "compute_balance", "std_diff", "rubin_metrics",
    "eqq_stats", "treated_sd", "plot_jitter", "plot_love",
    "EffectEstimate", "diff_in_means", "adjusted_effect", "subclass_effect",
    "bootstrap_se",
    "__version__",
]
