import numpy as np
import pytest

from obsmatch.dataset import BINARY, CONTINUOUS, Column, CovariateTable, StudyFrame
from obsmatch.propensity import PropensityModel


def make_frame(x, t, y=None, names=None, kinds=None, ids=None) -> StudyFrame:
    """Build a StudyFrame from plain arrays."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1 and len(t) != 1:
        x = x.T
    n, p = x.shape
    names = names or [f"x{j}" for j in range(p)]
    kinds = kinds or [CONTINUOUS] * p
    table = CovariateTable(
        columns=[Column(nm, kd) for nm, kd in zip(names, kinds)],
        values=x,
        missing_mask=np.zeros((n, p), dtype=bool),
    )
    return StudyFrame(covariates=table, treatment=np.asarray(t),
                      outcome=None if y is None else np.asarray(y, dtype=float),
                      unit_ids=list(ids) if ids else [])


def model_with_scores(scores, treatment) -> PropensityModel:
    """A PropensityModel wrapper around externally supplied scores."""
    scores = np.asarray(scores, dtype=float)
    return PropensityModel(
        coefficients=np.zeros(1), column_names=[], scores=scores,
        linear_scores=np.log(scores) - np.log1p(-scores),
        converged=True, iterations=0, treatment=np.asarray(treatment, dtype=int))


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)


def random_observational_frame(rng, n_treated=40, n_control=120, p=3,
                               shift=0.5, outcome=False) -> StudyFrame:
    x = np.vstack([
        rng.normal(shift, 1.0, size=(n_treated, p)),
        rng.normal(0.0, 1.0, size=(n_control, p)),
    ])
    t = np.concatenate([np.ones(n_treated, dtype=int),
                        np.zeros(n_control, dtype=int)])
    y = None
    if outcome:
        y = 2.0 * t + x @ np.linspace(0.5, 1.0, p) + rng.normal(0, 1, t.size)
    return make_frame(x, t, y)
