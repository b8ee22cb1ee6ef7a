"""Propensity score estimation by maximum-likelihood logistic regression.

The fit is iteratively reweighted least squares (Newton steps on the
log-likelihood) on internally standardized covariates, which makes the
stopping rule scale-free and keeps the normal equations well conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dataset, errors

MAX_ABS_LINEAR = 30.0  # separation guard on the linear score


def expit(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta, dtype=float)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


@dataclass
class PropensityModel:
    """Fitted logistic model: coefficients (intercept first), per-unit scores."""

    coefficients: np.ndarray
    column_names: list[str]
    scores: np.ndarray
    linear_scores: np.ndarray
    converged: bool
    iterations: int
    treatment: np.ndarray
    notes: dict = field(default_factory=dict)

    @property
    def n_units(self) -> int:
        return self.scores.size

    def to_dict(self) -> dict:
        coef = {"(intercept)": float(self.coefficients[0])}
        for name, b in zip(self.column_names, self.coefficients[1:]):
            coef[name] = float(b)
        return {
            "coefficients": coef,
            "columns": list(self.column_names),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "dropped_constant_columns": list(self.notes.get("dropped_constant", [])),
            "added_terms": list(self.notes.get("added_terms", [])),
        }


def fit_logistic(frame: dataset.StudyFrame, columns: list[str],
                 max_iter: int = 50, tol: float = 1e-8) -> PropensityModel:
    """MLE logistic regression of treatment on the named covariate columns.

    Converges when the largest absolute coefficient change (standardized
    scale) drops below ``tol``. Constant columns carry no information and are
    dropped with a zero coefficient (recorded in notes); rank deficiency among
    the remaining columns raises SingularDesign, and a linear score escaping
    past +-30 raises Separation.
    """
    columns = list(columns)
    t = frame.treatment.astype(float)
    n = frame.n_units
    x_raw = frame.matrix(columns)

    sd = x_raw.std(axis=0, ddof=1) if columns else np.empty(0)
    keep = [j for j in range(len(columns)) if sd[j] > 0]
    dropped = [columns[j] for j in range(len(columns)) if sd[j] <= 0]
    if n <= len(keep) + 1:
        raise errors.SingularDesign(
            f"{n} units cannot identify {len(keep) + 1} coefficients")
    mu = x_raw[:, keep].mean(axis=0) if keep else np.empty(0)
    sdk = sd[keep] if keep else np.empty(0)
    z = np.column_stack(
        [np.ones(n)] + ([ (x_raw[:, keep] - mu) / sdk ] if keep else []))
    p_eff = z.shape[1]

    beta = np.zeros(p_eff)
    tbar = t.mean()
    beta[0] = float(np.log(tbar) - np.log1p(-tbar))

    converged = False
    iterations = 0
    for it in range(1, max_iter + 1):
        iterations = it
        eta = z @ beta
        if np.max(np.abs(eta)) > MAX_ABS_LINEAR:
            raise errors.Separation(
                "linear scores escaped past +-30; data are (quasi-)separable")
        prob = expit(eta)
        w = prob * (1.0 - prob)
        grad = z.T @ (t - prob)
        hess = z.T @ (z * w[:, None])
        try:
            chol = np.linalg.cholesky(hess)
        except np.linalg.LinAlgError:
            raise errors.SingularDesign(
                "weighted normal equations are rank-deficient") from None
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    if not converged:
        raise errors.NotConverged(max_iter)

    eta = z @ beta
    if np.max(np.abs(eta)) > MAX_ABS_LINEAR:
        raise errors.Separation(
            "linear scores escaped past +-30; data are (quasi-)separable")
    scores = expit(eta)

    # map standardized coefficients back to the raw covariate scale
    coefficients = np.zeros(len(columns) + 1)
    coefficients[0] = beta[0]
    for k, j in enumerate(keep):
        coefficients[j + 1] = beta[k + 1] / sdk[k]
        coefficients[0] -= beta[k + 1] * mu[k] / sdk[k]

    notes = {}
    if dropped:
        notes["dropped_constant"] = dropped

    model = PropensityModel(
        coefficients=coefficients,
        column_names=columns,
        scores=scores,
        linear_scores=eta,
        converged=True,
        iterations=iterations,
        treatment=frame.treatment,
        notes=notes,
    )
    _check_score_equations(model, x_raw, t, max_iter)
    return model


def _check_score_equations(model: PropensityModel, x_raw: np.ndarray,
                           t: np.ndarray, max_iter: int) -> None:
    # at the MLE, sum(T - e) = 0 and sum((T - e) x_k) = 0 per column
    resid = t - model.scores
    tol = 1e-6 * t.size
    if abs(resid.sum()) > tol:
        raise errors.NotConverged(max_iter)
    if x_raw.shape[1] and np.max(np.abs(resid @ x_raw)) > tol:
        raise errors.NotConverged(max_iter)


def respecify(frame: dataset.StudyFrame, model: PropensityModel,
              balance, threshold: float = 0.25,
              max_iter: int = 50, tol: float = 1e-8) -> PropensityModel:
    """Refit with squares / interactions of covariates still imbalanced.

    Every model covariate whose post-matching |standardized difference|
    exceeds ``threshold`` contributes its square (continuous columns only;
    a binary square duplicates the column) and each imbalanced pair
    contributes an interaction. One round per call; callers iterate.
    """
    in_model = set(model.column_names)
    imbalanced = [
        rec.name for rec in balance.covariates
        if rec.name in in_model and abs(rec.std_diff_post) > threshold
    ]
    squares = [
        name for name in imbalanced
        if frame.covariates.kind(name) == dataset.CONTINUOUS
        and f"{name}^2" not in in_model
    ]
    pairs = [
        (a, b) for i, a in enumerate(imbalanced) for b in imbalanced[i + 1:]
        if f"{a}:{b}" not in in_model
    ]
    expanded = dataset.expand_terms(frame, squares=squares, interactions=pairs)
    added = [f"{name}^2" for name in squares] + [f"{a}:{b}" for a, b in pairs]
    refit = fit_logistic(expanded, list(model.column_names) + added,
                         max_iter=max_iter, tol=tol)
    refit.notes["added_terms"] = added
    return refit
