"""Distance measures between treated and control units.

Implements exact / coarsened-exact distance, the (squared-form) Mahalanobis
quadratic form, propensity and linear-propensity distances, and Mahalanobis
within propensity calipers, plus the dense treated-by-control matrix builder.
All measures are affinely invariant; infinity marks forbidden pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import errors
from .dataset import StudyFrame
from .propensity import PropensityModel

EXACT = "exact"
COARSENED_EXACT = "coarsened_exact"
MAHALANOBIS = "mahalanobis"
PROPENSITY = "propensity"
LINEAR_PROPENSITY = "linear_propensity"
MAHALANOBIS_WITHIN_CALIPER = "mahalanobis_within_caliper"

KINDS = (EXACT, COARSENED_EXACT, MAHALANOBIS, PROPENSITY,
         LINEAR_PROPENSITY, MAHALANOBIS_WITHIN_CALIPER)

CONTROL_GROUP = "control_group"
POOLED = "pooled"

SIGMA_PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class DistanceSpec:
    """Declarative distance definition.

    ``caliper_sd`` is expressed in standard deviations of the linear
    propensity score and converted to absolute units at matrix build time.
    ``key_columns`` restricts the within-caliper Mahalanobis (and, when given,
    the exact / Mahalanobis kinds) to a subset of covariates.
    """

    kind: str
    sigma_source: str = CONTROL_GROUP
    caliper_sd: float | None = None
    key_columns: tuple[str, ...] | None = None
    coarsen_bins: dict | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise errors.InvalidArgument(f"unknown distance kind {self.kind!r}")
        if self.sigma_source not in (CONTROL_GROUP, POOLED):
            raise errors.InvalidArgument(
                f"unknown sigma source {self.sigma_source!r}")
        if self.kind == MAHALANOBIS_WITHIN_CALIPER and self.caliper_sd is None:
            raise errors.InvalidArgument(
                "mahalanobis_within_caliper needs caliper_sd")
        if self.caliper_sd is not None and self.caliper_sd <= 0:
            raise errors.InvalidArgument("caliper_sd must be positive")


@dataclass
class DistanceMatrix:
    """Realized treated-by-control distances; +inf marks inadmissible pairs."""

    rows: np.ndarray  # frame indices of treated units
    cols: np.ndarray  # frame indices of control units
    d: np.ndarray     # (n_treated, n_control)
    n_units: int
    caliper_abs: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.d.shape


def exact_distance(x_i, x_j) -> float:
    """0 when all coordinates agree, +inf otherwise."""
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    x_j = np.atleast_1d(np.asarray(x_j, dtype=float))
    if x_i.shape != x_j.shape:
        raise errors.LengthMismatch(f"{x_i.shape} vs {x_j.shape}")
    return 0.0 if np.array_equal(x_i, x_j) else float("inf")


def coarsened_exact_distance(x_i, x_j, bin_edges) -> float:
    """Exact distance on bin indices; ``bin_edges`` holds edges per coordinate."""
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    x_j = np.atleast_1d(np.asarray(x_j, dtype=float))
    if x_i.shape != x_j.shape:
        raise errors.LengthMismatch(f"{x_i.shape} vs {x_j.shape}")
    for k in range(x_i.size):
        edges = np.asarray(bin_edges[k], dtype=float)
        if np.searchsorted(edges, x_i[k], side="right") != \
           np.searchsorted(edges, x_j[k], side="right"):
            return float("inf")
    return 0.0


def _check_sigma(sigma: np.ndarray) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise errors.SingularSigma("sigma must be square")
    evals = np.linalg.eigvalsh(sigma)
    if evals[0] <= SIGMA_PIVOT_TOL * max(evals[-1], 1.0):
        raise errors.SingularSigma(
            f"sigma is numerically singular (eigenvalue ratio {evals[0]:.3g}/{evals[-1]:.3g})")
    return sigma


def mahalanobis_distance(x_i, x_j, sigma) -> float:
    """Quadratic form (x_i - x_j)' sigma^-1 (x_i - x_j); this is the squared form."""
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    x_j = np.atleast_1d(np.asarray(x_j, dtype=float))
    if x_i.shape != x_j.shape:
        raise errors.LengthMismatch(f"{x_i.shape} vs {x_j.shape}")
    sigma = _check_sigma(sigma)
    diff = x_i - x_j
    return float(diff @ np.linalg.solve(sigma, diff))


def propensity_distance(e_i: float, e_j: float, linear: bool = False) -> float:
    """|e_i - e_j| on the probability scale, or |logit e_i - logit e_j|."""
    for e in (e_i, e_j):
        if not (0.0 < e < 1.0):
            raise errors.ScoreOutOfRange(f"propensity score {e} outside (0,1)")
    if linear:
        li = np.log(e_i) - np.log1p(-e_i)
        lj = np.log(e_j) - np.log1p(-e_j)
        return float(abs(li - lj))
    return float(abs(e_i - e_j))


def mahalanobis_within_caliper(z_i, z_j, sigma_z, logit_i: float,
                               logit_j: float, c: float) -> float:
    """Mahalanobis on the key covariates when the linear scores are within c.

    ``c`` is in absolute logit units; equality sits inside the caliper.
    """
    if c <= 0:
        raise errors.InvalidArgument("caliper must be positive")
    if abs(logit_i - logit_j) > c:
        return float("inf")
    return mahalanobis_distance(z_i, z_j, sigma_z)


def _group_sigma(x: np.ndarray, source_rows: np.ndarray,
                 names: list[str]) -> np.ndarray:
    src = x[source_rows]
    if src.shape[0] < 2:
        raise errors.DegenerateVariance(
            "sigma source group has fewer than 2 units")
    variances = src.var(axis=0, ddof=1)
    for j, v in enumerate(variances):
        if v <= 0:
            raise errors.DegenerateVariance(
                f"column {names[j]!r} is constant in the sigma source group")
    return np.cov(src, rowvar=False, ddof=1).reshape(len(names), len(names))


def _pairwise_sq_mahalanobis(xt: np.ndarray, xc: np.ndarray,
                             sigma: np.ndarray) -> np.ndarray:
    sigma = _check_sigma(sigma)
    chol = np.linalg.cholesky(sigma)
    wt = np.linalg.solve(chol, xt.T).T
    wc = np.linalg.solve(chol, xc.T).T
    sq = (
        (wt * wt).sum(axis=1)[:, None]
        + (wc * wc).sum(axis=1)[None, :]
        - 2.0 * wt @ wc.T
    )
    np.maximum(sq, 0.0, out=sq)
    return sq


def build_matrix(frame: StudyFrame, spec: DistanceSpec,
                 model: PropensityModel | None = None,
                 include: np.ndarray | None = None) -> DistanceMatrix:
    """Materialize the dense treated-by-control matrix for a distance spec.

    ``include`` masks units out (e.g. common-support discards); sigma and the
    caliper's SD conversion are estimated from the included units only.
    """
    if include is None:
        include = np.ones(frame.n_units, dtype=bool)
    include = np.asarray(include, dtype=bool)
    rows = np.flatnonzero((frame.treatment == 1) & include)
    cols = np.flatnonzero((frame.treatment == 0) & include)
    if rows.size == 0 or cols.size == 0:
        raise errors.EverythingDiscarded("no treated/control units to match")

    needs_scores = spec.kind in (PROPENSITY, LINEAR_PROPENSITY,
                                 MAHALANOBIS_WITHIN_CALIPER)
    if needs_scores and model is None:
        raise errors.InvalidArgument(f"{spec.kind} distance needs a fitted model")

    caliper_abs = None
    if spec.caliper_sd is not None:
        if model is None:
            raise errors.InvalidArgument("caliper_sd needs a fitted model")
        pooled = np.concatenate([rows, cols])
        sd = float(model.linear_scores[pooled].std(ddof=1))
        if sd <= 0:
            raise errors.DegenerateVariance("linear scores are constant")
        caliper_abs = spec.caliper_sd * sd

    names = list(spec.key_columns) if spec.key_columns else frame.covariates.names
    if spec.kind in (PROPENSITY, LINEAR_PROPENSITY):
        e = model.scores
        if np.any(e <= 0) or np.any(e >= 1):
            raise errors.ScoreOutOfRange("model scores outside (0,1)")
        v = model.linear_scores if spec.kind == LINEAR_PROPENSITY else e
        d = np.abs(v[rows][:, None] - v[cols][None, :])
    elif spec.kind == EXACT:
        x = frame.matrix(names)
        d = _exact_pattern(x[rows], x[cols])
    elif spec.kind == COARSENED_EXACT:
        if not spec.coarsen_bins:
            raise errors.InvalidArgument("coarsened_exact needs coarsen_bins")
        x = frame.matrix(names)
        binned = np.empty_like(x)
        for j, name in enumerate(names):
            if name not in spec.coarsen_bins:
                raise errors.InvalidArgument(f"no bin edges for column {name!r}")
            edges = np.asarray(spec.coarsen_bins[name], dtype=float)
            binned[:, j] = np.searchsorted(edges, x[:, j], side="right")
        d = _exact_pattern(binned[rows], binned[cols])
    elif spec.kind == MAHALANOBIS:
        x = frame.matrix(names)
        sigma = _group_sigma(x, cols if spec.sigma_source == CONTROL_GROUP
                             else np.concatenate([rows, cols]), names)
        d = _pairwise_sq_mahalanobis(x[rows], x[cols], sigma)
    elif spec.kind == MAHALANOBIS_WITHIN_CALIPER:
        x = frame.matrix(names)
        sigma = _group_sigma(x, cols if spec.sigma_source == CONTROL_GROUP
                             else np.concatenate([rows, cols]), names)
        d = _pairwise_sq_mahalanobis(x[rows], x[cols], sigma)
        logit_gap = np.abs(model.linear_scores[rows][:, None]
                           - model.linear_scores[cols][None, :])
        d[logit_gap > caliper_abs] = np.inf
    else:  # pragma: no cover - guarded by DistanceSpec
        raise errors.InvalidArgument(spec.kind)

    return DistanceMatrix(rows=rows, cols=cols, d=d,
                          n_units=frame.n_units, caliper_abs=caliper_abs)


def _exact_pattern(xt: np.ndarray, xc: np.ndarray) -> np.ndarray:
    same = (xt[:, None, :] == xc[None, :, :]).all(axis=2)
    d = np.where(same, 0.0, np.inf)
    return d
