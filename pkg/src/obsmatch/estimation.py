"""Outcome analysis after the design stage.

Weighted difference in means, covariate-adjusted weighted regression,
subclass estimation with aggregation, and bootstrap variance. This is the
only module that reads the outcome; everything upstream is outcome-blind.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import errors
from .dataset import StudyFrame
from .diagnostics import effective_n, weighted_mean, weighted_var
from .matchers import ATE, ATT, Subclassification
from .weighting import as_weights

Z95 = 1.96


@dataclass
class EffectEstimate:
    tau_hat: float
    se: float
    ci95: tuple[float, float]
    estimand: str
    method: dict = field(default_factory=dict)
    n_effective: float = 0.0

    def to_dict(self) -> dict:
        return {
            "tau_hat": self.tau_hat,
            "se": self.se,
            "ci95": list(self.ci95),
            "estimand": self.estimand,
            "method": self.method,
            "n_effective": self.n_effective,
        }


def _ci(tau: float, se: float) -> tuple[float, float]:
    return (tau - Z95 * se, tau + Z95 * se)


def _arm_weights(frame: StudyFrame, weights) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if frame.outcome is None:
        raise errors.NoOutcome("frame has no outcome column")
    w = as_weights(weights)
    wt = w[frame.treated_idx]
    wc = w[frame.control_idx]
    if wt.sum() <= 0 or wc.sum() <= 0:
        raise errors.EmptyArm("an arm has zero total weight")
    return w, wt, wc


def diff_in_means(frame: StudyFrame, weights,
                  estimand: str = ATT) -> EffectEstimate:
    """Weighted treated mean minus weighted control mean.

    The standard error is the weighted two-sample formula with effective
    sample sizes; it ignores the design stage (bootstrap for honest intervals).
    """
    w, wt, wc = _arm_weights(frame, weights)
    yt = frame.outcome[frame.treated_idx]
    yc = frame.outcome[frame.control_idx]
    tau = weighted_mean(yt, wt) - weighted_mean(yc, wc)
    n_eff_t, n_eff_c = effective_n(wt), effective_n(wc)
    var = 0.0
    if n_eff_t > 1:
        var += weighted_var(yt, wt) / n_eff_t
    if n_eff_c > 1:
        var += weighted_var(yc, wc) / n_eff_c
    se = float(np.sqrt(var))
    return EffectEstimate(
        tau_hat=float(tau), se=se, ci95=_ci(float(tau), se),
        estimand=estimand,
        method={"estimator": "diff_in_means", "se_kind": "design_naive"},
        n_effective=n_eff_t + n_eff_c)


def adjusted_effect(frame: StudyFrame, weights, covariates: list[str] = (),
                    estimand: str = ATT) -> EffectEstimate:
    """Weighted least squares of Y on (1, T, covariates); tau is the T coefficient."""
    w, wt, wc = _arm_weights(frame, weights)
    if not covariates:
        base = diff_in_means(frame, weights, estimand)
        base.method = {"estimator": "adjusted", "covariates": [],
                       "se_kind": "design_naive"}
        return base
    active = w > 0
    x = frame.matrix(list(covariates))
    z = np.column_stack([np.ones(frame.n_units), frame.treatment.astype(float), x])
    za, ya, wa = z[active], frame.outcome[active], w[active]
    sw = np.sqrt(wa)
    zw = za * sw[:, None]
    yw = ya * sw
    p = z.shape[1]
    beta, _, rank, _ = np.linalg.lstsq(zw, yw, rcond=None)
    if rank < p:
        raise errors.SingularDesign(
            "design matrix is rank-deficient under the analysis weights")
    resid = ya - za @ beta
    n_eff = effective_n(wa)
    dof = n_eff - p
    if dof <= 0:
        raise errors.SingularDesign("not enough effective observations")
    scale = float((wa * resid ** 2).sum()) / dof
    xtwx_inv = np.linalg.inv(zw.T @ zw)
    se = float(np.sqrt(scale * xtwx_inv[1, 1]))
    tau = float(beta[1])
    return EffectEstimate(
        tau_hat=tau, se=se, ci95=_ci(tau, se), estimand=estimand,
        method={"estimator": "adjusted", "covariates": list(covariates),
                "se_kind": "design_naive"},
        n_effective=n_eff)


def subclass_effect(frame: StudyFrame, sub: Subclassification,
                    estimand: str | None = None, covariates: list[str] = (),
                    mode: str = "per_subclass") -> EffectEstimate:
    """Per-subclass effects aggregated with N_tj/N_t (ATT) or N_j/N (ATE)
    weights; ``mode="joint"`` fits one model with subclass and
    subclass-by-treatment indicators and shared covariate slopes."""
    estimand = estimand or sub.estimand
    if frame.outcome is None:
        raise errors.NoOutcome("frame has no outcome column")
    if mode not in ("per_subclass", "joint"):
        raise errors.InvalidArgument(f"unknown mode {mode!r}")
    labels = sub.subclass_of
    n_sub = sub.n_subclasses
    shares = np.zeros(n_sub)
    for s in range(n_sub):
        in_s = labels == s
        n_t = int((in_s & (frame.treatment == 1)).sum())
        n_c = int((in_s & (frame.treatment == 0)).sum())
        if estimand == ATT and n_t == 0:
            continue  # zero aggregation weight; nothing to estimate here
        if n_t == 0 or n_c == 0:
            raise errors.EmptySubclassArm(s, "treated" if n_t == 0 else "control")
        if estimand == ATT:
            shares[s] = n_t
        else:
            shares[s] = n_t + n_c
    shares = shares / shares.sum()

    live = [s for s in range(n_sub) if shares[s] > 0]
    x = frame.matrix(list(covariates)) if covariates else None
    if mode == "per_subclass":
        taus = np.zeros(n_sub)
        variances = np.zeros(n_sub)
        for s in live:
            idx = np.flatnonzero(labels == s)
            t = frame.treatment[idx].astype(float)
            cols = [np.ones(idx.size), t]
            if x is not None:
                cols.append(x[idx])
            z = np.column_stack(cols)
            y = frame.outcome[idx]
            beta, _, rank, _ = np.linalg.lstsq(z, y, rcond=None)
            if rank < z.shape[1]:
                raise errors.SingularDesign(f"subclass {s} design is rank-deficient")
            resid = y - z @ beta
            dof = idx.size - z.shape[1]
            sigma2 = float(resid @ resid / dof) if dof > 0 else 0.0
            zz_inv = np.linalg.inv(z.T @ z)
            taus[s] = beta[1]
            variances[s] = sigma2 * zz_inv[1, 1]
        tau = float(shares @ taus)
        se = float(np.sqrt((shares ** 2) @ variances))
        method = {"estimator": "subclass", "mode": "per_subclass",
                  "aggregation": estimand, "shares": [float(v) for v in shares],
                  "per_subclass_tau": [float(v) for v in taus],
                  "covariates": list(covariates), "se_kind": "design_naive"}
    else:
        pos = {s: k for k, s in enumerate(live)}
        idx = np.flatnonzero(np.isin(labels, live))
        t = frame.treatment[idx].astype(float)
        dummies = np.zeros((idx.size, len(live)))
        dummies[np.arange(idx.size), [pos[s] for s in labels[idx]]] = 1.0
        cols = [dummies, dummies * t[:, None]]
        if x is not None:
            cols.append(x[idx])
        z = np.column_stack(cols)
        y = frame.outcome[idx]
        beta, _, rank, _ = np.linalg.lstsq(z, y, rcond=None)
        if rank < z.shape[1]:
            raise errors.SingularDesign("joint subclass design is rank-deficient")
        taus = np.zeros(n_sub)
        taus[live] = beta[len(live):2 * len(live)]
        tau = float(shares @ taus)
        resid = y - z @ beta
        dof = idx.size - z.shape[1]
        sigma2 = float(resid @ resid / dof) if dof > 0 else 0.0
        zz_inv = np.linalg.inv(z.T @ z)
        contrast = np.zeros(z.shape[1])
        contrast[len(live):2 * len(live)] = shares[live]
        se = float(np.sqrt(sigma2 * contrast @ zz_inv @ contrast))
        method = {"estimator": "subclass", "mode": "joint",
                  "aggregation": estimand, "shares": [float(v) for v in shares],
                  "per_subclass_tau": [float(v) for v in taus],
                  "covariates": list(covariates), "se_kind": "design_naive"}
    n_retained = int((labels >= 0).sum())
    return EffectEstimate(tau_hat=tau, se=se, ci95=_ci(tau, se),
                          estimand=estimand, method=method,
                          n_effective=float(n_retained))


def bootstrap_se(pipeline, frame: StudyFrame, n_reps: int = 1000,
                 seed: int = 0) -> EffectEstimate:
    """Unit-resampling bootstrap around a full design+estimate pipeline.

    ``pipeline(frame)`` must rerun everything (propensity fit, matching,
    estimation) and return an EffectEstimate or a scalar tau. Replicates that
    raise pipeline errors are recorded and excluded; more than 20% failures
    aborts. Each replicate draws from its own seed stream, so results are
    independent of execution order.
    """
    if n_reps < 2:
        raise errors.InvalidArgument("bootstrap needs at least 2 replicates")
    point = pipeline(frame)
    if isinstance(point, EffectEstimate):
        tau = point.tau_hat
        estimand = point.estimand
        base_method = dict(point.method)
    else:
        tau = float(point)
        estimand = ATT
        base_method = {}

    n = frame.n_units
    streams = np.random.SeedSequence(seed).spawn(n_reps)
    taus = []
    failures = 0
    for b in range(n_reps):
        rng = np.random.default_rng(streams[b])
        idx = rng.integers(0, n, size=n)
        try:
            est = pipeline(frame.take(idx))
        except errors.ObsMatchError:
            failures += 1
            continue
        taus.append(est.tau_hat if isinstance(est, EffectEstimate) else float(est))
    if failures > 0.2 * n_reps or len(taus) < 2:
        raise errors.TooManyFailures(
            f"{failures} of {n_reps} bootstrap replicates failed")
    se = float(np.std(taus, ddof=1))
    method = dict(base_method)
    method.update({"se_kind": "bootstrap", "bootstrap_reps": n_reps,
                   "bootstrap_failures": failures, "bootstrap_seed": seed})
    n_eff = point.n_effective if isinstance(point, EffectEstimate) else float(n)
    return EffectEstimate(tau_hat=tau, se=se, ci95=_ci(tau, se),
                          estimand=estimand, method=method, n_effective=n_eff)
