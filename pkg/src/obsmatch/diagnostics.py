"""Numerical and graphical balance assessment.

Standardized differences use the full treated-group SD computed once before
matching and reused afterwards. The three propensity-based summary measures
(mean difference, variance ratio, residual variance ratios orthogonal to the
score) are computed on the linear score. No hypothesis tests appear anywhere
in the report; balance is an in-sample property.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import errors
from .dataset import CONTINUOUS, StudyFrame
from .matchers import MatchResult
from .propensity import PropensityModel
from .weighting import as_weights

STD_DIFF_MAX = 0.25
VAR_RATIO_RANGE = (0.5, 2.0)


def weighted_mean(x: np.ndarray, w: np.ndarray) -> float:
    sw = w.sum()
    if sw <= 0:
        raise errors.EmptyGroup("zero total weight")
    return float((w * x).sum() / sw)


def effective_n(w: np.ndarray) -> float:
    sw = w.sum()
    if sw <= 0:
        return 0.0
    return float(sw * sw / (w * w).sum())


def weighted_var(x: np.ndarray, w: np.ndarray) -> float:
    """Weighted variance with an effective-sample-size dof correction
    (reduces to the ddof=1 sample variance under unit weights)."""
    sw = w.sum()
    if sw <= 0:
        raise errors.EmptyGroup("zero total weight")
    m = (w * x).sum() / sw
    v = float((w * (x - m) ** 2).sum() / sw)
    n_eff = effective_n(w)
    if n_eff > 1.0:
        v *= n_eff / (n_eff - 1.0)
    return v


def treated_sd(frame: StudyFrame, covariate: str) -> float:
    """Pre-matching SD in the full treated group, the fixed denominator."""
    x = frame.column(covariate)[frame.treated_idx]
    return float(x.std(ddof=1))


def std_diff(frame: StudyFrame, covariate: str, weights,
             sigma_t_pre: float) -> float:
    """(weighted treated mean - weighted control mean) / sigma_t_pre."""
    if not sigma_t_pre > 0:
        raise errors.ZeroVariance(
            f"treated-group SD for {covariate!r} must be positive")
    w = as_weights(weights)
    x = frame.column(covariate)
    t_idx, c_idx = frame.treated_idx, frame.control_idx
    return (weighted_mean(x[t_idx], w[t_idx])
            - weighted_mean(x[c_idx], w[c_idx])) / sigma_t_pre


def _wls(y: np.ndarray, z: np.ndarray, w: np.ndarray) -> np.ndarray:
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(z * sw[:, None], y * sw, rcond=None)
    return beta


def rubin_metrics(model: PropensityModel, frame: StudyFrame, weights):
    """The three propensity-based balance measures.

    Returns (B, R, residual_ratios): B is the standardized difference of
    linear-score means (denominator fixed at the full treated group's SD),
    R the treated/control variance ratio of the linear score, and per
    covariate the treated/control variance ratio of residuals from a weighted
    regression of the covariate on the linear score.
    """
    w = as_weights(weights)
    lin = model.linear_scores
    t_idx, c_idx = frame.treated_idx, frame.control_idx
    sd_t = float(lin[t_idx].std(ddof=1))
    if sd_t <= 0:
        raise errors.ZeroVariance("linear scores are constant in the treated group")
    b = (weighted_mean(lin[t_idx], w[t_idx])
         - weighted_mean(lin[c_idx], w[c_idx])) / sd_t
    var_c = weighted_var(lin[c_idx], w[c_idx])
    if var_c <= 0:
        raise errors.ZeroVariance("linear scores have zero control-group variance")
    r = weighted_var(lin[t_idx], w[t_idx]) / var_c

    residual_ratios: dict[str, float] = {}
    active = w > 0
    z = np.column_stack([np.ones(frame.n_units), lin])
    for name in model.column_names:
        x = frame.column(name)
        beta = _wls(x[active], z[active], w[active])
        resid = x - z @ beta
        denom = weighted_var(resid[c_idx], w[c_idx])
        if denom <= 0:
            raise errors.ZeroVariance(
                f"residuals of {name!r} have zero control-group variance")
        residual_ratios[name] = weighted_var(resid[t_idx], w[t_idx]) / denom
    return float(b), float(r), residual_ratios


def eqq_stats(frame: StudyFrame, covariate: str,
              result: MatchResult) -> tuple[float, float]:
    """Mean and max absolute empirical QQ difference between matched arms.

    Evaluated at the smaller retained group's order statistics against
    nearest-rank quantiles of the larger group.
    """
    if frame.covariates.kind(covariate) != CONTINUOUS:
        raise errors.InvalidArgument(f"{covariate!r} is not continuous")
    x = frame.column(covariate)
    retained = result.unit_weight > 0
    xt = np.sort(x[(frame.treatment == 1) & retained])
    xc = np.sort(x[(frame.treatment == 0) & retained])
    if xt.size == 0 or xc.size == 0:
        raise errors.EmptyGroup("a matched arm is empty")
    small, large = (xt, xc) if xt.size <= xc.size else (xc, xt)
    m, n = small.size, large.size
    ranks = np.ceil(np.arange(1, m + 1) * n / m).astype(int) - 1
    diffs = np.abs(small - large[ranks])
    return float(diffs.mean()), float(diffs.max())


@dataclass
class CovariateBalance:
    name: str
    std_diff_pre: float
    std_diff_post: float
    variance_ratio_pre: float | None
    variance_ratio_post: float | None
    eqq_mean: float | None
    eqq_max: float | None
    residual_var_ratio: float | None
    flagged: bool

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "std_diff_pre": self.std_diff_pre,
            "std_diff_post": self.std_diff_post,
            "variance_ratio_pre": self.variance_ratio_pre,
            "variance_ratio_post": self.variance_ratio_post,
            "eqq_mean": self.eqq_mean,
            "eqq_max": self.eqq_max,
            "residual_var_ratio": self.residual_var_ratio,
            "flagged": self.flagged,
        }


@dataclass
class BalanceReport:
    covariates: list[CovariateBalance]
    propensity_summary: dict
    thresholds: dict = field(default_factory=lambda: {
        "std_diff_max": STD_DIFF_MAX,
        "var_ratio_range": list(VAR_RATIO_RANGE),
    })
    skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "covariates": [rec.to_dict() for rec in self.covariates],
            "propensity_summary": self.propensity_summary,
            "thresholds": self.thresholds,
            "skipped": self.skipped,
        }

    def worst_std_diff_post(self) -> float:
        if not self.covariates:
            return 0.0
        return max(abs(rec.std_diff_post) for rec in self.covariates)


def _ratio_or_none(num: float, den: float) -> float | None:
    if den <= 0 or num < 0:
        return None
    return num / den


def _outside(value: float | None, lo: float, hi: float) -> bool:
    return value is not None and not (lo <= value <= hi)


def compute_balance(frame: StudyFrame, model: PropensityModel,
                    result: MatchResult,
                    columns: list[str] | None = None) -> BalanceReport:
    """Pre/post balance for the named columns (default: the model's columns).

    Pre metrics are weight-free over the full sample; post metrics use the
    result's analysis weights exactly as the outcome analysis will.
    """
    if columns is None:
        columns = list(model.column_names)
    w_pre = np.ones(frame.n_units)
    w_post = result.unit_weight
    t_idx, c_idx = frame.treated_idx, frame.control_idx

    b, r, residual_ratios = rubin_metrics(model, frame, w_post)
    records = []
    skipped = []
    for name in columns:
        sigma = treated_sd(frame, name)
        if not sigma > 0:
            skipped.append(name)
            continue
        x = frame.column(name)
        pre = std_diff(frame, name, w_pre, sigma)
        post = std_diff(frame, name, w_post, sigma)
        vr_pre = _ratio_or_none(weighted_var(x[t_idx], w_pre[t_idx]),
                                weighted_var(x[c_idx], w_pre[c_idx]))
        vr_post = _ratio_or_none(weighted_var(x[t_idx], w_post[t_idx]),
                                 weighted_var(x[c_idx], w_post[c_idx]))
        if frame.covariates.kind(name) == CONTINUOUS:
            eqq_mean, eqq_max = eqq_stats(frame, name, result)
        else:
            eqq_mean = eqq_max = None
        resid_ratio = residual_ratios.get(name)
        lo, hi = VAR_RATIO_RANGE
        flagged = (abs(post) > STD_DIFF_MAX
                   or _outside(vr_post, lo, hi)
                   or _outside(resid_ratio, lo, hi))
        records.append(CovariateBalance(
            name=name, std_diff_pre=float(pre), std_diff_post=float(post),
            variance_ratio_pre=vr_pre, variance_ratio_post=vr_post,
            eqq_mean=eqq_mean, eqq_max=eqq_max,
            residual_var_ratio=resid_ratio, flagged=bool(flagged)))

    lo, hi = VAR_RATIO_RANGE
    summary = {"std_diff_B": b, "variance_ratio_R": r,
               "flagged": bool(abs(b) >= STD_DIFF_MAX or not lo <= r <= hi)}
    return BalanceReport(covariates=records, propensity_summary=summary,
                         skipped=skipped)


# -- SVG rendering ------------------------------------------------------------

SVG_HEADER = ('<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
              'width="{w}" height="{h}" viewBox="0 0 {w} {h}">')
DARK = "#1a1a1a"
GREY = "#b8b8b8"
ACCENT = "#c0392b"
FONT = 'font-family="Helvetica,Arial,sans-serif"'


def _esc(text: str) -> str:
    return (text.replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;").replace('"', "&quot;"))


def _write_svg(path, lines: list[str]) -> None:
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise errors.IoError(f"could not write {path}: {exc}") from exc


def plot_jitter(model: PropensityModel, result: MatchResult, path,
                seed: int = 0) -> None:
    """Propensity-score jitter plot: one dot per unit, matched dark,
    discarded grey; dot area tracks the analysis weight for weighting modes."""
    n = model.n_units
    w, h = 720, 340
    ml, mr = 70, 30
    axis_y = h - 50
    bands = {1: 110, 0: 220}
    jitter_half = 34

    weights = result.unit_weight
    positive = weights[weights > 0]
    scale_by_weight = positive.size > 0 and not np.all(
        np.isin(np.round(weights, 12), (0.0, 1.0)))
    w_ref = positive.mean() if positive.size else 1.0

    rng = np.random.default_rng(seed)
    lines = [SVG_HEADER.format(w=w, h=h),
             '<rect width="100%" height="100%" fill="#ffffff"/>',
             f'<text x="{w / 2:.2f}" y="24" text-anchor="middle" '
             f'font-size="15" {FONT}>Propensity scores by arm</text>']
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = ml + tick * (w - ml - mr)
        lines.append(f'<line x1="{x:.2f}" y1="{axis_y}" x2="{x:.2f}" '
                     f'y2="{axis_y + 6}" stroke="{DARK}" stroke-width="1"/>')
        lines.append(f'<text x="{x:.2f}" y="{axis_y + 22}" text-anchor="middle" '
                     f'font-size="11" {FONT}>{tick:g}</text>')
    lines.append(f'<line x1="{ml}" y1="{axis_y}" x2="{w - mr}" y2="{axis_y}" '
                 f'stroke="{DARK}" stroke-width="1"/>')
    for arm, label in ((1, "Treated"), (0, "Control")):
        lines.append(f'<text x="12" y="{bands[arm] + 4}" font-size="12" '
                     f'{FONT}>{label}</text>')

    for i in range(n):
        e = float(model.scores[i])
        x = ml + e * (w - ml - mr)
        y = bands[int(model.treatment[i])] + rng.uniform(-1, 1) * jitter_half
        if scale_by_weight and weights[i] > 0:
            radius = min(9.0, max(1.2, 3.0 * math.sqrt(weights[i] / w_ref)))
        else:
            radius = 3.0
        color = GREY if result.discarded[i] or weights[i] == 0 else DARK
        lines.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius:.2f}" '
                     f'fill="{color}"/>')
    lines.append("</svg>")
    _write_svg(path, lines)


def plot_love(report: BalanceReport, path) -> None:
    """Standardized differences per covariate before and after matching,
    with the 0.25 reference line."""
    rows = report.covariates
    w = 640
    row_h = 26
    top, bottom = 60, 60
    h = top + bottom + max(1, len(rows)) * row_h
    ml, mr = 170, 40
    threshold = float(report.thresholds.get("std_diff_max", STD_DIFF_MAX))
    data_max = max([abs(r.std_diff_pre) for r in rows]
                   + [abs(r.std_diff_post) for r in rows] + [threshold])
    x_max = 1.1 * data_max

    def xpos(v: float) -> float:
        return ml + min(abs(v), x_max) / x_max * (w - ml - mr)

    lines = [SVG_HEADER.format(w=w, h=h),
             '<rect width="100%" height="100%" fill="#ffffff"/>',
             f'<text x="{w / 2:.2f}" y="24" text-anchor="middle" font-size="15" '
             f'{FONT}>Absolute standardized difference of means</text>']
    axis_y = h - bottom + 10
    lines.append(f'<line x1="{ml}" y1="{axis_y}" x2="{w - mr}" y2="{axis_y}" '
                 f'stroke="{DARK}" stroke-width="1"/>')
    for frac in (0.0, 0.5, 1.0):
        v = frac * x_max
        lines.append(f'<text x="{xpos(v):.2f}" y="{axis_y + 18}" '
                     f'text-anchor="middle" font-size="11" {FONT}>{v:.2f}</text>')
    ref_x = xpos(threshold)
    lines.append(f'<line x1="{ref_x:.2f}" y1="{top - 14}" x2="{ref_x:.2f}" '
                 f'y2="{axis_y}" stroke="{ACCENT}" stroke-width="1" '
                 'stroke-dasharray="4 3"/>')
    lines.append(f'<text x="{ref_x:.2f}" y="{top - 20}" text-anchor="middle" '
                 f'font-size="10" fill="{ACCENT}" {FONT}>{threshold:g}</text>')

    for k, rec in enumerate(rows):
        y = top + k * row_h
        lines.append(f'<text x="{ml - 8}" y="{y + 4}" text-anchor="end" '
                     f'font-size="11" {FONT}>{_esc(rec.name)}</text>')
        lines.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{w - mr}" y2="{y:.2f}" '
                     'stroke="#eeeeee" stroke-width="1"/>')
        lines.append(f'<circle class="pre" cx="{xpos(rec.std_diff_pre):.2f}" '
                     f'cy="{y:.2f}" r="4.5" fill="#ffffff" stroke="{DARK}" '
                     'stroke-width="1.4"/>')
        lines.append(f'<circle class="post" cx="{xpos(rec.std_diff_post):.2f}" '
                     f'cy="{y:.2f}" r="4.5" fill="{DARK}"/>')

    legend_y = h - 26
    lines.append(f'<circle class="legend" cx="{ml}" cy="{legend_y}" r="4.5" '
                 f'fill="#ffffff" stroke="{DARK}" stroke-width="1.4"/>')
    lines.append(f'<text x="{ml + 10}" y="{legend_y + 4}" font-size="11" '
                 f'{FONT}>before</text>')
    lines.append(f'<circle class="legend" cx="{ml + 70}" cy="{legend_y}" '
                 f'r="4.5" fill="{DARK}"/>')
    lines.append(f'<text x="{ml + 80}" y="{legend_y + 4}" font-size="11" '
                 f'{FONT}>after</text>')
    lines.append("</svg>")
    _write_svg(path, lines)
