"""Pipeline driver: config in, report bundle out.

Runs the four-step workflow end to end from a JSON config (flags override
config keys) and writes report.json, balance.csv, weights.csv, jitter.svg and
love.svg into the output directory. Exit codes: 0 ok, 2 invalid config,
3 imbalance under --strict, other nonzero per failing stage; failures print a
machine-readable error JSON to stdout.

Usage:
    obsmatch --config cfg.json [--data FILE] [--estimand ATT] [--method greedy_nn]
             [--caliper SD] [--subclasses N] [--bootstrap B] [--seed S]
             [--design-only] [--strict] [--out DIR]
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import (dataset, diagnostics, distance, errors, estimation, matchers,
               propensity, weighting)

SCHEMA_VERSION = 1

METHODS = ("greedy_nn", "optimal", "full", "subclass", "iptw", "odds")
NEEDS_DISTANCE = ("greedy_nn", "optimal", "full")
ESTIMATORS = ("adjusted", "diff_means", "subclass")


@dataclass
class PipelineConfig:
    data: str
    treatment_col: str
    covariate_cols: list[str]
    outcome_col: str | None = None
    estimand: str = "ATT"
    distance: dict = field(default_factory=lambda: {"kind": "linear_propensity"})
    matcher: dict = field(default_factory=lambda: {"method": "greedy_nn", "k": 1})
    common_support: bool = False
    impute_missing: bool = True
    diagnostics: dict = field(default_factory=dict)
    estimator: dict = field(default_factory=dict)
    bootstrap: int = 0
    seed: int = 0
    output: str = "out"
    strict: bool = False
    design_only: bool = False

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        raw = dict(raw)
        cols = raw.pop("columns", {})
        known = {
            "data": raw.get("data"),
            "treatment_col": cols.get("treatment", raw.get("treatment_col")),
            "covariate_cols": list(cols.get("covariates",
                                            raw.get("covariate_cols", []))),
            "outcome_col": cols.get("outcome", raw.get("outcome_col")),
        }
        for key in ("estimand", "distance", "matcher", "common_support",
                    "impute_missing", "diagnostics", "estimator", "bootstrap",
                    "seed", "output", "strict", "design_only"):
            if key in raw:
                known[key] = raw[key]
        unknown = set(raw) - set(known) - {"schema_version", "columns",
                                           "treatment_col", "covariate_cols",
                                           "outcome_col"}
        if unknown:
            raise errors.ConfigError(f"unknown config keys: {sorted(unknown)}")
        if not known.get("data"):
            raise errors.ConfigError("config needs a data path")
        if not known.get("treatment_col"):
            raise errors.ConfigError("config needs columns.treatment")
        if not known["covariate_cols"]:
            raise errors.ConfigError("config needs columns.covariates")
        return cls(**known)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "data": self.data,
            "columns": {
                "treatment": self.treatment_col,
                "outcome": self.outcome_col,
                "covariates": list(self.covariate_cols),
            },
            "estimand": self.estimand,
            "distance": dict(self.distance),
            "matcher": dict(self.matcher),
            "common_support": self.common_support,
            "impute_missing": self.impute_missing,
            "diagnostics": dict(self.diagnostics),
            "estimator": dict(self.estimator),
            "bootstrap": self.bootstrap,
            "seed": self.seed,
            "output": self.output,
            "strict": self.strict,
            "design_only": self.design_only,
        }


def validate_config(cfg: PipelineConfig) -> None:
    if cfg.estimand not in (matchers.ATT, matchers.ATE):
        raise errors.ConfigError(f"estimand must be ATT or ATE, got {cfg.estimand!r}")
    method = cfg.matcher.get("method")
    if method not in METHODS:
        raise errors.ConfigError(
            f"matcher.method must be one of {METHODS}, got {method!r}")
    if method in ("greedy_nn", "optimal") and cfg.estimand != matchers.ATT:
        raise errors.ConfigError(
            f"{method} matching discards unmatched controls and estimates the "
            "ATT; it is incompatible with estimand ATE")
    if method == "iptw" and cfg.estimand != matchers.ATE:
        raise errors.ConfigError("iptw targets the ATE")
    if method == "odds" and cfg.estimand != matchers.ATT:
        raise errors.ConfigError("weighting by the odds targets the ATT")
    kind = cfg.distance.get("kind", "linear_propensity")
    if kind not in distance.KINDS:
        raise errors.ConfigError(f"unknown distance kind {kind!r}")
    src = cfg.distance.get("sigma_source")
    expected = distance.CONTROL_GROUP if cfg.estimand == matchers.ATT else distance.POOLED
    if src is not None and src != expected:
        raise errors.ConfigError(
            f"sigma_source {src!r} contradicts estimand {cfg.estimand} "
            f"(expected {expected!r})")
    est_kind = cfg.estimator.get("kind")
    if est_kind is not None and est_kind not in ESTIMATORS:
        raise errors.ConfigError(f"unknown estimator {est_kind!r}")
    if est_kind == "subclass" and method != "subclass":
        raise errors.ConfigError("subclass estimator needs the subclass matcher")
    if cfg.bootstrap == 1:
        raise errors.ConfigError("bootstrap needs at least 2 replicates (or 0)")


def guidance_check(cfg: PipelineConfig, frame: dataset.StudyFrame,
                   model: propensity.PropensityModel | None = None) -> list[dict]:
    """Practical advisories: matcher choice by estimand and arm sizes, overlap."""
    warnings = []
    method = cfg.matcher.get("method")
    n_t, n_c = frame.n_treated, frame.n_control
    if cfg.estimand == matchers.ATT:
        if n_c > 3 * n_t and method not in ("greedy_nn", "optimal"):
            warnings.append({
                "code": "many_controls_prefer_knn",
                "message": (f"{n_c} controls vs {n_t} treated (more than 3x): "
                            "k:1 nearest neighbor matching without replacement "
                            "is a simple, well-performing choice"),
            })
        if n_c <= 3 * n_t and method in ("greedy_nn", "optimal"):
            warnings.append({
                "code": "few_controls_prefer_pooling",
                "message": ("control pool is not much larger than the treated "
                            "group; subclassification, full matching or "
                            "weighting by the odds use the data better"),
            })
    else:
        if method not in ("iptw", "full"):
            warnings.append({
                "code": "ate_prefer_iptw_or_full",
                "message": "for the ATE, IPTW or full matching are the usual choices",
            })
    if model is not None:
        s = model.scores
        t, c = s[frame.treated_idx], s[frame.control_idx]
        lo, hi = max(t.min(), c.min()), min(t.max(), c.max())
        if lo > hi:
            warnings.append({
                "code": "no_common_support",
                "message": "treated and control score ranges do not overlap",
            })
        else:
            outside = float(((s < lo) | (s > hi)).mean())
            if outside > 0.2:
                warnings.append({
                    "code": "poor_overlap",
                    "message": (f"{outside:.0%} of units fall outside the "
                                "common propensity range; consider trimming "
                                "or a different estimand"),
                })
    return warnings


def _design(cfg: PipelineConfig, frame: dataset.StudyFrame):
    """Steps 1-3 for one frame: fit, trim, match. Returns (model, result)."""
    model = propensity.fit_logistic(frame, list(cfg.covariate_cols))
    include = np.ones(frame.n_units, dtype=bool)
    support_reason: dict[int, str] = {}
    if cfg.common_support:
        flags = matchers.trim_common_support(model, frame, cfg.estimand)
        include = flags.keep
        support_reason = flags.reason

    method = cfg.matcher.get("method")
    if method in NEEDS_DISTANCE:
        spec_kwargs = dict(cfg.distance)
        spec_kwargs.setdefault("kind", "linear_propensity")
        if spec_kwargs.get("key_columns"):
            spec_kwargs["key_columns"] = tuple(spec_kwargs["key_columns"])
        spec_kwargs.setdefault(
            "sigma_source",
            distance.CONTROL_GROUP if cfg.estimand == matchers.ATT
            else distance.POOLED)
        spec = distance.DistanceSpec(**spec_kwargs)
        d = distance.build_matrix(frame, spec, model, include=include)
        if method == "greedy_nn":
            result = matchers.greedy_nn(
                d,
                k=int(cfg.matcher.get("k", 1)),
                with_replacement=bool(cfg.matcher.get("with_replacement", False)),
                caliper=d.caliper_abs,
                order=cfg.matcher.get("order", "descending_propensity"),
                scores=model.scores[d.rows],
                seed=cfg.matcher.get("order_seed", cfg.seed),
            )
        elif method == "optimal":
            result = matchers.optimal_pair(d, k=int(cfg.matcher.get("k", 1)))
        else:
            result = matchers.full_match(
                d,
                min_ratio=cfg.matcher.get("min_ratio"),
                max_ratio=cfg.matcher.get("max_ratio"),
                estimand=cfg.estimand,
            )
    elif method == "subclass":
        sub = matchers.subclassify(
            model, frame, int(cfg.matcher.get("n_subclasses", 5)),
            cfg.estimand, include=include)
        result = matchers.result_from_subclassification(sub, frame)
        result.method["subclassification"] = sub
    else:
        clamp = cfg.matcher.get("trim_cap") is not None
        wv = (weighting.iptw(model, discard=~include, clamp=clamp)
              if method == "iptw"
              else weighting.odds_weights(model, discard=~include, clamp=clamp))
        if cfg.matcher.get("trim_cap") is not None:
            wv = weighting.trim(wv, float(cfg.matcher["trim_cap"]))
        discarded = ~include
        result = matchers.MatchResult(
            estimand=cfg.estimand, unit_weight=wv.weights, sets=[],
            discarded=discarded, discard_reason=dict(support_reason),
            method={"kind": method, "params": {"trim_cap": cfg.matcher.get("trim_cap")},
                    "scheme": wv.scheme, "weight_provenance": wv.provenance})
    for idx, why in support_reason.items():
        result.discarded[idx] = True
        result.discard_reason.setdefault(idx, why)
        result.unit_weight[idx] = 0.0
    return model, result


def _estimate(cfg: PipelineConfig, frame: dataset.StudyFrame,
              result: matchers.MatchResult) -> estimation.EffectEstimate:
    method = cfg.matcher.get("method")
    est_kind = cfg.estimator.get("kind") or (
        "subclass" if method == "subclass" else "adjusted")
    covs = cfg.estimator.get("covariates")
    if covs is None:
        covs = list(cfg.covariate_cols)
    if est_kind == "diff_means":
        return estimation.diff_in_means(frame, result, cfg.estimand)
    if est_kind == "subclass":
        sub = result.method.get("subclassification")
        if sub is None:
            raise errors.ConfigError("subclass estimator needs the subclass matcher")
        return estimation.subclass_effect(
            frame, sub, cfg.estimand, covariates=covs,
            mode=cfg.estimator.get("mode", "per_subclass"))
    return estimation.adjusted_effect(frame, result, covariates=covs,
                                      estimand=cfg.estimand)


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run the full workflow and write the report bundle. Returns the report."""
    validate_config(cfg)
    frame = dataset.load_csv(cfg.data, cfg.treatment_col,
                             None if cfg.design_only else cfg.outcome_col,
                             list(cfg.covariate_cols))
    if cfg.impute_missing:
        before = set(frame.covariates.names)
        frame = dataset.impute_with_indicators(frame)
        added = [n for n in frame.covariates.names if n not in before]
        if added:
            cfg.covariate_cols = list(cfg.covariate_cols) + added
    model, result = _design(cfg, frame)
    warnings = guidance_check(cfg, frame, model)
    balance = diagnostics.compute_balance(frame, model, result,
                                          columns=list(cfg.covariate_cols))

    report = {
        "schema_version": SCHEMA_VERSION,
        "estimand": cfg.estimand,
        "n_units": frame.n_units,
        "n_treated": frame.n_treated,
        "n_control": frame.n_control,
        "seed": cfg.seed,
        "guidance": warnings,
        "propensity": model.to_dict(),
        "match": result.summary(),
        "balance": balance.to_dict(),
        "config": cfg.to_dict(),
    }

    if not cfg.design_only and cfg.outcome_col:
        if cfg.bootstrap >= 2:
            snapshot = PipelineConfig.from_dict(cfg.to_dict())

            def rerun(f: dataset.StudyFrame) -> estimation.EffectEstimate:
                _, res = _design(snapshot, f)
                return _estimate(snapshot, f, res)

            effect = estimation.bootstrap_se(rerun, frame,
                                             n_reps=cfg.bootstrap, seed=cfg.seed)
        else:
            effect = _estimate(cfg, frame, result)
        report["effect"] = effect.to_dict()

    _write_bundle(cfg, frame, model, result, balance, report)

    threshold = float(cfg.diagnostics.get("std_diff_max", diagnostics.STD_DIFF_MAX))
    if cfg.strict and balance.worst_std_diff_post() > threshold:
        raise errors.ImbalanceError(
            f"worst post-matching |std diff| {balance.worst_std_diff_post():.3f} "
            f"exceeds {threshold}")
    return report


def _write_bundle(cfg, frame, model, result, balance, report) -> None:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=False) + "\n", encoding="utf-8")

    with open(out / "balance.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "std_diff_pre", "std_diff_post",
                         "variance_ratio_pre", "variance_ratio_post",
                         "eqq_mean", "eqq_max", "residual_var_ratio", "flagged"])
        for rec in balance.covariates:
            row = rec.to_dict()
            writer.writerow([
                row["name"],
                *[("" if row[k] is None else repr(float(row[k])))
                  for k in ("std_diff_pre", "std_diff_post",
                            "variance_ratio_pre", "variance_ratio_post",
                            "eqq_mean", "eqq_max", "residual_var_ratio")],
                int(row["flagged"]),
            ])

    with open(out / "weights.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "treatment", "weight", "discarded", "reason"])
        for i in range(frame.n_units):
            writer.writerow([
                frame.unit_ids[i],
                int(frame.treatment[i]),
                repr(float(result.unit_weight[i])),
                int(bool(result.discarded[i])),
                result.discard_reason.get(i, ""),
            ])

    if cfg.diagnostics.get("plots", True):
        diagnostics.plot_jitter(model, result, out / "jitter.svg", seed=cfg.seed)
        diagnostics.plot_love(balance, out / "love.svg")


def _parser() -> argparse.ArgumentParser:
    par = argparse.ArgumentParser(
        prog="obsmatch",
        description="Observational-study design pipeline: distance, matching, "
                    "balance diagnostics, effect estimation.")
    par.add_argument("--config", help="JSON config file")
    par.add_argument("--data", help="CSV data path (overrides config)")
    par.add_argument("--estimand", choices=["ATT", "ATE"])
    par.add_argument("--method", choices=list(METHODS))
    par.add_argument("--caliper", type=float,
                     help="caliper in SDs of the linear propensity score")
    par.add_argument("--subclasses", type=int, help="number of subclasses")
    par.add_argument("--bootstrap", type=int, help="bootstrap replicates (0 = off)")
    par.add_argument("--seed", type=int)
    par.add_argument("--design-only", action="store_true", default=None,
                     help="stop after diagnostics; never reads the outcome")
    par.add_argument("--strict", action="store_true", default=None,
                     help="exit 3 when post-matching imbalance exceeds the threshold")
    par.add_argument("--out", help="output directory")
    return par


def _merge_flags(raw: dict, args: argparse.Namespace) -> dict:
    if args.data:
        raw["data"] = args.data
    if args.estimand:
        raw["estimand"] = args.estimand
    if args.method:
        raw.setdefault("matcher", {})["method"] = args.method
    if args.caliper is not None:
        raw.setdefault("distance", {})["caliper_sd"] = args.caliper
    if args.subclasses is not None:
        raw.setdefault("matcher", {})["n_subclasses"] = args.subclasses
        raw.setdefault("matcher", {}).setdefault("method", "subclass")
    if args.bootstrap is not None:
        raw["bootstrap"] = args.bootstrap
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.design_only:
        raw["design_only"] = True
    if args.strict:
        raw["strict"] = True
    if args.out:
        raw["output"] = args.out
    return raw


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        raw = {}
        if args.config:
            try:
                raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise errors.ConfigError(f"cannot read config: {exc}") from exc
        cfg = PipelineConfig.from_dict(_merge_flags(raw, args))
        run_pipeline(cfg)
    except errors.ObsMatchError as exc:
        print(json.dumps({"error": {
            "code": exc.code,
            "type": type(exc).__name__,
            "message": str(exc),
        }}))
        return exc.code
    print(json.dumps({"ok": True, "output": cfg.output}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
