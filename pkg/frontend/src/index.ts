/**
 * Node bindings for the obsmatch pipeline.
 *
 * The binding wraps the CLI rather than individual numeric kernels: each call
 * materializes the config, runs the pipeline in a Python subprocess, and
 * returns the parsed report.json content, so every value matches a direct CLI
 * run field for field. Nothing is written outside a scratch directory unless
 * the config names an output directory.
 */

import { spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export interface ColumnRoles {
  treatment: string;
  outcome?: string | null;
  covariates: string[];
}

export interface PipelineConfig {
  data: string;
  columns: ColumnRoles;
  estimand?: "ATT" | "ATE";
  distance?: Record<string, unknown>;
  matcher?: Record<string, unknown>;
  common_support?: boolean;
  impute_missing?: boolean;
  diagnostics?: Record<string, unknown>;
  estimator?: Record<string, unknown>;
  bootstrap?: number;
  seed?: number;
  output?: string;
  strict?: boolean;
  design_only?: boolean;
  [key: string]: unknown;
}

export interface EffectSection {
  tau_hat: number;
  se: number;
  ci95: [number, number];
  estimand: string;
  method: Record<string, unknown>;
  n_effective: number;
}

export interface BalanceSection {
  covariates: Array<Record<string, unknown>>;
  propensity_summary: Record<string, unknown>;
  thresholds: Record<string, unknown>;
  skipped: string[];
}

export interface Report {
  schema_version: number;
  estimand: string;
  n_units: number;
  n_treated: number;
  n_control: number;
  seed: number;
  guidance: Array<{ code: string; message: string }>;
  propensity: Record<string, unknown>;
  match: Record<string, unknown>;
  balance: BalanceSection;
  effect?: EffectSection;
  config: Record<string, unknown>;
}

/** Raised when the pipeline exits nonzero; carries the core error code. */
export class PipelineError extends Error {
  readonly code: number;
  readonly errorType: string;

  constructor(code: number, errorType: string, message: string) {
    super(message);
    this.name = "PipelineError";
    this.code = code;
    this.errorType = errorType;
  }
}

export interface RunOptions {
  /** Python interpreter with obsmatch installed; defaults to "python3". */
  python?: string;
}

function invoke(config: PipelineConfig, opts: RunOptions = {}): Report {
  const scratch = mkdtempSync(join(tmpdir(), "obsmatch-"));
  const keepOutput = typeof config.output === "string";
  const outDir = keepOutput ? (config.output as string) : join(scratch, "out");
  try {
    const cfgPath = join(scratch, "config.json");
    writeFileSync(cfgPath, JSON.stringify({ ...config, output: outDir }));
    const proc = spawnSync(opts.python ?? "python3",
      ["-m", "obsmatch.cli", "--config", cfgPath],
      { encoding: "utf-8" });
    if (proc.error) {
      throw new PipelineError(1, "SpawnFailure", String(proc.error));
    }
    if (proc.status !== 0) {
      throw toPipelineError(proc.status ?? 1, proc.stdout, proc.stderr);
    }
    const raw = readFileSync(join(outDir, "report.json"), "utf-8");
    return JSON.parse(raw) as Report;
  } finally {
    rmSync(scratch, { recursive: true, force: true });
  }
}

function toPipelineError(status: number, stdout: string,
                         stderr: string): PipelineError {
  const lines = stdout.trim().split("\n");
  for (let i = lines.length - 1; i >= 0; i--) {
    try {
      const parsed = JSON.parse(lines[i]);
      if (parsed && typeof parsed === "object" && "error" in parsed) {
        const err = parsed.error as { code: number; type: string; message: string };
        return new PipelineError(err.code, err.type, err.message);
      }
    } catch {
      // not a JSON line; keep scanning upwards
    }
  }
  return new PipelineError(status, "Unknown", stderr || stdout || "pipeline failed");
}

/** Run the full pipeline; resolves to the report.json content. */
export function run(config: PipelineConfig, opts: RunOptions = {}): Report {
  return invoke(config, opts);
}

/** Design stages only (never reads the outcome column). */
export function designOnly(config: PipelineConfig,
                           opts: RunOptions = {}): Report {
  return invoke({ ...config, design_only: true }, opts);
}

/** Fitted propensity model: coefficients, convergence, column provenance. */
export function fitPropensity(config: PipelineConfig,
                              opts: RunOptions = {}): Record<string, unknown> {
  return designOnly(config, opts).propensity;
}

/** Matched-set / weighting summary of the design stage. */
export function matchSummary(config: PipelineConfig,
                             opts: RunOptions = {}): Record<string, unknown> {
  return designOnly(config, opts).match;
}

/** Pre/post covariate balance report. */
export function diagnoseBalance(config: PipelineConfig,
                                opts: RunOptions = {}): BalanceSection {
  return designOnly(config, opts).balance;
}

/** Effect estimate from the full pipeline. */
export function estimateEffect(config: PipelineConfig,
                               opts: RunOptions = {}): EffectSection {
  const report = invoke(config, opts);
  if (!report.effect) {
    throw new PipelineError(7, "NoOutcome",
      "pipeline produced no effect section (design-only or missing outcome)");
  }
  return report.effect;
}
