#!/usr/bin/env python3
"""Generate a synthetic study, write a config, and run the full pipeline.

    python scripts/demo_pipeline.py --out demo_out
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from obsmatch import dataset, simbench as sb  # noqa: E402
from obsmatch.cli import main as cli_main  # noqa: E402


def main() -> int:
    par = argparse.ArgumentParser(description=__doc__)
    par.add_argument("--out", default="demo_out")
    par.add_argument("--seed", type=int, default=7)
    args = par.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scen = sb.Scenario(
        n_treated=200, n_control=1200,
        covariates=(sb.CovariateSpec("age", 0.5, 0.0),
                    sb.CovariateSpec("severity", 0.4, 0.0),
                    sb.CovariateSpec("wage", 0.2, 0.0)),
        true_tau=2.0,
        outcome=sb.OutcomeSpec(coefficients=(1.0, 0.8, 0.3), noise_sd=1.0),
        seed=args.seed)
    frame, _ = sb.generate(scen)
    data = out / "demo.csv"
    dataset.save_csv(frame, data)
    (out / "scenario.json").write_text(scen.to_json() + "\n")

    config = {
        "data": str(data),
        "columns": {"treatment": "treatment", "outcome": "outcome",
                    "covariates": ["age", "severity", "wage"]},
        "estimand": "ATT",
        "distance": {"kind": "linear_propensity", "caliper_sd": 0.25},
        "matcher": {"method": "greedy_nn", "k": 1},
        "common_support": True,
        "bootstrap": 200,
        "seed": args.seed,
        "output": str(out / "report"),
    }
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(config, indent=2) + "\n")

    code = cli_main(["--config", str(cfg_path)])
    if code == 0:
        report = json.loads((out / "report" / "report.json").read_text())
        effect = report["effect"]
        print(f"true tau 2.0, estimated {effect['tau_hat']:.3f} "
              f"(se {effect['se']:.3f}, ci {effect['ci95'][0]:.3f}"
              f"..{effect['ci95'][1]:.3f})")
    return code


if __name__ == "__main__":
    sys.exit(main())
