#!/usr/bin/env python3
"""Run the loss-component ablation grid over several seeds and summarize.

Trains supervised-only, +CCR, +CCR+WVCR, and the full method on the same
datasets for each seed, then prints per-split medians and writes plots and a
summary table under the output directory.

Usage:
    python scripts/run_ablation.py --out runs/ablation [--seeds 0 1 2] [--config path]
"""

import argparse
import dataclasses
import json
import statistics
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from textssl import datagen, trainer  # noqa: E402

ABLATION_ORDER = ("sup", "ccr", "ccr_wvcr", "full")
SWITCHES = {
    "sup": (False, False, False),
    "ccr": (True, False, False),
    "ccr_wvcr": (True, True, False),
    "full": (True, True, True),
}


def run_grid(base_config, seeds, out_dir, reuse=True):
    """Returns {ablation: {seed: MetricsRow}} of final rows, training as needed."""
    out_dir = Path(out_dir)
    results = {name: {} for name in ABLATION_ORDER}
    for seed in seeds:
        data_config = dataclasses.replace(base_config, data_seed=seed).data_config()
        datasets = datagen.make_datasets(data_config)
        for name in ABLATION_ORDER:
            use_ccr, use_wvcr, use_wscr = SWITCHES[name]
            config = dataclasses.replace(
                base_config, seed=seed, data_seed=seed,
                use_ccr=use_ccr, use_wvcr=use_wvcr, use_wscr=use_wscr)
            run_dir = out_dir / f"{name}_seed{seed}"
            if reuse and (run_dir / "metrics.csv").exists():
                rows, errors = trainer.read_metrics(run_dir / "metrics.csv")
                if rows and not errors:
                    results[name][seed] = rows[-1]
                    print(f"{run_dir}: reusing existing metrics", flush=True)
                    continue
            t0 = time.time()
            result = trainer.train(config, datasets, run_dir)
            row = result.rows[-1]
            results[name][seed] = row
            print(f"{run_dir}: {time.time() - t0:.0f}s  clean={row.acc_clean:.3f} "
                  f"distorted={row.acc_distorted:.3f} occluded={row.acc_occluded:.3f}", flush=True)
    return results


def summarize(results, seeds):
    """Median accuracy per split and ablation; returns {ablation: dict}."""
    summary = {}
    for name in ABLATION_ORDER:
        rows = [results[name][s] for s in seeds if s in results[name]]
        if not rows:
            continue
        summary[name] = {
            "clean": statistics.median(r.acc_clean for r in rows),
            "distorted": statistics.median(r.acc_distorted for r in rows),
            "occluded": statistics.median(r.acc_occluded for r in rows),
        }
        summary[name]["mean_real"] = (summary[name]["clean"] + summary[name]["distorted"]
                                      + summary[name]["occluded"]) / 3.0
    return summary


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--config", default=None)
    parser.add_argument("--fresh", action="store_true", help="retrain even if metrics exist")
    args = parser.parse_args()

    base = trainer.TrainConfig.load(args.config) if args.config else trainer.TrainConfig()
    results = run_grid(base, args.seeds, args.out, reuse=not args.fresh)
    summary = summarize(results, args.seeds)

    print(f"\n{'ablation':12s} {'clean':>8s} {'distorted':>10s} {'occluded':>9s} {'mean':>8s}")
    for name in ABLATION_ORDER:
        if name in summary:
            s = summary[name]
            print(f"{name:12s} {s['clean']:8.3f} {s['distorted']:10.3f} {s['occluded']:9.3f} {s['mean_real']:8.3f}")

    out = Path(args.out)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    run_dirs = [out / f"{name}_seed{seed}" for name in ABLATION_ORDER for seed in args.seeds
                if (out / f"{name}_seed{seed}" / "metrics.csv").exists()]
    trainer.report(run_dirs, out / "report")
    print(f"\nwrote {out / 'summary.json'} and {out / 'report' / 'summary.txt'}")


if __name__ == "__main__":
    main()
