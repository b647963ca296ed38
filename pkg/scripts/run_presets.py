"""Run bundled presets and print per-method complexities and lazy savings.

Usage: python scripts/run_presets.py [preset ...] [--out runs]
"""

import argparse
from collections import defaultdict
from pathlib import Path

import numpy as np

from lazydual.cli import run_experiment
from lazydual.config import list_presets, parse_config


def describe(summary: dict) -> None:
    by_method = defaultdict(list)
    for r in summary["runs"]:
        by_method[r["method"]].append(r)
    print(f"== {summary['experiment']}")
    print(f"{'method':>7} {'iters':>8} {'messages':>10} {'msgs@target':>12} {'grad evals':>12} {'utilization':>11}")
    for method, runs in by_method.items():
        to_target = [r["messages_to_target"] for r in runs if r["messages_to_target"] is not None]
        print(f"{method:>7} {np.mean([r['iterations'] for r in runs]):8.0f} "
              f"{np.mean([r['messages'] for r in runs]):10.0f} "
              f"{np.mean(to_target) if to_target else float('nan'):12.0f} "
              f"{np.mean([r['grad_evals'] for r in runs]):12.0f} "
              f"{np.mean([r['utilization'] for r in runs]):11.4f}")
    for method, rep in summary["comparison"].items():
        if "measured" in rep:
            print(f"  {method}: utilization {rep['measured']:.4f}, predicted factor {rep['predicted']:.4f}")
        for key, val in rep.items():
            if key.startswith("messages_to_target"):
                print(f"  {method}: {key} mean {val['mean']:.3f} per seed {np.round(val['per_seed'], 3).tolist()}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("presets", nargs="*", default=list_presets())
    ap.add_argument("--out", default="runs")
    args = ap.parse_args()
    for name in args.presets:
        cfg = parse_config(name, {"output.dir": str(Path(args.out) / name)})
        describe(run_experiment(cfg))


if __name__ == "__main__":
    main()
