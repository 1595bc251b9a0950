#!/usr/bin/env python3
"""Margin calibration pilot for the acceptance thresholds.

Runs the blob benchmark over many seeds and prints the distribution of the
two gaps the acceptance suite asserts: gcfl-over-fedavg final accuracy and
gcfl-over-random coreset clean fraction.  The frozen margins (0.05
accuracy, 0.10 clean fraction) came from a 20-seed run of this script.
"""

import argparse
import time

import numpy as np

from fedcoreset.federation import prepare_experiment, run_training
from fedcoreset.presets import blob_benchmark_config


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()

    acc: dict[str, list[float]] = {}
    clean: dict[str, list[float]] = {}
    start = time.monotonic()
    for seed in range(args.seeds):
        cfg = blob_benchmark_config(seed=seed)
        prepared = prepare_experiment(cfg)
        for algo in cfg.arms:
            result = run_training(cfg, algo, prepared)
            acc.setdefault(algo.kind, []).append(result.final_accuracy)
            frac = result.rounds[-1].coreset_clean_fraction
            if frac is not None:
                clean.setdefault(algo.kind, []).append(frac)
        print(
            f"seed {seed:2d}: "
            + " ".join(f"{k}={acc[k][-1]:.3f}" for k in acc)
            + f" | clean gcfl={clean['gcfl'][-1]:.3f} random={clean['random'][-1]:.3f}"
        )

    def stats(name, values):
        arr = np.asarray(values)
        print(f"  {name:28s} mean {arr.mean():+.4f}  min {arr.min():+.4f}  max {arr.max():+.4f}")

    print(f"\ngap distributions over {args.seeds} seeds "
          f"({time.monotonic() - start:.0f}s):")
    stats("gcfl - fedavg accuracy", np.array(acc["gcfl"]) - np.array(acc["fedavg"]))
    stats("skyline - gcfl accuracy", np.array(acc["skyline"]) - np.array(acc["gcfl"]))
    stats("gcfl - random clean frac", np.array(clean["gcfl"]) - np.array(clean["random"]))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
