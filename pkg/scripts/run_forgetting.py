#!/usr/bin/env python3
"""Forgetting comparison: uncertainty-driven vs random task sampling.

Trains the same two-task setup (500-example noisy task vs 20000-example
hard task, identical model and seed) once per sampling policy and prints
the small task's dev-score trajectory, peak, and final value for each.
Expected pattern: the random policy overfits the small task past its peak
while uncertainty sampling holds it there.

    python3 scripts/run_forgetting.py --out-dir runs/forgetting [--steps 2000]
"""

import argparse
import json
from pathlib import Path

from camtl.presets import forgetting_config
from camtl.train import train


def small_task_trajectory(metrics_path):
    records = [json.loads(line) for line in Path(metrics_path).read_text().splitlines()]
    return [(r["step"], r["tasks"]["small"]["score"]) for r in records if r["type"] == "eval"]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="runs/forgetting")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=12)
    args = parser.parse_args()

    for sampler in ("mt_uncertainty", "random"):
        out = Path(args.out_dir) / sampler
        result = train(forgetting_config(sampler, str(out), seed=args.seed, steps=args.steps))
        traj = small_task_trajectory(result.metrics_path)
        peak = max(score for _, score in traj)
        final = traj[-1][1]
        print(f"\n== {sampler} ==")
        print("small-task dev score by step:")
        for step, score in traj:
            bar = "#" * int(score / 2)
            print(f"  {step:5d} {score:5.1f} {bar}")
        print(f"peak {peak:.1f} -> final {final:.1f} (drop {peak - final:.1f})")
        print(f"data used for updates: {result.samples_used} of {result.samples_consumed} "
              f"consumed ({result.pct_data_used:.1f}%)")


if __name__ == "__main__":
    main()
