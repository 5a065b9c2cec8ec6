#!/usr/bin/env python3
"""Module ablation: conditional modules on vs off over one four-task suite.

Same data, sampler, and seed in both runs; reports per-task dev scores,
their mean, and the cross-task standard deviation. Expected pattern: the
conditioned model reaches at least the same mean score with lower
dispersion across tasks.

    python3 scripts/run_module_ablation.py --out-dir runs/ablation [--steps 3000]
"""

import argparse
from pathlib import Path

from camtl.analysis import task_sigma
from camtl.presets import ablation_config
from camtl.train import train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="runs/ablation")
    parser.add_argument("--steps", type=int, default=3000)
    parser.add_argument("--seed", type=int, default=12)
    args = parser.parse_args()

    summary = {}
    for conditional in (False, True):
        tag = "conditioned" if conditional else "plain"
        out = Path(args.out_dir) / tag
        result = train(ablation_config(conditional, str(out), seed=args.seed,
                                       steps=args.steps))
        scores = {t: m["score"] for t, m in result.final_eval["tasks"].items()}
        sigma = task_sigma(list(scores.values()))
        mean = sum(scores.values()) / len(scores)
        summary[tag] = (mean, sigma)
        print(f"\n== {tag} ==")
        for task, score in sorted(scores.items()):
            print(f"  {task:>10}: {score:5.1f}")
        print(f"  mean {mean:.2f}  task-sigma {sigma:.2f}")

    plain_mean, plain_sigma = summary["plain"]
    cond_mean, cond_sigma = summary["conditioned"]
    print(f"\nconditioned vs plain: mean {cond_mean:.2f} vs {plain_mean:.2f}, "
          f"sigma {cond_sigma:.2f} vs {plain_sigma:.2f}")


if __name__ == "__main__":
    main()
