"""Command-line driver.

    camtl train  --config exp.json [--seed N] [--out-dir DIR]
                 [--sampler mt_uncertainty|random|task_size] [--policy-trace]
    camtl eval   --ckpt run/final.ckpt [--tasks a,b]
    camtl covsim --ckpt run/final.ckpt [--samples M] [--out covsim.csv]
    camtl report --ckpt run/final.ckpt

CAMTL_THREADS caps the worker count of the sampler's scoring fan-out.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

from .analysis import collect_activations, covsim_report, parameter_report
from .config import SAMPLERS, load_config
from .train import evaluate, load_run, train


def _add_train(sub):
    p = sub.add_parser("train", help="run a training experiment from a JSON config")
    p.add_argument("--config", required=True, help="path to the experiment config JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out-dir", default=None, help="override the config output directory")
    p.add_argument("--sampler", choices=SAMPLERS, default=None, help="override the sampler policy")
    p.add_argument("--policy-trace", action="store_true",
                   help="emit one sampler-trace record per step into the metrics stream")


def _add_ckpt_arg(p):
    p.add_argument("--ckpt", required=True, help="path to a checkpoint file")


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint on its dev sets")
    _add_ckpt_arg(p)
    p.add_argument("--tasks", default=None, help="comma-separated subset of tasks")


def _add_covsim(sub):
    p = sub.add_parser("covsim", help="pairwise covariance-similarity report")
    _add_ckpt_arg(p)
    p.add_argument("--samples", type=int, default=None,
                   help="max dev examples per task used for activations")
    p.add_argument("--out", default=None, help="write the pairwise matrix to this CSV path")


def _add_report(sub):
    p = sub.add_parser("report", help="parameter accounting for a checkpoint")
    _add_ckpt_arg(p)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="camtl")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)
    _add_eval(sub)
    _add_covsim(sub)
    _add_report(sub)
    args = parser.parse_args(argv)

    if args.command == "train":
        config = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out_dir is not None:
            overrides["out_dir"] = args.out_dir
        if args.sampler is not None:
            overrides["sampler"] = args.sampler
        if args.policy_trace:
            overrides["policy_trace"] = True
        if overrides:
            d = config.to_dict()
            d.update(overrides)
            config = config.from_dict(d)
        result = train(config)
        print(f"run complete: {result.out_dir}")
        print(f"  checkpoint : {result.checkpoint_path}")
        print(f"  metrics    : {result.metrics_path}")
        print(f"  data used  : {result.samples_used} of {result.samples_consumed} "
              f"consumed samples ({result.pct_data_used:.1f}%)")
        for task, m in sorted(result.final_eval.get("tasks", {}).items()):
            print(f"  {task}: score {m['score']:.2f}")
        return 0

    if args.command == "eval":
        config, model, datasets = load_run(args.ckpt)
        tasks = args.tasks.split(",") if args.tasks else None
        results = evaluate(model, datasets, tasks=tasks)
        print(json.dumps(results, indent=2, sort_keys=True))
        return 0

    if args.command == "covsim":
        config, model, datasets = load_run(args.ckpt)
        samples = [
            collect_activations(model, name, datasets[name].dev, limit=args.samples)
            for name in model.tasks
        ]
        report = covsim_report(samples)
        print("task ranks:", dict(zip(report.tasks, report.ranks)))
        for i, task in enumerate(report.tasks):
            row = " ".join(f"{v:.4f}" for v in report.pairwise[i])
            print(f"{task:>12}  {row}  | avg {report.averaged[i]:.4f}")
        if args.out:
            with open(args.out, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["task"] + list(report.tasks) + ["avg", "rank"])
                for i, task in enumerate(report.tasks):
                    writer.writerow([task] + [f"{v:.10f}" for v in report.pairwise[i]]
                                    + [f"{report.averaged[i]:.10f}", report.ranks[i]])
            print(f"pairwise matrix written to {args.out}")
        metrics = Path(args.ckpt).parent / "metrics.jsonl"
        if metrics.exists():
            record = {
                "type": "covsim",
                "tasks": list(report.tasks),
                "pairwise": [[float(v) for v in row] for row in report.pairwise],
                "averaged": [float(v) for v in report.averaged],
                "ranks": list(report.ranks),
            }
            with open(metrics, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
            print(f"covsim record appended to {metrics}")
        return 0

    if args.command == "report":
        config, model, datasets = load_run(args.ckpt)
        print(json.dumps(parameter_report(model).to_dict(), indent=2, sort_keys=True))
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
