"""Training harness: the multi-task loop, evaluation, metrics emission.

Every step the sampler policy assembles a size-b batch, the batch is
grouped by task, each task sub-batch contributes its mean per-sample loss
(cross-entropy or squared error), the task losses are summed in task
registration order, and one optimizer step runs. Frozen parameters never
receive gradients and are never touched.

Runs are reproducible bit-for-bit: the metrics stream (one JSON object per
line) contains no timing information; wall-clock goes to the CSV summary
and the run log only.
"""

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, restore_model_params, save_checkpoint
from .config import ExperimentConfig, SyntheticSource
from .conditioning import UnknownTaskError
from .data import Dataset, build_dataset
from .model import MultiTaskModel, TaskDef
from .optim import Adam
from .rng import derive_rng
from .sampler import TaskCursor, make_policy
from .tensor import Tape, Tensor, add, backward, log_softmax_lastdim, mul, scale, shift, sum_all


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainResult:
    out_dir: str
    checkpoint_path: str
    init_checkpoint_path: str
    metrics_path: str
    summary_path: str
    final_eval: dict
    samples_used: int
    samples_scored: int
    samples_consumed: int
    pct_data_used: float


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    onehot = np.zeros(logits.shape)
    onehot[int(label)] = 1.0
    return scale(sum_all(mul(log_softmax_lastdim(logits), Tensor(onehot))), -1.0)


def squared_error(pred: Tensor, target: float) -> Tensor:
    diff = shift(pred, -float(target))
    return sum_all(mul(diff, diff))


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def build_datasets(config: ExperimentConfig) -> dict:
    datasets = {}
    for spec in config.tasks:
        min_size = config.batch_size if isinstance(spec.source, SyntheticSource) else None
        ds = build_dataset(spec, config.model.seq_len, min_size=min_size)
        if ds.vocab_size > config.model.vocab_size:
            raise ValueError(
                f"task {spec.name!r} uses vocab size {ds.vocab_size} but the model "
                f"only embeds {config.model.vocab_size} ids"
            )
        datasets[spec.name] = ds
    return datasets


def build_model(config: ExperimentConfig) -> MultiTaskModel:
    defs = [TaskDef(t.name, t.kind, t.n_classes) for t in config.tasks]
    return MultiTaskModel(config.model, defs, seed=config.seed)


def build_cursors(config: ExperimentConfig, datasets: dict) -> list:
    cursors = []
    for spec in config.tasks:
        ds = datasets[spec.name]
        cursors.append(TaskCursor(
            spec.name, ds.examples, n_classes=spec.n_classes,
            label_range=spec.label_range if spec.kind == "regression" else None,
            entropy_scoring=spec.entropy_scoring,
        ))
    return cursors


# ---------------------------------------------------------------------------
# the shared per-batch math path (identical under every sampler policy)
# ---------------------------------------------------------------------------


def batch_losses(model: MultiTaskModel, batch):
    """Forward the batch grouped by task; returns (total, per_task, tape).

    The total is the sum over task sub-batches of per-task mean losses,
    accumulated in task registration order.
    """
    groups = {}
    for task, example in batch:
        groups.setdefault(task, []).append(example)
    per_task = {}
    with Tape() as tape:
        total = None
        for task in model.tasks:
            items = groups.get(task)
            if not items:
                continue
            classification = model.heads[task].kind == "classification"
            outs = model.forward_many([ex[0] for ex in items], task)
            acc = None
            for out, (_, label) in zip(outs, items):
                term = cross_entropy(out, label) if classification else squared_error(out, label)
                acc = term if acc is None else add(acc, term)
            task_loss = scale(acc, 1.0 / len(items))
            per_task[task] = task_loss.item()
            total = task_loss if total is None else add(total, task_loss)
    return total, per_task, tape


def train_step(model: MultiTaskModel, batch, optimizer: Adam, step_index: int):
    total, per_task, tape = batch_losses(model, batch)
    loss_value = total.item()
    if not math.isfinite(loss_value):
        raise TrainingDivergedError(f"non-finite loss {loss_value} at step {step_index}")
    backward(total, tape)
    optimizer.step(step_index)
    optimizer.zero_grad()
    return loss_value, per_task


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _pearson(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.std() == 0.0 or target.std() == 0.0:
        return 0.0
    return float(np.corrcoef(pred, target)[0, 1])


def evaluate(model: MultiTaskModel, datasets: dict, tasks=None) -> dict:
    """Deterministic inference-mode pass over each task's dev split.

    Classification reports accuracy; regression reports MSE and Pearson r.
    Every entry carries a 0-100 'score' (accuracy or correlation) used for
    cross-task dispersion.
    """
    names = list(tasks) if tasks is not None else [n for n in datasets if n in model.heads]
    results = {}
    for name in names:
        if name not in model.heads:
            raise UnknownTaskError(
                f"task {name!r} is not in the checkpoint; extend the task embedding "
                f"table (e.g. copying a related task's embedding) and fine-tune with "
                f"the new head before evaluating"
            )
        if name not in datasets:
            raise KeyError(f"no dataset for task {name!r}")
        ds: Dataset = datasets[name]
        head = model.heads[name]
        outs = model.forward_many([tokens for tokens, _ in ds.dev], name)
        if head.kind == "classification":
            hits = sum(
                int(int(np.argmax(out.data)) == int(label))
                for out, (_, label) in zip(outs, ds.dev)
            )
            accuracy = hits / len(ds.dev)
            results[name] = {"kind": "classification", "n": len(ds.dev),
                             "accuracy": accuracy, "score": 100.0 * accuracy}
        else:
            preds = np.array([float(out.data[0]) for out in outs])
            targets = np.array([float(label) for _, label in ds.dev])
            mse = float(np.mean((preds - targets) ** 2))
            r = _pearson(preds, targets)
            results[name] = {"kind": "regression", "n": len(ds.dev),
                             "mse": mse, "pearson_r": r, "score": 100.0 * r}
    return results


def dispersion(eval_metrics: dict):
    scores = [m["score"] for m in eval_metrics.values()]
    if len(scores) < 2:
        return None
    mean = sum(scores) / len(scores)
    return math.sqrt(sum((s - mean) ** 2 for s in scores) / len(scores))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def _dump_json_line(fh, record: dict) -> None:
    fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    fh.flush()


def train(config: ExperimentConfig) -> TrainResult:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json(), encoding="utf-8")

    datasets = build_datasets(config)
    model = build_model(config)
    cursors = build_cursors(config, datasets)
    policy = make_policy(config.sampler, cursors, config.batch_size,
                         derive_rng(config.seed, "sampler"))
    optimizer = Adam(model.trainable_parameters(), config.optimizer, config.steps)

    # checkpoints describe the experiment, not the run location: identical
    # configs in different directories produce bitwise-identical files
    ckpt_config = config.to_dict()
    ckpt_config["out_dir"] = ""

    init_path = out / "init.ckpt"
    save_checkpoint(str(init_path), ckpt_config, model.parameters())

    metrics_path = out / "metrics.jsonl"
    summary_path = out / "summary.csv"
    samples_used = 0
    samples_scored = 0
    counts_since_eval = {}
    summary_rows = []
    last_eval = {}
    start = time.monotonic()

    with open(metrics_path, "w", encoding="utf-8") as metrics:
        for step in range(config.steps):
            batch, trace = policy.next_batch(model)
            try:
                loss_value, per_task_loss = train_step(model, batch, optimizer, step)
            except TrainingDivergedError:
                dump = {
                    "step": step,
                    "batch": [{"task": t, "tokens": list(ex[0]), "label": ex[1]}
                              for t, ex in batch],
                }
                dump_path = out / "diverged_batch.json"
                dump_path.write_text(json.dumps(dump, sort_keys=True), encoding="utf-8")
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}; offending batch dumped to {dump_path}"
                ) from None

            samples_used += len(batch)
            samples_scored += trace.scored
            for task, n in trace.task_counts.items():
                counts_since_eval[task] = counts_since_eval.get(task, 0) + n

            if config.policy_trace:
                _dump_json_line(metrics, {"type": "sampler", "step": step, **trace.to_dict()})

            is_eval_step = (step + 1) % config.eval_every == 0 or step + 1 == config.steps
            if is_eval_step:
                eval_metrics = evaluate(model, datasets)
                consumed = sum(c.consumed for c in cursors)
                pct = 100.0 * samples_used / consumed if consumed else 100.0
                record = {
                    "type": "eval",
                    "step": step + 1,
                    "train_loss": loss_value,
                    "per_task_loss": per_task_loss,
                    "tasks": eval_metrics,
                    "task_sigma": dispersion(eval_metrics),
                    "sampler": {
                        "policy": trace.policy,
                        "batch_task_counts": dict(sorted(counts_since_eval.items())),
                        "mean_entropy": trace.mean_entropy,
                        "max_mean_entropy": trace.max_mean_entropy,
                        "fallback": trace.fallback,
                    },
                    "samples_used": samples_used,
                    "samples_scored": samples_scored,
                    "samples_consumed": consumed,
                    "pct_data_used": pct,
                }
                _dump_json_line(metrics, record)
                last_eval = record
                counts_since_eval = {}
                summary_rows.append({
                    "step": step + 1,
                    "train_loss": loss_value,
                    **{f"score.{k}": v["score"] for k, v in eval_metrics.items()},
                    "task_sigma": record["task_sigma"],
                    "pct_data_used": pct,
                    "wall_clock_s": time.monotonic() - start,
                })

            if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                save_checkpoint(str(out / f"step_{step + 1:06d}.ckpt"),
                                ckpt_config, model.parameters())

    final_path = out / "final.ckpt"
    save_checkpoint(str(final_path), ckpt_config, model.parameters())

    fieldnames = ["step", "train_loss"]
    fieldnames += [f"score.{t.name}" for t in config.tasks]
    fieldnames += ["task_sigma", "pct_data_used", "wall_clock_s"]
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in summary_rows:
            writer.writerow(row)

    consumed = sum(c.consumed for c in cursors)
    return TrainResult(
        out_dir=str(out),
        checkpoint_path=str(final_path),
        init_checkpoint_path=str(init_path),
        metrics_path=str(metrics_path),
        summary_path=str(summary_path),
        final_eval=last_eval,
        samples_used=samples_used,
        samples_scored=samples_scored,
        samples_consumed=consumed,
        pct_data_used=100.0 * samples_used / consumed if consumed else 100.0,
    )


# ---------------------------------------------------------------------------
# checkpoint-driven entry points
# ---------------------------------------------------------------------------


def load_run(ckpt_path: str):
    """Rebuild (config, model, datasets) from a checkpoint file."""
    config_dict, params = load_checkpoint(ckpt_path)
    config = ExperimentConfig.from_dict(config_dict)
    model = build_model(config)
    restore_model_params(model, params)
    datasets = build_datasets(config)
    return config, model, datasets
