"""Experiment configuration: tasks, sampler, optimizer, run parameters.

Configs round-trip through JSON with sorted keys so that serialized forms
are canonical; a seed plus a config fully determines a run.
"""

import json
from dataclasses import dataclass, field

from .model import ModelConfig

SAMPLERS = ("mt_uncertainty", "random", "task_size")
GENERATOR_IDS = ("pattern_presence", "majority", "parity", "regression_score")
LOSSES = ("cross_entropy", "mean_squared_error")


@dataclass
class SyntheticSource:
    generator: str
    size: int
    seed: int
    vocab_size: int = 16
    motif_len: int = 3
    noise: float = 0.0
    dev_size: int = 200

    def __post_init__(self):
        if self.generator not in GENERATOR_IDS:
            raise ValueError(f"unknown generator {self.generator!r}; expected one of {GENERATOR_IDS}")
        if self.size < 1 or self.dev_size < 1:
            raise ValueError("synthetic sizes must be positive")
        if self.vocab_size < 4:
            raise ValueError("synthetic vocab_size must be at least 4")
        if self.motif_len < 1:
            raise ValueError("motif_len must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError(f"label noise must be in [0, 1], got {self.noise}")

    def to_dict(self):
        return {
            "type": "synthetic", "generator": self.generator, "size": self.size,
            "seed": self.seed, "vocab_size": self.vocab_size,
            "motif_len": self.motif_len, "noise": self.noise, "dev_size": self.dev_size,
        }


@dataclass
class TsvSource:
    path: str
    vocab_size: int = 1024
    vocab_seed: int = 0

    def to_dict(self):
        return {"type": "tsv", "path": self.path, "vocab_size": self.vocab_size,
                "vocab_seed": self.vocab_seed}


def _source_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("type")
    if kind == "synthetic":
        return SyntheticSource(**d)
    if kind == "tsv":
        return TsvSource(**d)
    raise ValueError(f"unknown source type {kind!r}")


@dataclass
class TaskSpec:
    """One supervised task: its data source, output space, and loss."""

    name: str
    kind: str  # "classification" | "regression"
    source: object  # SyntheticSource | TsvSource
    n_classes: int = None
    loss: str = None
    label_range: tuple = (0.0, 1.0)
    entropy_scoring: bool = True

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"task {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "classification":
            if self.n_classes is None or self.n_classes < 2:
                raise ValueError(f"task {self.name!r}: classification needs n_classes >= 2")
            default_loss = "cross_entropy"
        else:
            self.n_classes = None
            default_loss = "mean_squared_error"
            lo, hi = self.label_range
            if not hi > lo:
                raise ValueError(f"task {self.name!r}: bad label_range {self.label_range}")
        if self.loss is None:
            self.loss = default_loss
        if self.loss not in LOSSES:
            raise ValueError(f"task {self.name!r}: unknown loss {self.loss!r}")
        if self.kind == "classification" and self.loss != "cross_entropy":
            raise ValueError(f"task {self.name!r}: classification uses cross_entropy")
        if self.kind == "regression" and self.loss != "mean_squared_error":
            raise ValueError(f"task {self.name!r}: regression uses mean_squared_error")

    def to_dict(self):
        return {
            "name": self.name, "kind": self.kind, "source": self.source.to_dict(),
            "n_classes": self.n_classes, "loss": self.loss,
            "label_range": list(self.label_range), "entropy_scoring": self.entropy_scoring,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        d = dict(d)
        d["source"] = _source_from_dict(d["source"])
        if d.get("label_range") is not None:
            d["label_range"] = tuple(d["label_range"])
        return cls(**d)


@dataclass
class OptimizerConfig:
    lr: float = 1e-3  # synthetic desk-scale default; pretrained-style runs use 2e-5
    warmup_frac: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise ValueError(f"warmup fraction must be in [0, 1], got {self.warmup_frac}")

    def to_dict(self):
        return {"lr": self.lr, "warmup_frac": self.warmup_frac,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@dataclass
class ExperimentConfig:
    model: ModelConfig
    tasks: list
    steps: int
    out_dir: str
    sampler: str = "mt_uncertainty"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 32
    seed: int = 12
    eval_every: int = 100
    checkpoint_every: int = 0  # 0 disables interval checkpoints
    policy_trace: bool = False

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be positive, got {self.eval_every}")
        names = [t.name for t in self.tasks]
        if len(names) != len(set(names)):
            raise ValueError(f"task names must be unique, got {names}")
        if not names:
            raise ValueError("need at least one task")
        for t in self.tasks:
            if isinstance(t.source, SyntheticSource) and t.source.size < self.batch_size:
                raise ValueError(
                    f"task {t.name!r}: synthetic size {t.source.size} is smaller "
                    f"than the batch size {self.batch_size}"
                )

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "tasks": [t.to_dict() for t in self.tasks],
            "steps": self.steps,
            "out_dir": self.out_dir,
            "sampler": self.sampler,
            "optimizer": self.optimizer.to_dict(),
            "batch_size": self.batch_size,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "checkpoint_every": self.checkpoint_every,
            "policy_trace": self.policy_trace,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["model"] = ModelConfig.from_dict(d["model"])
        d["tasks"] = [TaskSpec.from_dict(t) for t in d["tasks"]]
        if "optimizer" in d:
            d["optimizer"] = OptimizerConfig(**d["optimizer"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return ExperimentConfig.from_json(fh.read())
