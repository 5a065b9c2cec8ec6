"""Multi-task batch construction policies.

The uncertainty policy draws b candidates per task, scores each candidate
by the Shannon entropy of the model's prediction, normalizes by the
uniform-distribution entropy of the task's class count and by the largest
per-task mean entropy in the pool, and keeps the b highest-scoring
candidates. Drawn-but-unselected candidates are consumed (they reappear
only after the task's dataset reloads). Random and size-proportional
baselines share the same cursor machinery so that switching policy changes
batch composition and nothing else.

Scoring forward passes run in inference mode (no tape), optionally fanned
out over a thread pool capped by the CAMTL_THREADS environment variable;
results are keyed by draw index, so the schedule cannot change them.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


class DegeneratePoolError(RuntimeError):
    """Every candidate was scored with zero entropy; U is undefined."""


def worker_count() -> int:
    """Worker cap from CAMTL_THREADS (>=1); defaults to 1."""
    raw = os.environ.get("CAMTL_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def shannon_entropy(probs) -> float:
    """Entropy in nats of a probability vector; 0*log0 counts as 0."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError(f"expected a probability vector, got shape {p.shape}")
    if (p < -1e-12).any():
        raise ValueError("negative probabilities")
    if abs(float(p.sum()) - 1.0) > 1e-6:
        raise ValueError(f"probabilities sum to {float(p.sum())}, not 1")
    h = 0.0
    for v in p:
        if v > 0.0:
            h -= float(v) * math.log(float(v))
    return max(h, 0.0)


def max_entropy_uniform(n_classes: int) -> float:
    """Entropy of the uniform distribution over n_classes outcomes."""
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    return math.log(n_classes)


class TaskCursor:
    """Sequential draw position over one task's training examples.

    Exhausting the examples triggers a reload (back to the start) and
    increments the reload count. `size` is the original dataset size,
    which the size-proportional policy uses.
    """

    def __init__(self, task: str, examples, n_classes: int = None,
                 label_range=None, entropy_scoring: bool = True):
        if not examples:
            raise ValueError(f"task {task!r} has no examples")
        self.task = task
        self.examples = list(examples)
        self.n_classes = n_classes
        self.label_range = label_range
        self.entropy_scoring = entropy_scoring
        self.position = 0
        self.reloads = 0

    @property
    def size(self) -> int:
        return len(self.examples)

    @property
    def consumed(self) -> int:
        return self.reloads * self.size + self.position

    @property
    def effective_classes(self) -> int:
        # regression scores through a fixed two-bin soft histogram
        return self.n_classes if self.n_classes is not None else 2

    def next(self):
        item = self.examples[self.position]
        self.position += 1
        if self.position >= len(self.examples):
            self.position = 0
            self.reloads += 1
        return item

    def draw(self, k: int):
        return [self.next() for _ in range(k)]


@dataclass(frozen=True)
class Candidate:
    task: str
    task_index: int
    draw_index: int
    example: tuple
    entropy: float
    score: float


@dataclass
class CandidatePool:
    """b candidates per scored task with normalized uncertainty scores."""

    b: int
    candidates: list
    mean_entropy: dict
    max_mean_entropy: float


def regression_bin_probs(value: float, label_range) -> np.ndarray:
    """Two-bin soft histogram around the range midpoint.

    A sigmoid with slope 8/(hi-lo) maps the prediction to P(high bin), so
    mid-range outputs are maximally uncertain and outputs at the bounds
    are confident without saturating.
    """
    lo, hi = label_range
    mid = 0.5 * (lo + hi)
    width = hi - lo
    if width <= 0:
        raise ValueError(f"bad label range {label_range}")
    p_high = 1.0 / (1.0 + math.exp(-8.0 * (value - mid) / width))
    return np.array([1.0 - p_high, p_high])


def _output_probs(cursor: TaskCursor, out) -> np.ndarray:
    if cursor.n_classes is not None:
        logits = out.data - out.data.max()
        e = np.exp(logits)
        return e / e.sum()
    if cursor.label_range is None:
        raise ValueError(f"regression task {cursor.task!r} has no label range")
    return regression_bin_probs(float(out.data[0]), cursor.label_range)


def predictive_distribution(model, cursor: TaskCursor, example) -> np.ndarray:
    """Class probabilities for one example, in inference mode."""
    tokens, _ = example
    return _output_probs(cursor, model.forward(tokens, cursor.task))


def score_pool(model, cursors, b: int) -> CandidatePool:
    """Draw b candidates per scoring task and score them.

    Drawn samples are consumed from the cursors. Raises
    DegeneratePoolError when every prediction is certain (the caller
    should fall back to the random policy for the step).
    """
    if b < 1:
        raise ValueError(f"batch size must be positive, got {b}")
    scoring = [(t_idx, c) for t_idx, c in enumerate(cursors) if c.entropy_scoring]
    if not scoring:
        raise ValueError("no task is eligible for entropy scoring")
    drawn = [(t_idx, cursor, cursor.draw(b)) for t_idx, cursor in scoring]

    def score_task(rec):
        _, cursor, examples = rec
        outs = model.forward_many([ex[0] for ex in examples], cursor.task)
        return [shannon_entropy(_output_probs(cursor, out)) for out in outs]

    workers = worker_count()
    if workers > 1 and len(drawn) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_task_entropy = list(pool.map(score_task, drawn))
    else:
        per_task_entropy = [score_task(rec) for rec in drawn]

    mean_entropy = {
        cursor.task: sum(hs) / b for (_, cursor, _), hs in zip(drawn, per_task_entropy)
    }
    h_hat = max(mean_entropy.values())
    if h_hat <= 0.0:
        raise DegeneratePoolError("all candidate predictions are certain (max mean entropy is 0)")

    candidates = []
    for (t_idx, cursor, examples), entropies in zip(drawn, per_task_entropy):
        h_prime = max_entropy_uniform(cursor.effective_classes)
        for d_idx, (example, h) in enumerate(zip(examples, entropies)):
            candidates.append(Candidate(
                task=cursor.task, task_index=t_idx, draw_index=d_idx,
                example=example, entropy=h, score=h / (h_hat * h_prime),
            ))
    return CandidatePool(b=b, candidates=candidates,
                         mean_entropy=mean_entropy, max_mean_entropy=h_hat)


def select_top_b(pool: CandidatePool, count: int = None):
    """The b candidates with the largest scores.

    Ties break deterministically by task registration order, then draw
    order. Unselected candidates are dropped, not returned to the cursors.
    """
    ranked = sorted(pool.candidates, key=lambda c: (-c.score, c.task_index, c.draw_index))
    return ranked[: pool.b if count is None else count]


def sample_random(cursors, b: int, rng: np.random.Generator):
    """Each batch slot picks a task uniformly, then that task's next sample."""
    if not cursors:
        raise ValueError("need at least one task")
    picks = rng.integers(0, len(cursors), size=b)
    return [(cursors[int(i)].task, cursors[int(i)].next()) for i in picks]


def sample_task_size(cursors, b: int, rng: np.random.Generator):
    """Task choice proportional to original dataset size."""
    if not cursors:
        raise ValueError("need at least one task")
    sizes = np.array([c.size for c in cursors], dtype=np.float64)
    probs = sizes / sizes.sum()
    picks = rng.choice(len(cursors), size=b, p=probs)
    return [(cursors[int(i)].task, cursors[int(i)].next()) for i in picks]


# ---------------------------------------------------------------------------
# Policy objects used by the training loop
# ---------------------------------------------------------------------------


@dataclass
class SamplerTrace:
    """Per-step record of what the policy did."""

    policy: str
    task_counts: dict
    mean_entropy: dict = field(default_factory=dict)
    max_mean_entropy: float = None
    fallback: bool = False
    scored: int = 0
    selected: int = 0

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "task_counts": dict(sorted(self.task_counts.items())),
            "mean_entropy": {k: v for k, v in sorted(self.mean_entropy.items())},
            "max_mean_entropy": self.max_mean_entropy,
            "fallback": self.fallback,
            "scored": self.scored,
            "selected": self.selected,
        }


def _counts(batch) -> dict:
    counts = {}
    for task, _ in batch:
        counts[task] = counts.get(task, 0) + 1
    return counts


class RandomPolicy:
    name = "random"

    def __init__(self, cursors, b, rng):
        self.cursors = cursors
        self.b = b
        self.rng = rng

    def next_batch(self, model=None):
        batch = sample_random(self.cursors, self.b, self.rng)
        return batch, SamplerTrace(self.name, _counts(batch), selected=len(batch))


class TaskSizePolicy:
    name = "task_size"

    def __init__(self, cursors, b, rng):
        self.cursors = cursors
        self.b = b
        self.rng = rng

    def next_batch(self, model=None):
        batch = sample_task_size(self.cursors, self.b, self.rng)
        return batch, SamplerTrace(self.name, _counts(batch), selected=len(batch))


class MTUncertaintyPolicy:
    """Entropy-scored selection with a random fallback on degenerate pools.

    Tasks whose cursor opts out of entropy scoring (the regression toggle)
    do not enter the pool; a proportional share of the batch is filled for
    them by the random policy instead.
    """

    name = "mt_uncertainty"

    def __init__(self, cursors, b, rng):
        self.cursors = cursors
        self.b = b
        self.rng = rng

    def next_batch(self, model):
        scoring = [c for c in self.cursors if c.entropy_scoring]
        excluded = [c for c in self.cursors if not c.entropy_scoring]
        fill = 0
        if excluded:
            fill = round(self.b * len(excluded) / len(self.cursors))
        keep = self.b - fill

        try:
            pool = score_pool(model, self.cursors, self.b) if scoring and keep > 0 else None
        except DegeneratePoolError:
            batch = sample_random(self.cursors, self.b, self.rng)
            trace = SamplerTrace(self.name, _counts(batch), fallback=True,
                                 scored=self.b * len(scoring), selected=len(batch))
            return batch, trace

        batch = []
        trace_entropy = {}
        h_hat = None
        scored = 0
        if pool is not None:
            chosen = select_top_b(pool, count=keep)
            batch.extend((c.task, c.example) for c in chosen)
            trace_entropy = pool.mean_entropy
            h_hat = pool.max_mean_entropy
            scored = len(pool.candidates)
        if fill > 0:
            batch.extend(sample_random(excluded, fill, self.rng))
        trace = SamplerTrace(self.name, _counts(batch), mean_entropy=trace_entropy,
                             max_mean_entropy=h_hat, scored=scored, selected=len(batch))
        return batch, trace


POLICIES = {
    "mt_uncertainty": MTUncertaintyPolicy,
    "random": RandomPolicy,
    "task_size": TaskSizePolicy,
}


def make_policy(name: str, cursors, b: int, rng: np.random.Generator):
    if name not in POLICIES:
        raise ValueError(f"unknown sampler policy {name!r}; expected one of {sorted(POLICIES)}")
    return POLICIES[name](cursors, b, rng)
