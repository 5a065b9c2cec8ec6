"""Diagnostics: covariance similarity, score dispersion, parameter counts.

The covariance-similarity score compares two tasks by the rank-truncated
covariances of their first-layer inputs: each covariance X^T X is
eigendecomposed (cyclic Jacobi), truncated to the smallest rank holding
99% of the spectral mass, and the pair is scored by the cosine of the two
truncated covariances under the Frobenius inner product. That form is
symmetric, exactly 1 for identical inputs, 0 for orthogonal column spaces,
and bounded by Cauchy-Schwarz.
"""

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_ENERGY = 0.99
JACOBI_TOL = 1e-10


class DegenerateSpectrumError(ValueError):
    """The covariance has no spectral mass (zero matrix)."""


@dataclass(frozen=True)
class ActivationSample:
    """Pooled inputs to the first transformer layer for one task.

    X has one row per held-out example (m >= d recommended for a stable
    covariance rank); rows are recorded post-alignment.
    """

    task: str
    X: np.ndarray


@dataclass
class CovSimReport:
    tasks: tuple
    pairwise: np.ndarray  # T x T, symmetric, unit diagonal
    averaged: np.ndarray  # per-task mean over the other tasks
    ranks: tuple  # truncation rank used per task


def jacobi_eigh(matrix: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns eigenvalues in descending order and the matching eigenvectors
    as columns. Sweeps run until the off-diagonal Frobenius mass drops
    below tol relative to the matrix norm.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"need a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-10):
        raise ValueError("matrix is not symmetric")
    n = a.shape[0]
    vecs = np.eye(n)
    norm = np.linalg.norm(a)
    if norm == 0.0:
        return np.zeros(n), vecs
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, (a * a).sum() - (np.diag(a) ** 2).sum()))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-36 * abs(diff):
                    t = apq / diff
                else:
                    theta = diff / (2.0 * apq)
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                vecs = vecs @ rot
    order = np.argsort(-np.diag(a), kind="stable")
    return np.diag(a)[order].copy(), vecs[:, order].copy()


def rank_truncation(X: np.ndarray, energy: float = DEFAULT_ENERGY, rule: str = "mass"):
    """Best low-rank factors of the covariance X^T X.

    The rank r is the smallest one whose leading eigenvalues hold `energy`
    of the total eigenvalue sum (rule="mass", default) or a plain fraction
    of the spectrum length (rule="count"). Returns (U_r, D_r, r) with U_r
    the top-r eigenvectors as columns and D_r the matching eigenvalues.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"need an m x d sample matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ValueError("sample matrix contains non-finite values")
    if rule not in ("mass", "count"):
        raise ValueError(f"unknown truncation rule {rule!r}")
    cov = X.T @ X
    values, vectors = jacobi_eigh(cov)
    values = np.clip(values, 0.0, None)
    total = float(values.sum())
    if total <= 0.0:
        raise DegenerateSpectrumError("covariance has no spectral mass")
    d = values.size
    if rule == "count":
        r = max(1, math.ceil(energy * d))
    else:
        cumulative = np.cumsum(values)
        r = int(np.searchsorted(cumulative, energy * total - 1e-15) + 1)
        r = min(max(r, 1), d)
    return vectors[:, :r].copy(), values[:r].copy(), r


def _truncated_covariance(sample: ActivationSample, energy: float, rule: str):
    u, d, r = rank_truncation(sample.X, energy=energy, rule=rule)
    factor = u * np.sqrt(d)  # columns scaled by sqrt(eigenvalue)
    return factor, r


def covsim(a: ActivationSample, b: ActivationSample,
           energy: float = DEFAULT_ENERGY, rule: str = "mass") -> float:
    """Cosine of the two rank-truncated covariances (Frobenius inner product).

    Equivalently ||Ma^T Mb||_F^2 / (||Ma^T Ma||_F ||Mb^T Mb||_F) with
    M = U_r D_r^{1/2}; in (0, 1], symmetric, 1.0 for identical samples and
    0.0 for orthogonal column spaces.
    """
    ma, _ = _truncated_covariance(a, energy, rule)
    mb, _ = _truncated_covariance(b, energy, rule)
    cross = np.linalg.norm(ma.T @ mb) ** 2
    denom = np.linalg.norm(ma.T @ ma) * np.linalg.norm(mb.T @ mb)
    return float(cross / denom)


def avg_covsim(pairwise: np.ndarray) -> np.ndarray:
    """Per-task mean similarity over the other tasks (self-pairs excluded)."""
    pairwise = np.asarray(pairwise, dtype=np.float64)
    t = pairwise.shape[0]
    if pairwise.ndim != 2 or pairwise.shape != (t, t) or t < 2:
        raise ValueError(f"need a T x T matrix with T >= 2, got shape {pairwise.shape}")
    out = np.empty(t)
    for i in range(t):
        out[i] = (pairwise[i].sum() - pairwise[i, i]) / (t - 1)
    return out


def covsim_report(samples, energy: float = DEFAULT_ENERGY, rule: str = "mass") -> CovSimReport:
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least two tasks for a similarity report")
    factors, ranks = [], []
    for s in samples:
        f, r = _truncated_covariance(s, energy, rule)
        factors.append(f)
        ranks.append(r)
    t = len(samples)
    pairwise = np.ones((t, t))
    selfs = [np.linalg.norm(f.T @ f) for f in factors]
    for i in range(t):
        for j in range(i + 1, t):
            value = float(np.linalg.norm(factors[i].T @ factors[j]) ** 2 / (selfs[i] * selfs[j]))
            pairwise[i, j] = pairwise[j, i] = value
    return CovSimReport(
        tasks=tuple(s.task for s in samples),
        pairwise=pairwise,
        averaged=avg_covsim(pairwise),
        ranks=tuple(ranks),
    )


def task_sigma(scores) -> float:
    """Population standard deviation of per-task scores."""
    values = [float(s) for s in scores]
    if len(values) < 2:
        raise ValueError(f"need at least 2 task scores, got {len(values)}")
    mean = sum(values) / len(values)
    return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


# ---------------------------------------------------------------------------
# Parameter accounting
# ---------------------------------------------------------------------------


@dataclass
class ParameterReport:
    total: int
    trainable: int
    frozen: int
    by_group: dict
    per_task: dict  # parameters added per registered task (embedding + head)
    generator_dim_ratio: float  # full-block / block-diagonal generator size
    block_entry_ratio: float  # full-block / block-diagonal base entries

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "trainable": self.trainable,
            "frozen": self.frozen,
            "by_group": dict(self.by_group),
            "per_task": dict(self.per_task),
            "generator_dim_ratio": self.generator_dim_ratio,
            "block_entry_ratio": self.block_entry_ratio,
        }


def _group_of(name: str) -> str:
    if name.startswith("embed."):
        return "embedding"
    if name.startswith("task_emb."):
        return "task_embeddings"
    if name.startswith("align."):
        return "alignment"
    if name.startswith("head."):
        return "heads"
    if name.startswith("bottleneck"):
        return "bottleneck"
    if ".attn_bias." in name:
        return "conditional_attention"
    if ".ln" in name and ".gen." in name:
        return "conditional_layer_norm"
    return "encoder_core"


def parameter_report(model) -> ParameterReport:
    """Count totals plus the attention-variant size ratios by construction."""
    from .model import ConditionalAttentionSite  # local import avoids a cycle

    total = trainable = frozen = 0
    by_group = {}
    for name, p in model.parameters().items():
        n = p.size
        total += n
        if p.requires_grad:
            trainable += n
        else:
            frozen += n
        group = _group_of(name)
        by_group[group] = by_group.get(group, 0) + n

    cfg = model.config
    blockwise = ConditionalAttentionSite(cfg.seq_len, cfg.n_blocks, cfg.dim,
                                         variant="block_diagonal")
    full = ConditionalAttentionSite(cfg.seq_len, cfg.n_blocks, cfg.dim,
                                    variant="full_block")
    gen_ratio = full.generator.out_dim / blockwise.generator.out_dim
    block_entries = sum(w.base.size for w in blockwise.blocks)
    full_entries = sum(w.base.size for w in full.blocks)

    per_task = {}
    for name in model.tasks:
        n = model.task_table.embed(name).size
        n += sum(p.size for p in model.heads[name].parameters().values())
        per_task[name] = n

    return ParameterReport(
        total=total,
        trainable=trainable,
        frozen=frozen,
        by_group=dict(sorted(by_group.items())),
        per_task=per_task,
        generator_dim_ratio=float(gen_ratio),
        block_entry_ratio=float(full_entries / block_entries),
    )


def collect_activations(model, task: str, examples, limit: int = None) -> ActivationSample:
    """First-position vectors of the post-alignment inputs for `examples`."""
    rows = []
    for tokens, _ in (examples if limit is None else examples[:limit]):
        rows.append(model.alignment_output(tokens, task).data[0].copy())
    if not rows:
        raise ValueError(f"no examples to collect for task {task!r}")
    return ActivationSample(task=task, X=np.stack(rows))
