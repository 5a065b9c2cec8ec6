"""Task-conditioned transformer encoder with per-task decoder heads.

The encoder is a standard post-norm transformer whose non-frozen layers
carry task-conditioned modules driven by a learned task embedding z:

  * conditional attention - a trainable block-diagonal bias matrix M(z)
    added to the attention scores inside the softmax, assembled from N
    square blocks that share one FiLM generator (a full-matrix variant
    exists for ablation);
  * conditional alignment - a task-modulated d x d map applied between the
    frozen embedding layer and the first transformer layer;
  * conditional layer normalization - LN whose affine scale is the
    inherited scale times gamma(z) and whose shift is beta(z), with beta's
    bias initialized to the inherited shift so step 0 equals plain LN;
  * conditional bottleneck - a task-modulated down/GELU/up residual module
    attached to the topmost layers ("base_top") or chained alongside every
    layer as a skip path summed into the final output ("large_skip").

All conditional generators start out as identity transforms (the attention
generator starts at exactly zero), so a freshly built conditioned model
computes the same function as the unconditioned transformer that shares
its base weights, for every task id.

Because the conditioned quantities depend only on (task, parameters), the
model materializes them once per task via `TaskConditioning` and shares
the resulting graph nodes across every sample in a batch; gradient
accumulation through the shared nodes is the same sum it would be with
per-sample recomputation.
"""

import math
from dataclasses import dataclass

import numpy as np

from .conditioning import FiLMGenerator, ModulatedWeight, TaskEmbeddingTable, UnknownTaskError
from .rng import derive_rng
from .tensor import (
    ShapeError,
    Tensor,
    add,
    affine,
    concat_cols,
    direct_sum,
    gelu,
    layer_stats,
    matmul,
    mul,
    narrow,
    pick_row,
    pow_const,
    reshape,
    scale,
    shift,
    softmax_lastdim,
    sub,
    transpose,
)

__all__ = [
    "ModelConfig",
    "TaskDef",
    "TaskConditioning",
    "MultiTaskModel",
    "ConditionalAttentionSite",
    "ConditionalAlignmentSite",
    "ConditionalLayerNormSite",
    "ConditionalBottleneckSite",
    "DecoderHead",
    "PlainLayerNorm",
    "direct_sum",
    "conditional_attention",
    "conditional_alignment",
    "conditional_layer_norm",
    "conditional_bottleneck",
    "head_forward",
]

PAD_ID = 0
LN_EPS = 1e-12
PAD_MASK_VALUE = -1e9
ATTENTION_BLOCK_INIT_SCALE = 0.01

ATTENTION_VARIANTS = ("block_diagonal", "full_block", "none")
BOTTLENECK_VARIANTS = ("base_top", "large_skip", "none")


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    n_blocks defaults to dim // seq_len when that divides evenly; it must
    always divide seq_len (block size seq_len/n_blocks is integral).
    frozen_layers defaults to the bottom half of the stack.
    """

    seq_len: int
    dim: int
    n_layers: int
    n_heads: int
    vocab_size: int
    n_blocks: int = None
    frozen_layers: tuple = None
    attention_variant: str = "block_diagonal"
    bottleneck_variant: str = "base_top"
    bottleneck_width: int = None
    use_alignment: bool = True
    use_cln: bool = True
    cln_train_base: bool = False

    def __post_init__(self):
        if self.seq_len < 1 or self.dim < 1 or self.n_layers < 1 or self.n_heads < 1:
            raise ValueError("seq_len, dim, n_layers and n_heads must be positive")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2 (id 0 is the pad token), got {self.vocab_size}")
        if self.dim % self.n_heads:
            raise ValueError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")
        if self.attention_variant not in ATTENTION_VARIANTS:
            raise ValueError(f"attention_variant {self.attention_variant!r} not in {ATTENTION_VARIANTS}")
        if self.bottleneck_variant not in BOTTLENECK_VARIANTS:
            raise ValueError(f"bottleneck_variant {self.bottleneck_variant!r} not in {BOTTLENECK_VARIANTS}")
        if self.n_blocks is None:
            if self.dim % self.seq_len:
                raise ValueError(
                    f"n_blocks has no default: dim {self.dim} is not divisible by seq_len "
                    f"{self.seq_len}; pass n_blocks explicitly"
                )
            self.n_blocks = self.dim // self.seq_len
        if self.n_blocks < 1:
            raise ValueError(f"n_blocks must be positive, got {self.n_blocks}")
        if self.seq_len % self.n_blocks:
            raise ValueError(f"n_blocks {self.n_blocks} does not divide seq_len {self.seq_len}")
        if self.frozen_layers is None:
            self.frozen_layers = tuple(range(self.n_layers // 2))
        else:
            self.frozen_layers = tuple(sorted(set(int(i) for i in self.frozen_layers)))
            for i in self.frozen_layers:
                if not 0 <= i < self.n_layers:
                    raise ValueError(f"frozen layer index {i} out of range for {self.n_layers} layers")
        if self.bottleneck_width is None:
            self.bottleneck_width = max(1, self.dim // 4)
        if self.bottleneck_width < 1:
            raise ValueError(f"bottleneck_width must be positive, got {self.bottleneck_width}")

    @property
    def block_size(self) -> int:
        return self.seq_len // self.n_blocks

    @property
    def ff_width(self) -> int:
        return 4 * self.dim

    def bottleneck_layers(self) -> tuple:
        """Layer indices that carry a bottleneck site under the config."""
        if self.bottleneck_variant == "none":
            return ()
        if self.bottleneck_variant == "large_skip":
            return tuple(range(self.n_layers))
        top = min(2, self.n_layers) if self.n_layers <= 4 else max(1, self.n_layers // 4)
        return tuple(range(self.n_layers - top, self.n_layers))

    def conditional(self) -> bool:
        return (
            self.use_alignment
            or self.use_cln
            or self.attention_variant != "none"
            or self.bottleneck_variant != "none"
        )

    def to_dict(self) -> dict:
        return {
            "seq_len": self.seq_len,
            "dim": self.dim,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "vocab_size": self.vocab_size,
            "n_blocks": self.n_blocks,
            "frozen_layers": list(self.frozen_layers),
            "attention_variant": self.attention_variant,
            "bottleneck_variant": self.bottleneck_variant,
            "bottleneck_width": self.bottleneck_width,
            "use_alignment": self.use_alignment,
            "use_cln": self.use_cln,
            "cln_train_base": self.cln_train_base,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "frozen_layers" in d and d["frozen_layers"] is not None:
            d["frozen_layers"] = tuple(d["frozen_layers"])
        return cls(**d)


@dataclass(frozen=True)
class TaskDef:
    """What the model needs to know about a task to build its head."""

    name: str
    kind: str  # "classification" | "regression"
    n_classes: int = None

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "classification" and (self.n_classes is None or self.n_classes < 2):
            raise ValueError(f"classification task {self.name!r} needs n_classes >= 2")


def _xavier(rng, shape):
    std = math.sqrt(2.0 / (shape[0] + shape[1]))
    return rng.normal(0.0, std, shape)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def _normalize(a: Tensor) -> Tensor:
    """(a - mean) / sqrt(variance + eps) over the feature dimension."""
    mean, var = layer_stats(a)
    if a.ndim > 1:
        keep = a.shape[:-1] + (1,)
        mean = reshape(mean, keep)
        var = reshape(var, keep)
    inv = pow_const(shift(var, LN_EPS), -0.5)
    return mul(sub(a, mean), inv)


class PlainLayerNorm:
    def __init__(self, dim: int, trainable: bool = True):
        self.gamma = Tensor(np.ones(dim), requires_grad=trainable)
        self.beta = Tensor(np.zeros(dim), requires_grad=trainable)

    def apply(self, a: Tensor) -> Tensor:
        return add(mul(_normalize(a), self.gamma), self.beta)

    def parameters(self) -> dict:
        return {"gamma": self.gamma, "beta": self.beta}


class ConditionalLayerNormSite:
    """Layer normalization whose affine transform is task-modulated.

    The inherited scale gamma' stays a separate (optionally frozen) base
    weight; the inherited shift beta' is absorbed into the generator's
    beta bias, so at step 0 the output equals plain LN with (gamma', beta')
    while the task shift stays fully trainable.
    """

    def __init__(self, dim: int, gamma_init=None, beta_init=None,
                 train_base: bool = False, seed: int = 0, name: str = "cln"):
        gamma_init = np.ones(dim) if gamma_init is None else np.asarray(gamma_init, dtype=np.float64)
        beta_init = np.zeros(dim) if beta_init is None else np.asarray(beta_init, dtype=np.float64)
        if gamma_init.shape != (dim,) or beta_init.shape != (dim,):
            raise ShapeError(f"inherited affine parameters must have shape ({dim},)")
        self.gamma_prime = Tensor(gamma_init.copy(), requires_grad=train_base)
        self.generator = FiLMGenerator(dim, dim, init="identity", seed=seed,
                                       name=name, beta_bias=beta_init)

    def condition(self, z: Tensor):
        """(task scale, task shift) for this site: (gamma' * gamma(z), beta(z))."""
        gamma, beta = self.generator(z)
        return mul(self.gamma_prime, gamma), beta

    def parameters(self) -> dict:
        params = {"gamma": self.gamma_prime}
        for key, value in self.generator.parameters().items():
            params[f"gen.{key}"] = value
        return params


def _apply_ln(a: Tensor, gamma_hat: Tensor, beta: Tensor) -> Tensor:
    return add(mul(_normalize(a), gamma_hat), beta)


def conditional_layer_norm(a: Tensor, site: ConditionalLayerNormSite, z: Tensor) -> Tensor:
    gamma_hat, beta = site.condition(z)
    return _apply_ln(a, gamma_hat, beta)


# ---------------------------------------------------------------------------
# Conditional attention
# ---------------------------------------------------------------------------


class ConditionalAttentionSite:
    """Trainable task bias M(z) for the attention scores of one layer.

    block_diagonal: N square blocks of side seq_len/N, each built from
    seq_len/N trainable row vectors, all modulated by one shared generator
    of output dimension (seq_len/N)^2 and assembled block-diagonally, so
    M(z) is exactly zero off the blocks. full_block: a single seq_len^2
    generator over one full matrix (N^2 times the generator size).
    The generator is zero-initialized: M(z) == 0 for every z at step 0.
    """

    def __init__(self, seq_len: int, n_blocks: int, embed_dim: int,
                 variant: str = "block_diagonal", seed: int = 0, name: str = "attn_bias"):
        if variant not in ("block_diagonal", "full_block"):
            raise ValueError(f"unknown attention variant {variant!r}")
        if seq_len % n_blocks:
            raise ShapeError(f"n_blocks {n_blocks} does not divide seq_len {seq_len}")
        self.seq_len = seq_len
        self.n_blocks = n_blocks
        self.embed_dim = embed_dim
        self.variant = variant
        side = seq_len if variant == "full_block" else seq_len // n_blocks
        self.generator = FiLMGenerator(embed_dim, side * side, init="zero",
                                       seed=seed, name=name)
        self.blocks = []
        count = 1 if variant == "full_block" else n_blocks
        for n in range(count):
            rng = derive_rng(seed, name, "block", n)
            rows = np.stack([rng.normal(size=side) for _ in range(side)])
            base = Tensor(ATTENTION_BLOCK_INIT_SCALE * rows, requires_grad=True)
            self.blocks.append(ModulatedWeight(base, self.generator, "elementwise"))

    def bias(self, z: Tensor) -> Tensor:
        """Assemble M(z) of shape (seq_len, seq_len)."""
        modulated = [w.modulate(z) for w in self.blocks]
        if self.variant == "full_block":
            return modulated[0]
        return direct_sum(modulated)

    def parameters(self) -> dict:
        params = {}
        for n, w in enumerate(self.blocks):
            params[f"block{n}"] = w.base
        for key, value in self.generator.parameters().items():
            params[f"gen.{key}"] = value
        return params


def _attend(q: Tensor, k: Tensor, v: Tensor, width: int, biases) -> Tensor:
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(width))
    for b in biases:
        if b is not None:
            scores = add(scores, b)
    return matmul(softmax_lastdim(scores), v)


def conditional_attention(q: Tensor, k: Tensor, v: Tensor,
                          site: ConditionalAttentionSite, z: Tensor,
                          pad_bias: Tensor = None) -> Tensor:
    """softmax(M(z) + q kT / sqrt(d)) v for one attention head."""
    if q.shape[0] != site.seq_len:
        raise ShapeError(f"sequence length {q.shape[0]} does not match site ({site.seq_len})")
    return _attend(q, k, v, site.embed_dim, (site.bias(z), pad_bias))


# ---------------------------------------------------------------------------
# Conditional alignment
# ---------------------------------------------------------------------------


class ConditionalAlignmentSite:
    """Task-modulated linear map between the embedding layer and layer 0.

    The base matrix starts as the identity and the generator as the
    identity transform, so alignment is a no-op at step 0.
    """

    def __init__(self, dim: int, seed: int = 0, name: str = "align"):
        self.dim = dim
        gen = FiLMGenerator(dim, dim, init="identity", seed=seed, name=name)
        self.weight = ModulatedWeight(Tensor(np.eye(dim), requires_grad=True), gen, "rowwise")

    def parameters(self) -> dict:
        return self.weight.parameters()


def conditional_alignment(x_emb: Tensor, site: ConditionalAlignmentSite, z: Tensor) -> Tensor:
    if x_emb.shape[-1] != site.dim:
        raise ShapeError(f"embedding width {x_emb.shape[-1]} does not match alignment dim {site.dim}")
    return matmul(x_emb, site.weight.modulate(z))


# ---------------------------------------------------------------------------
# Conditional bottleneck
# ---------------------------------------------------------------------------


@dataclass
class BottleneckCond:
    down: Tensor
    up: Tensor
    norm: tuple  # (gamma_hat, beta) or None


class ConditionalBottleneckSite:
    """Task-modulated down/GELU/up module.

    The up projection's base starts at zero so the module contributes
    nothing at step 0. base_top sites normalize their input with a
    conditional LN before the down projection and are applied residually;
    large_skip sites are the building block of the cross-layer skip path
    and apply the bare transform.
    """

    def __init__(self, dim: int, width: int, variant: str, seed: int = 0, name: str = "bottleneck"):
        if variant not in ("base_top", "large_skip"):
            raise ValueError(f"unknown bottleneck variant {variant!r}")
        self.dim = dim
        self.width = width
        self.variant = variant
        rng = derive_rng(seed, name, "down")
        down_gen = FiLMGenerator(dim, dim, init="identity", seed=seed, name=f"{name}.down")
        up_gen = FiLMGenerator(dim, width, init="identity", seed=seed, name=f"{name}.up")
        self.down = ModulatedWeight(Tensor(_xavier(rng, (dim, width)), requires_grad=True),
                                    down_gen, "rowwise")
        self.up = ModulatedWeight(Tensor(np.zeros((width, dim)), requires_grad=True),
                                  up_gen, "rowwise")
        self.norm = None
        if variant == "base_top":
            self.norm = ConditionalLayerNormSite(dim, seed=seed, name=f"{name}.norm")

    def condition(self, z: Tensor) -> BottleneckCond:
        return BottleneckCond(
            down=self.down.modulate(z),
            up=self.up.modulate(z),
            norm=self.norm.condition(z) if self.norm is not None else None,
        )

    def apply(self, h: Tensor, cond: BottleneckCond) -> Tensor:
        if self.variant == "base_top":
            x = _apply_ln(h, cond.norm[0], cond.norm[1])
            return add(h, matmul(gelu(matmul(x, cond.down)), cond.up))
        return matmul(gelu(matmul(h, cond.down)), cond.up)

    def parameters(self) -> dict:
        params = {}
        for key, value in self.down.parameters().items():
            params[f"down.{key}"] = value
        for key, value in self.up.parameters().items():
            params[f"up.{key}"] = value
        if self.norm is not None:
            for key, value in self.norm.parameters().items():
                params[f"norm.{key}"] = value
        return params


def conditional_bottleneck(h: Tensor, site: ConditionalBottleneckSite, z: Tensor,
                           variant: str = None) -> Tensor:
    """base_top: h + core(CLN(h)); large_skip: the bare core transform."""
    if variant is not None and variant != site.variant:
        raise ValueError(f"bottleneck variant mismatch: site is {site.variant!r}, caller expects {variant!r}")
    return site.apply(h, site.condition(z))


# ---------------------------------------------------------------------------
# Decoder heads
# ---------------------------------------------------------------------------


class DecoderHead:
    """Affine map from the pooled first-position vector to task outputs."""

    def __init__(self, task: str, kind: str, dim: int, n_classes: int = None):
        if kind == "classification":
            if n_classes is None or n_classes < 2:
                raise ValueError(f"classification head for {task!r} needs n_classes >= 2")
            out = n_classes
        elif kind == "regression":
            out = 1
        else:
            raise ValueError(f"unknown head kind {kind!r}")
        self.task = task
        self.kind = kind
        self.n_classes = n_classes if kind == "classification" else None
        self.dim = dim
        self.w = Tensor(np.zeros((out, dim)), requires_grad=True)
        self.b = Tensor(np.zeros(out), requires_grad=True)

    def forward(self, enc: Tensor) -> Tensor:
        return affine(self.w, pick_row(enc, 0), self.b)

    def parameters(self) -> dict:
        return {"w": self.w, "b": self.b}


def head_forward(enc: Tensor, head: DecoderHead, task: str = None) -> Tensor:
    """Run a decoder head; errors if it does not own the batch's task."""
    if task is not None and task != head.task:
        raise ValueError(f"head owns task {head.task!r} but the batch is for {task!r}")
    return head.forward(enc)


# ---------------------------------------------------------------------------
# Encoder layers and the full model
# ---------------------------------------------------------------------------


@dataclass
class TaskConditioning:
    """All task-dependent tensors for one forward batch, computed once."""

    task: str
    align: Tensor  # modulated alignment matrix or None
    m_bias: dict  # layer index -> M(z)
    ln: dict  # (layer index, 1|2) -> (gamma_hat, beta)
    bottleneck: dict  # layer index -> BottleneckCond


_UNCONDITIONED = TaskConditioning(task=None, align=None, m_bias={}, ln={}, bottleneck={})


class EncoderLayer:
    def __init__(self, cfg: ModelConfig, index: int, seed: int):
        self.index = index
        self.frozen = index in cfg.frozen_layers
        self.dim = cfg.dim
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.dim // cfg.n_heads
        trainable = not self.frozen
        d, ff = cfg.dim, cfg.ff_width

        def init(name, shape):
            if len(shape) == 2:
                data = _xavier(derive_rng(seed, f"layer{index}.{name}"), shape)
            else:
                data = np.zeros(shape)
            return Tensor(data, requires_grad=trainable)

        self.wq, self.wk, self.wv, self.wo = (init(n, (d, d)) for n in ("attn.wq", "attn.wk", "attn.wv", "attn.wo"))
        self.bq, self.bk, self.bv, self.bo = (init(n, (d,)) for n in ("attn.bq", "attn.bk", "attn.bv", "attn.bo"))
        self.w1 = init("ff.w1", (d, ff))
        self.b1 = init("ff.b1", (ff,))
        self.w2 = init("ff.w2", (ff, d))
        self.b2 = init("ff.b2", (d,))

        # conditional modules attach only to non-frozen layers
        conditional_here = not self.frozen
        if conditional_here and cfg.use_cln:
            self.ln1 = ConditionalLayerNormSite(d, train_base=cfg.cln_train_base,
                                                seed=seed, name=f"layer{index}.ln1")
            self.ln2 = ConditionalLayerNormSite(d, train_base=cfg.cln_train_base,
                                                seed=seed, name=f"layer{index}.ln2")
        else:
            self.ln1 = PlainLayerNorm(d, trainable=trainable)
            self.ln2 = PlainLayerNorm(d, trainable=trainable)
        self.attn_site = None
        if conditional_here and cfg.attention_variant != "none":
            self.attn_site = ConditionalAttentionSite(
                cfg.seq_len, cfg.n_blocks, d, variant=cfg.attention_variant,
                seed=seed, name=f"layer{index}.attn_bias",
            )

    def condition(self, z: Tensor, cond: TaskConditioning) -> None:
        if self.attn_site is not None:
            cond.m_bias[self.index] = self.attn_site.bias(z)
        if isinstance(self.ln1, ConditionalLayerNormSite):
            cond.ln[(self.index, 1)] = self.ln1.condition(z)
            cond.ln[(self.index, 2)] = self.ln2.condition(z)

    def _norm(self, which: int, a: Tensor, cond: TaskConditioning) -> Tensor:
        site = self.ln1 if which == 1 else self.ln2
        if isinstance(site, PlainLayerNorm):
            return site.apply(a)
        gamma_hat, beta = cond.ln[(self.index, which)]
        return _apply_ln(a, gamma_hat, beta)

    def forward(self, x: Tensor, cond: TaskConditioning, pad_bias) -> Tensor:
        m_bias = cond.m_bias.get(self.index)
        q = add(matmul(x, self.wq), self.bq)
        k = add(matmul(x, self.wk), self.bk)
        v = add(matmul(x, self.wv), self.bv)
        if self.n_heads == 1:
            heads = [_attend(q, k, v, self.dim, (m_bias, pad_bias))]
        else:
            heads = []
            for h in range(self.n_heads):
                lo = h * self.head_dim
                heads.append(_attend(
                    narrow(q, 1, lo, self.head_dim),
                    narrow(k, 1, lo, self.head_dim),
                    narrow(v, 1, lo, self.head_dim),
                    self.dim,
                    (m_bias, pad_bias),
                ))
        attn = add(matmul(concat_cols(heads) if len(heads) > 1 else heads[0], self.wo), self.bo)
        h1 = self._norm(1, add(x, attn), cond)
        ff = add(matmul(gelu(add(matmul(h1, self.w1), self.b1)), self.w2), self.b2)
        return self._norm(2, add(h1, ff), cond)

    def parameters(self) -> dict:
        prefix = f"layer{self.index}."
        params = {
            prefix + "attn.wq": self.wq, prefix + "attn.wk": self.wk,
            prefix + "attn.wv": self.wv, prefix + "attn.wo": self.wo,
            prefix + "attn.bq": self.bq, prefix + "attn.bk": self.bk,
            prefix + "attn.bv": self.bv, prefix + "attn.bo": self.bo,
            prefix + "ff.w1": self.w1, prefix + "ff.b1": self.b1,
            prefix + "ff.w2": self.w2, prefix + "ff.b2": self.b2,
        }
        for i, ln in ((1, self.ln1), (2, self.ln2)):
            for key, value in ln.parameters().items():
                params[f"{prefix}ln{i}.{key}"] = value
        if self.attn_site is not None:
            for key, value in self.attn_site.parameters().items():
                params[f"{prefix}attn_bias.{key}"] = value
        return params


class MultiTaskModel:
    """Frozen embedding layer, encoder stack, task table, per-task heads."""

    def __init__(self, config: ModelConfig, tasks, seed: int = 0):
        self.config = config
        self.seed = seed
        d, L, V = config.dim, config.seq_len, config.vocab_size
        self.tok_emb = Tensor(derive_rng(seed, "embed.tok").normal(size=(V, d)))
        self.pos_emb = Tensor(derive_rng(seed, "embed.pos").normal(size=(L, d)))
        self.task_table = TaskEmbeddingTable(d, seed=seed)
        self.alignment = ConditionalAlignmentSite(d, seed=seed) if config.use_alignment else None
        self.layers = [EncoderLayer(config, i, seed) for i in range(config.n_layers)]
        self.bottlenecks = {}
        for i in config.bottleneck_layers():
            self.bottlenecks[i] = ConditionalBottleneckSite(
                d, config.bottleneck_width, config.bottleneck_variant,
                seed=seed, name=f"bottleneck{i}",
            )
        self.heads: dict[str, DecoderHead] = {}
        for t in tasks:
            self.add_task(t.name, t.kind, t.n_classes)

    # -- tasks -------------------------------------------------------------
    @property
    def tasks(self) -> tuple:
        return self.task_table.names

    def add_task(self, name: str, kind: str, n_classes: int = None,
                 embedding_init: str = "random", source: str = None) -> None:
        """Register a new task: one embedding row plus one decoder head."""
        if name in self.heads:
            raise ValueError(f"task {name!r} is already registered")
        self.task_table.extend(name, init=embedding_init, source=source)
        self.heads[name] = DecoderHead(name, kind, self.config.dim, n_classes)

    # -- conditioning --------------------------------------------------------
    def condition(self, task: str) -> TaskConditioning:
        """Materialize every task-dependent tensor for one forward batch."""
        self._check_task(task)
        if not self.config.conditional():
            return _UNCONDITIONED
        z = self.task_table.embed(task)
        cond = TaskConditioning(task=task, align=None, m_bias={}, ln={}, bottleneck={})
        if self.alignment is not None:
            cond.align = self.alignment.weight.modulate(z)
        for layer in self.layers:
            layer.condition(z, cond)
        for i, site in self.bottlenecks.items():
            cond.bottleneck[i] = site.condition(z)
        return cond

    # -- forward -----------------------------------------------------------
    def _check_task(self, task: str):
        if task not in self.heads:
            raise UnknownTaskError(f"unknown task {task!r}; known tasks: {list(self.tasks)}")

    def _prepare_tokens(self, tokens) -> np.ndarray:
        ids = np.asarray(list(tokens)[: self.config.seq_len], dtype=np.int64)
        if ids.size < self.config.seq_len:
            ids = np.concatenate([ids, np.full(self.config.seq_len - ids.size, PAD_ID, dtype=np.int64)])
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError(f"token ids out of range [0, {self.config.vocab_size})")
        return ids

    def _embed_tokens(self, ids: np.ndarray) -> Tensor:
        # the embedding layer (token + position) is always frozen
        return Tensor(self.tok_emb.data[ids] + self.pos_emb.data)

    def _pad_bias(self, ids: np.ndarray):
        if not (ids == PAD_ID).any():
            return None
        bias = np.zeros((self.config.seq_len, self.config.seq_len))
        bias[:, ids == PAD_ID] = PAD_MASK_VALUE
        return Tensor(bias)

    def _encode(self, tokens, cond: TaskConditioning) -> Tensor:
        ids = self._prepare_tokens(tokens)
        x = self._embed_tokens(ids)
        pad_bias = self._pad_bias(ids)
        if cond.align is not None:
            x = matmul(x, cond.align)
        skip = None
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, cond, pad_bias)
            site = self.bottlenecks.get(i)
            if site is None:
                continue
            if site.variant == "base_top":
                x = site.apply(x, cond.bottleneck[i])
            else:
                skip_in = x if skip is None else add(x, skip)
                skip = site.apply(skip_in, cond.bottleneck[i])
        if skip is not None:
            x = add(x, skip)
        return x

    def alignment_output(self, tokens, task: str) -> Tensor:
        """Inputs to the first transformer layer (post-alignment)."""
        cond = self.condition(task)
        x = self._embed_tokens(self._prepare_tokens(tokens))
        if cond.align is not None:
            x = matmul(x, cond.align)
        return x

    def encoder_forward(self, tokens, task: str) -> Tensor:
        return self._encode(tokens, self.condition(task))

    def forward(self, tokens, task: str) -> Tensor:
        """Encoder plus the task's decoder head: logits or a 1-vector."""
        cond = self.condition(task)
        return head_forward(self._encode(tokens, cond), self.heads[task], task)

    def forward_many(self, token_seqs, task: str) -> list:
        """Head outputs for several sequences of one task.

        The task conditioning is materialized once and shared by every
        sequence (identical math to per-sample recomputation).
        """
        cond = self.condition(task)
        head = self.heads[task]
        return [head.forward(self._encode(seq, cond)) for seq in token_seqs]

    # -- parameters ----------------------------------------------------------
    def parameters(self) -> dict:
        params = {"embed.tok": self.tok_emb, "embed.pos": self.pos_emb}
        params.update(self.task_table.parameters())
        if self.alignment is not None:
            for key, value in self.alignment.parameters().items():
                params[f"align.{key}"] = value
        for layer in self.layers:
            params.update(layer.parameters())
        for i in sorted(self.bottlenecks):
            for key, value in self.bottlenecks[i].parameters().items():
                params[f"bottleneck{i}.{key}"] = value
        for name in self.tasks:
            for key, value in self.heads[name].parameters().items():
                params[f"head.{name}.{key}"] = value
        return params

    def trainable_parameters(self) -> dict:
        return {k: v for k, v in self.parameters().items() if v.requires_grad}

    def frozen_parameter_names(self) -> tuple:
        return tuple(k for k, v in self.parameters().items() if not v.requires_grad)
