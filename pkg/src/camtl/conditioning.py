"""Task embeddings and the FiLM machinery that modulates shared weights.

Every conditional module in the encoder consumes a task embedding z and a
pair of learned affine maps gamma(z), beta(z) produced here. A modulated
weight applies phi(W | z) = gamma(z) * W + beta(z) under a declared arity
(per-element, per-row, or scalar broadcast). Identity-initialized
generators emit (1, 0) for every z, so modulation is a no-op at step 0 and
the conditioned model starts out exactly equal to its unconditioned base.
"""

import numpy as np

from .rng import derive_rng
from .tensor import ShapeError, Tensor, affine, mul, reshape, add

EMBEDDING_INIT_SCALE = 0.02

GENERATOR_INITS = ("identity", "zero", "random")
ARITIES = ("elementwise", "rowwise", "scalar")


class UnknownTaskError(KeyError):
    pass


class TaskEmbeddingTable:
    """T learnable d-dimensional task vectors, looked up by task name.

    Each row is its own leaf tensor: a training step on a batch that never
    touches task j leaves row j's gradient absent, so optimizers that skip
    absent gradients cannot move it even through stale momentum.
    """

    def __init__(self, dim: int, names=(), seed: int = 0):
        if dim < 1:
            raise ValueError(f"embedding dim must be positive, got {dim}")
        self.dim = dim
        self.seed = seed
        self._rows: dict[str, Tensor] = {}
        self._order: list[str] = []
        for name in names:
            self.extend(name, init="random")

    @property
    def names(self) -> tuple:
        return tuple(self._order)

    def __len__(self):
        return len(self._order)

    def __contains__(self, task):
        return task in self._rows

    def embed(self, task: str) -> Tensor:
        """Return the learnable row for `task`; unknown names fail loudly."""
        row = self._rows.get(task)
        if row is None:
            raise UnknownTaskError(f"unknown task {task!r}; known tasks: {self._order}")
        return row

    def extend(self, new_task: str, init: str = "random", source: str = None) -> "TaskEmbeddingTable":
        """Register one more task; existing rows are untouched.

        init: "random" (uniform in +-0.02), "zeros", or "copy" of an
        existing task's current values (useful when transferring to a new
        task whose embedding is seeded from a related one).
        """
        if new_task in self._rows:
            raise ValueError(f"task {new_task!r} is already registered")
        if init == "random":
            rng = derive_rng(self.seed, "task_embedding", new_task)
            data = rng.uniform(-EMBEDDING_INIT_SCALE, EMBEDDING_INIT_SCALE, self.dim)
        elif init == "zeros":
            data = np.zeros(self.dim)
        elif init == "copy":
            if source is None:
                raise ValueError("init='copy' needs a source task")
            src = self._rows.get(source)
            if src is None:
                raise UnknownTaskError(f"copy source {source!r} unknown; known tasks: {self._order}")
            data = src.data.copy()
        else:
            raise ValueError(f"unknown init {init!r}; expected random|zeros|copy")
        self._rows[new_task] = Tensor(data, requires_grad=True)
        self._order.append(new_task)
        return self

    def parameters(self) -> dict:
        return {f"task_emb.{name}": self._rows[name] for name in self._order}


class FiLMGenerator:
    """Two learned affine maps z -> gamma, z -> beta of output dimension p.

    init modes:
      identity - zero weights, gamma bias 1, beta bias 0: modulation is the
                 identity transform for every z.
      zero     - zero weights and biases: the modulated weight vanishes for
                 every z (used by the attention bias site, whose task matrix
                 must be exactly zero at step 0).
      random   - small random weights (tests and gradient checks).

    Explicit gamma_bias / beta_bias vectors override the mode's bias, which
    is how conditional layer normalization absorbs inherited affine
    parameters into its generator.
    """

    def __init__(self, in_dim: int, out_dim: int, init: str = "identity",
                 seed: int = 0, name: str = "film", gamma_bias=None, beta_bias=None):
        if init not in GENERATOR_INITS:
            raise ValueError(f"unknown init {init!r}; expected one of {GENERATOR_INITS}")
        if in_dim < 1 or out_dim < 1:
            raise ValueError(f"bad generator dims ({in_dim} -> {out_dim})")
        self.in_dim = in_dim
        self.out_dim = out_dim
        if init == "random":
            rng = derive_rng(seed, "film", name)
            w_gamma = rng.normal(0.0, 0.05, (out_dim, in_dim))
            w_beta = rng.normal(0.0, 0.05, (out_dim, in_dim))
        else:
            w_gamma = np.zeros((out_dim, in_dim))
            w_beta = np.zeros((out_dim, in_dim))
        b_gamma = np.zeros(out_dim) if init == "zero" else np.ones(out_dim)
        b_beta = np.zeros(out_dim)
        if gamma_bias is not None:
            b_gamma = np.asarray(gamma_bias, dtype=np.float64).copy()
        if beta_bias is not None:
            b_beta = np.asarray(beta_bias, dtype=np.float64).copy()
        if b_gamma.shape != (out_dim,) or b_beta.shape != (out_dim,):
            raise ShapeError(f"bias vectors must have shape ({out_dim},)")
        self.w_gamma = Tensor(w_gamma, requires_grad=True)
        self.b_gamma = Tensor(b_gamma, requires_grad=True)
        self.w_beta = Tensor(w_beta, requires_grad=True)
        self.b_beta = Tensor(b_beta, requires_grad=True)

    def __call__(self, z: Tensor):
        """Map a task embedding to (gamma, beta), both on the tape."""
        if z.shape != (self.in_dim,):
            raise ShapeError(f"task embedding shape {z.shape} does not match generator input ({self.in_dim},)")
        return affine(self.w_gamma, z, self.b_gamma), affine(self.w_beta, z, self.b_beta)

    def parameters(self) -> dict:
        return {
            "w_gamma": self.w_gamma,
            "b_gamma": self.b_gamma,
            "w_beta": self.w_beta,
            "b_beta": self.b_beta,
        }


def _expected_out_dim(base_shape, arity: str) -> int:
    if arity == "elementwise":
        return int(np.prod(base_shape))
    if arity == "rowwise":
        return int(base_shape[0])
    if arity == "scalar":
        return 1
    raise ValueError(f"unknown arity {arity!r}; expected one of {ARITIES}")


class ModulatedWeight:
    """A shared base weight plus the generator that conditions it per task."""

    def __init__(self, base: Tensor, generator: FiLMGenerator, arity: str,
                 trainable_base: bool = True):
        expected = _expected_out_dim(base.shape, arity)
        if generator.out_dim != expected:
            raise ShapeError(
                f"generator output dim {generator.out_dim} does not match "
                f"{arity} modulation of base shape {base.shape} (expected {expected})"
            )
        base.requires_grad = bool(trainable_base)
        self.base = base
        self.generator = generator
        self.arity = arity

    @property
    def trainable_base(self) -> bool:
        return self.base.requires_grad

    def modulate(self, z: Tensor) -> Tensor:
        """gamma(z) * base + beta(z) under the declared arity.

        With a frozen base, gradients still flow into the generator and z.
        """
        gamma, beta = self.generator(z)
        shape = self.base.shape
        if self.arity == "elementwise":
            gamma = reshape(gamma, shape)
            beta = reshape(beta, shape)
        elif self.arity == "rowwise":
            gamma = reshape(gamma, (shape[0],) + (1,) * (len(shape) - 1))
            beta = reshape(beta, (shape[0],) + (1,) * (len(shape) - 1))
        else:  # scalar
            gamma = reshape(gamma, ())
            beta = reshape(beta, ())
        return add(mul(self.base, gamma), beta)

    def parameters(self) -> dict:
        params = {"base": self.base}
        for key, value in self.generator.parameters().items():
            params[f"gen.{key}"] = value
        return params
