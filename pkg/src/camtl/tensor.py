"""float64 tensors with a tape-based reverse-mode gradient engine.

Forward passes are built from the ops below. Whenever an op touches a
tensor that requires gradients *and* a `Tape` is active on the current
thread, the op appends a backward rule to that tape. Without an active
tape, ops run as plain numpy (inference mode) and their outputs are
detached from any graph.

The kernel surface is deliberately small and auditable: strict 2-D matmul,
a fused affine map, elementwise arithmetic with trailing-dimension
broadcasting, last-axis softmax / log-softmax, GELU, structural ops
(reshape, transpose, narrow, concatenation, block-diagonal assembly) and
reductions. Gradient accumulation happens in reverse execution order with
left-to-right summation over each rule's inputs, so repeated runs are
bit-identical.
"""

import math
import threading

import numpy as np

# When True, every constructed or computed tensor is checked for NaN/Inf.
# Off by default: it is a debug assertion, not part of the hot path.
CHECK_FINITE = False

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_CUBIC = 0.044715


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class OracleError(RuntimeError):
    """A test oracle's precondition was violated (e.g. nondeterministic f)."""


class Tensor:
    """Dense float64 array, optionally participating in gradient taping.

    Tensors are immutable after construction except for gradient
    accumulation during a backward pass (and in-place parameter updates by
    an optimizer, which must happen outside any live graph).
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = None  # name of the producing op; None for leaves
        self.tape = None  # Tape that recorded the producing op, if any
        if CHECK_FINITE:
            assert_finite(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # Operator sugar; scalars go through the cheaper const ops.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    def __radd__(self, other):
        return shift(self, float(other))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not part of the kernel surface")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def assert_finite(t: Tensor) -> None:
    if not np.isfinite(t.data).all():
        raise ValueError(f"non-finite values in tensor (op={t.op!r})")


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

_LOCAL = threading.local()


def _stack():
    s = getattr(_LOCAL, "tapes", None)
    if s is None:
        s = []
        _LOCAL.tapes = s
    return s


def active_tape():
    s = getattr(_LOCAL, "tapes", None)
    return s[-1] if s else None


class Tape:
    """Execution-ordered record of one forward graph.

    Entries are appended in op execution order, which is a topological
    order by construction (an op's inputs exist before it runs). A tape
    supports exactly one backward pass; re-entry is an error. Tapes are
    thread-confined: each thread sees only the tapes it opened.
    """

    __slots__ = ("entries", "consumed", "_open")

    def __init__(self):
        self.entries = []  # (output tensor, backward rule) pairs
        self.consumed = False
        self._open = False

    def __enter__(self):
        if self._open:
            raise TapeError("tape is already active")
        if self.consumed:
            raise TapeError("tape was already consumed by a backward pass")
        self._open = True
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        self._open = False
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise TapeError("tape stack corrupted: exiting a non-innermost tape")
        stack.pop()
        return False

    def __len__(self):
        return len(self.entries)


def _result(data, op, rg, rule):
    """Wrap an op output; record `rule` when rg and a tape is active."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if rg:
        s = getattr(_LOCAL, "tapes", None)
        if s:
            tape = s[-1]
            out.requires_grad = True
            out.tape = tape
            tape.entries.append((out, rule))
            if CHECK_FINITE:
                assert_finite(out)
            return out
    out.requires_grad = False
    out.tape = None
    if CHECK_FINITE:
        assert_finite(out)
    return out


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        # Copy: g may alias the upstream gradient or another tensor's grad.
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(t: Tensor, tape: Tape = None) -> None:
    """Populate grads of every requires_grad tensor reachable from scalar t.

    Gradients accumulate additively across fan-out. One backward pass per
    tape; a second call on the same tape raises.
    """
    if t.data.size != 1:
        raise TapeError(f"backward requires a scalar, got shape {t.data.shape}")
    if t.op is not None and t.tape is None:
        raise TapeError("backward on a detached tensor (computed outside any tape)")
    if tape is not None and t.tape is not None and tape is not t.tape:
        raise TapeError("tensor was not recorded on the given tape")
    target = t.tape if t.tape is not None else tape

    if target is None:
        # Leaf scalar: the graph is the identity chain y = t.
        if t.requires_grad:
            _accum(t, np.ones_like(t.data))
        return

    if target.consumed:
        raise TapeError("tape was already consumed by a backward pass")
    target.consumed = True

    t.grad = np.ones_like(t.data)
    for out, rule in reversed(target.entries):
        g = out.grad
        if g is not None:
            rule(g)


# --------------------------------------------------------------------------
# Broadcast helper
# --------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------
# Elementwise arithmetic
# --------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def rule(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(a.data + b.data, "add", a.requires_grad or b.requires_grad, rule)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def rule(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _result(a.data - b.data, "sub", a.requires_grad or b.requires_grad, rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def rule(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(a.data * b.data, "mul", a.requires_grad or b.requires_grad, rule)


def neg(t: Tensor) -> Tensor:
    def rule(g):
        _accum(t, -g)

    return _result(-t.data, "neg", t.requires_grad, rule)


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)

    def rule(g):
        _accum(t, g * c)

    return _result(t.data * c, "scale", t.requires_grad, rule)


def shift(t: Tensor, c: float) -> Tensor:
    def rule(g):
        _accum(t, g)

    return _result(t.data + float(c), "shift", t.requires_grad, rule)


def exp(t: Tensor) -> Tensor:
    out_data = np.exp(t.data)

    def rule(g):
        _accum(t, g * out_data)

    return _result(out_data, "exp", t.requires_grad, rule)


def log(t: Tensor) -> Tensor:
    def rule(g):
        _accum(t, g / t.data)

    return _result(np.log(t.data), "log", t.requires_grad, rule)


def pow_const(t: Tensor, p: float) -> Tensor:
    p = float(p)

    def rule(g):
        _accum(t, g * p * t.data ** (p - 1.0))

    return _result(t.data ** p, "pow_const", t.requires_grad, rule)


def gelu(t: Tensor) -> Tensor:
    """Smooth GELU (tanh form); backward uses the exact derivative of it."""
    x = t.data
    u = _SQRT_2_OVER_PI * (x + _GELU_CUBIC * x ** 3)
    th = np.tanh(u)
    data = 0.5 * x * (1.0 + th)

    def rule(g):
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_CUBIC * x ** 2)
        _accum(t, g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th ** 2) * du))

    return _result(data, "gelu", t.requires_grad, rule)


# --------------------------------------------------------------------------
# Matrix / structural ops
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-D matrix product; backward is dA = g Bᵀ, dB = Aᵀ g."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")

    def rule(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(a.data @ b.data, "matmul", a.requires_grad or b.requires_grad, rule)


def affine(w: Tensor, x: Tensor, b: Tensor) -> Tensor:
    """Fused w @ x + b for a 1-D x; the workhorse of generators and heads."""
    if w.data.ndim != 2 or x.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"affine needs (2-D, 1-D, 1-D), got {w.data.shape}, {x.data.shape}, {b.data.shape}")
    if w.data.shape[1] != x.data.shape[0] or w.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"affine shapes disagree: {w.data.shape} @ {x.data.shape} + {b.data.shape}")

    def rule(g):
        _accum(w, np.outer(g, x.data))
        _accum(x, w.data.T @ g)
        _accum(b, g)

    rg = w.requires_grad or x.requires_grad or b.requires_grad
    return _result(w.data @ x.data + b.data, "affine", rg, rule)


def transpose(t: Tensor) -> Tensor:
    if t.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {t.data.shape}")

    def rule(g):
        _accum(t, g.T)

    return _result(np.ascontiguousarray(t.data.T), "transpose", t.requires_grad, rule)


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def rule(g):
        _accum(t, g.reshape(t.data.shape))

    return _result(t.data.reshape(shape), "reshape", t.requires_grad, rule)


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis of a 2-D tensor."""
    if t.data.ndim != 2:
        raise ShapeError(f"narrow needs a 2-D tensor, got {t.data.shape}")
    if axis not in (0, 1):
        raise ShapeError(f"narrow axis must be 0 or 1, got {axis}")
    stop = start + length
    if start < 0 or stop > t.data.shape[axis]:
        raise ShapeError(f"narrow [{start}:{stop}] out of range for axis {axis} of {t.data.shape}")
    index = (slice(start, stop), slice(None)) if axis == 0 else (slice(None), slice(start, stop))

    def rule(g):
        full = np.zeros_like(t.data)
        full[index] = g
        _accum(t, full)

    return _result(np.ascontiguousarray(t.data[index]), "narrow", t.requires_grad, rule)


def pick_row(t: Tensor, i: int) -> Tensor:
    if t.data.ndim != 2:
        raise ShapeError(f"pick_row needs a 2-D tensor, got {t.data.shape}")
    if not 0 <= i < t.data.shape[0]:
        raise ShapeError(f"row {i} out of range for {t.data.shape}")

    def rule(g):
        full = np.zeros_like(t.data)
        full[i] = g
        _accum(t, full)

    return _result(t.data[i].copy(), "pick_row", t.requires_grad, rule)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols of an empty list")
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise ShapeError(f"concat_cols row mismatch: {[p.data.shape for p in parts]}")
    widths = [p.data.shape[1] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=1)

    def rule(g):
        offset = 0
        for p, w in zip(parts, widths):
            _accum(p, g[:, offset:offset + w])
            offset += w

    return _result(data, "concat_cols", any(p.requires_grad for p in parts), rule)


def direct_sum(blocks) -> Tensor:
    """Block-diagonal assembly of square matrices; off-block entries are 0.0."""
    blocks = list(blocks)
    if not blocks:
        raise ShapeError("direct_sum of an empty block list")
    sides = []
    for b in blocks:
        if b.data.ndim != 2 or b.data.shape[0] != b.data.shape[1]:
            raise ShapeError(f"direct_sum blocks must be square, got {b.data.shape}")
        sides.append(b.data.shape[0])
    total = sum(sides)
    data = np.zeros((total, total), dtype=np.float64)
    offsets = []
    pos = 0
    for b, n in zip(blocks, sides):
        data[pos:pos + n, pos:pos + n] = b.data
        offsets.append(pos)
        pos += n

    def rule(g):
        for b, n, o in zip(blocks, sides, offsets):
            _accum(b, g[o:o + n, o:o + n])

    return _result(data, "direct_sum", any(b.requires_grad for b in blocks), rule)


# --------------------------------------------------------------------------
# Reductions
# --------------------------------------------------------------------------


def sum_all(t: Tensor) -> Tensor:
    def rule(g):
        _accum(t, np.broadcast_to(g, t.data.shape))

    return _result(np.asarray(t.data.sum()), "sum_all", t.requires_grad, rule)


def sum_lastdim(t: Tensor) -> Tensor:
    if t.data.ndim == 0:
        raise ShapeError("sum_lastdim needs at least one axis")

    def rule(g):
        _accum(t, np.broadcast_to(np.expand_dims(g, -1), t.data.shape))

    return _result(t.data.sum(axis=-1), "sum_lastdim", t.requires_grad, rule)


def mean_all(t: Tensor) -> Tensor:
    return scale(sum_all(t), 1.0 / t.data.size)


def layer_stats(t: Tensor):
    """Mean and population variance over the feature (last) dimension.

    Returns per-position tensors of shape t.shape[:-1]; both stay on the
    tape. Variance uses denominator d.
    """
    if t.data.ndim == 0 or t.data.shape[-1] < 1:
        raise ShapeError(f"layer_stats needs a non-empty feature dimension, got {t.data.shape}")
    d = t.data.shape[-1]
    mean = scale(sum_lastdim(t), 1.0 / d)
    if t.data.ndim > 1:
        mean_keep = reshape(mean, t.data.shape[:-1] + (1,))
    else:
        mean_keep = mean
    centered = sub(t, mean_keep)
    variance = scale(sum_lastdim(mul(centered, centered)), 1.0 / d)
    return mean, variance


# --------------------------------------------------------------------------
# Softmax family
# --------------------------------------------------------------------------


def softmax_lastdim(t: Tensor) -> Tensor:
    """Stable softmax over the last axis (max-subtraction)."""
    if t.data.ndim == 0 or t.data.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last dimension, got {t.data.shape}")
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        _accum(t, out_data * (g - inner))

    return _result(out_data, "softmax_lastdim", t.requires_grad, rule)


def log_softmax_lastdim(t: Tensor) -> Tensor:
    if t.data.ndim == 0 or t.data.shape[-1] < 1:
        raise ShapeError(f"log_softmax needs a non-empty last dimension, got {t.data.shape}")
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - log_norm

    def rule(g):
        p = np.exp(out_data)
        _accum(t, g - p * g.sum(axis=-1, keepdims=True))

    return _result(out_data, "log_softmax_lastdim", t.requires_grad, rule)


# --------------------------------------------------------------------------
# Gradient checking oracle
# --------------------------------------------------------------------------


def finite_diff_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f must be a deterministic scalar-valued function of x; determinism is
    probed by evaluating twice and comparing bitwise. The relative error
    per coordinate is |analytic - fd| / (|fd| + 1e-8).
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    if not x.requires_grad:
        raise ValueError("finite_diff_check needs x.requires_grad=True")

    def evaluate():
        return f(x).item()

    if evaluate() != evaluate():
        raise OracleError("f is not deterministic under repeated evaluation")

    saved = x.grad
    x.grad = None
    with Tape() as tape:
        y = f(x)
    backward(y, tape)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = saved

    flat = x.data.reshape(-1)
    fd = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        y_plus = evaluate()
        flat[i] = orig - step
        y_minus = evaluate()
        flat[i] = orig
        fd[i] = (y_plus - y_minus) / (2.0 * step)

    rel = np.abs(analytic.reshape(-1) - fd) / (np.abs(fd) + 1e-8)
    return float(rel.max()) if rel.size else 0.0
