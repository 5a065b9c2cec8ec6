"""Adaptive-moment optimizer with linear warmup / linear decay.

Parameters whose gradient is absent are skipped entirely (no moment decay,
no update), which is what keeps untouched task embeddings and heads
bitwise constant across steps that never see their task.
"""

import numpy as np

from .config import OptimizerConfig


def lr_at(step: int, total_steps: int, base_lr: float, warmup_frac: float) -> float:
    """Linear ramp over the first warmup fraction, then linear decay to 0."""
    if total_steps <= 0:
        return base_lr
    warmup = int(round(total_steps * warmup_frac))
    if warmup > 0 and step < warmup:
        return base_lr * (step + 1) / warmup
    if total_steps == warmup:
        return base_lr
    remaining = (total_steps - step) / (total_steps - warmup)
    return base_lr * max(0.0, remaining)


class Adam:
    def __init__(self, params: dict, config: OptimizerConfig, total_steps: int):
        self.params = dict(sorted(params.items()))
        self.config = config
        self.total_steps = total_steps
        self._m = {}
        self._v = {}
        self._t = {}

    def step(self, step_index: int) -> float:
        """Apply one update; returns the learning rate used."""
        cfg = self.config
        lr = lr_at(step_index, self.total_steps, cfg.lr, cfg.warmup_frac)
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            t = self._t.get(name, 0) + 1
            self._t[name] = t
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self._m[name] = m
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / (1.0 - cfg.beta1 ** t)
            v_hat = v / (1.0 - cfg.beta2 ** t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return lr

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
