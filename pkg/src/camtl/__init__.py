"""Task-conditioned multi-task learning at desk scale.

A from-scratch float64 tensor core with reverse-mode differentiation, a
task-conditioned transformer encoder (conditional attention / alignment /
layer normalization / bottleneck driven by learned task embeddings), an
uncertainty-based multi-task batch sampler with random and size-
proportional baselines, covariance-similarity diagnostics, and a
config-driven training harness.
"""

__version__ = "0.1.0"
