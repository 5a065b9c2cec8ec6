"""Pinned experiment configurations used by the scripts and acceptance suite.

The forgetting experiment pits a small noisy task against a large hard
task: under per-slot random sampling the small task is revisited for the
whole run and overfits its label noise (dev accuracy peaks, then decays),
while uncertainty-driven selection stops drawing it once its candidates
are confidently fit. The module-ablation experiment trains one four-task
suite twice, with the conditional modules enabled and disabled, and
compares cross-task score dispersion.
"""

from .config import ExperimentConfig, OptimizerConfig, SyntheticSource, TaskSpec
from .model import ModelConfig


def plain_model(seq_len=8, dim=16, n_layers=2, n_heads=2, vocab_size=16, n_blocks=2):
    """Transformer without any task-conditioned module (baseline)."""
    return ModelConfig(
        seq_len=seq_len, dim=dim, n_layers=n_layers, n_heads=n_heads,
        vocab_size=vocab_size, n_blocks=n_blocks,
        attention_variant="none", bottleneck_variant="none",
        use_alignment=False, use_cln=False,
    )


def conditioned_model(seq_len=8, dim=16, n_layers=2, n_heads=2, vocab_size=16, n_blocks=2):
    """Full task-conditioned configuration."""
    return ModelConfig(
        seq_len=seq_len, dim=dim, n_layers=n_layers, n_heads=n_heads,
        vocab_size=vocab_size, n_blocks=n_blocks,
        attention_variant="block_diagonal", bottleneck_variant="base_top",
        use_alignment=True, use_cln=True,
    )


def forgetting_config(sampler: str, out_dir: str, seed: int = 12,
                      steps: int = 2000) -> ExperimentConfig:
    """Small noisy task (500 examples) vs large hard task (20000 examples).

    The model carries no conditional modules, so the two tasks share every
    encoder weight and only the sampler differs between runs. The small
    task is easy (single-token presence) but 15% of its labels are
    resampled noise; revisiting it long after it is fit just memorizes
    that noise, which is the dev-score decay the uncertainty policy avoids.
    """
    return ExperimentConfig(
        model=plain_model(dim=32, n_heads=4),
        tasks=[
            TaskSpec("small", "classification",
                     SyntheticSource("pattern_presence", size=500, seed=101,
                                     vocab_size=16, motif_len=1, noise=0.15,
                                     dev_size=600),
                     n_classes=2),
            TaskSpec("big", "classification",
                     SyntheticSource("majority", size=20000, seed=202,
                                     vocab_size=16, motif_len=2, noise=0.05,
                                     dev_size=600),
                     n_classes=2),
        ],
        steps=steps, out_dir=out_dir, sampler=sampler,
        optimizer=OptimizerConfig(lr=3e-3), batch_size=32, seed=seed,
        eval_every=100,
    )


def ablation_tasks():
    return [
        TaskSpec("detect2", "classification",
                 SyntheticSource("pattern_presence", size=2000, seed=11, vocab_size=16,
                                 motif_len=2, dev_size=300), n_classes=2),
        TaskSpec("detect3", "classification",
                 SyntheticSource("pattern_presence", size=2000, seed=22, vocab_size=16,
                                 motif_len=3, dev_size=300), n_classes=2),
        TaskSpec("majority", "classification",
                 SyntheticSource("majority", size=2000, seed=33, vocab_size=16,
                                 motif_len=2, dev_size=300), n_classes=2),
        TaskSpec("parity", "classification",
                 SyntheticSource("parity", size=2000, seed=44, vocab_size=16,
                                 motif_len=1, dev_size=300), n_classes=2),
    ]


def ablation_config(conditional: bool, out_dir: str, seed: int = 12,
                    steps: int = 3000) -> ExperimentConfig:
    """Four-task suite, identical data and sampler; modules on or off."""
    model = conditioned_model() if conditional else plain_model()
    return ExperimentConfig(
        model=model,
        tasks=ablation_tasks(),
        steps=steps, out_dir=out_dir, sampler="random",
        optimizer=OptimizerConfig(lr=2e-3), batch_size=32, seed=seed,
        eval_every=100,
    )
