"""Synthetic multi-task datasets and TSV ingestion.

Synthetic generators stand in for real text classification corpora. Each
produces (token-id sequence, label) pairs deterministically from its seed,
with difficulty knobs for vocabulary size, motif length, and label noise.
Token id 0 is reserved for padding; real tokens live in [1, vocab_size).

Label noise resamples the label uniformly over the classes with the given
probability, so the best achievable accuracy on a C-class task is
1 - noise * (1 - 1/C).
"""

import hashlib
from dataclasses import dataclass

from .config import SyntheticSource, TaskSpec, TsvSource
from .rng import derive_rng

PAD_ID = 0


@dataclass
class Dataset:
    name: str
    examples: list  # training (tokens tuple, label) pairs
    dev: list
    n_classes: int = None
    label_range: tuple = None
    vocab_size: int = 0

    def __len__(self):
        return len(self.examples)


def _contains_motif(tokens, motif) -> bool:
    m = len(motif)
    return any(tokens[i:i + m] == motif for i in range(len(tokens) - m + 1))


def _count_motif(tokens, motif) -> int:
    m = len(motif)
    return sum(1 for i in range(len(tokens) - m + 1) if tokens[i:i + m] == motif)


def _implant(tokens, motif, rng):
    pos = int(rng.integers(0, len(tokens) - len(motif) + 1))
    tokens[pos:pos + len(motif)] = motif
    return tokens


def _noisy_class_label(label, n_classes, noise, rng):
    if noise > 0.0 and rng.uniform() < noise:
        return int(rng.integers(0, n_classes))
    return int(label)


def _make_examples(spec: TaskSpec, seq_len: int, count: int, rng, motif):
    src = spec.source
    vocab = src.vocab_size
    high_start = 1 + (vocab - 1) // 2
    out = []
    for _ in range(count):
        tokens = list(rng.integers(1, vocab, size=seq_len))
        gen = src.generator
        if gen == "pattern_presence":
            if rng.uniform() < 0.5:
                tokens = _implant(tokens, motif, rng)
            label = int(_contains_motif(tokens, motif))
            label = _noisy_class_label(label, spec.n_classes, src.noise, rng)
        elif gen == "majority":
            for _ in range(int(rng.integers(0, 3))):
                tokens = _implant(tokens, motif, rng)
            high = sum(1 for t in tokens if t >= high_start)
            label = int(high > seq_len - high)
            label = _noisy_class_label(label, spec.n_classes, src.noise, rng)
        elif gen == "parity":
            for _ in range(int(rng.integers(0, 4))):
                tokens = _implant(tokens, motif, rng)
            label = _count_motif(tokens, motif) % 2
            label = _noisy_class_label(label, spec.n_classes, src.noise, rng)
        elif gen == "regression_score":
            lo, hi = spec.label_range
            value = lo + (hi - lo) * sum(1 for t in tokens if t >= high_start) / seq_len
            if src.noise > 0.0 and rng.uniform() < src.noise:
                value = float(rng.uniform(lo, hi))
            label = float(value)
        else:
            raise ValueError(f"unknown generator {gen!r}")
        out.append((tuple(int(t) for t in tokens), label))
    return out


def generate_synthetic_task(spec: TaskSpec, seq_len: int, min_size: int = None) -> Dataset:
    """Deterministic train and dev splits for a synthetic task spec."""
    src = spec.source
    if not isinstance(src, SyntheticSource):
        raise TypeError(f"task {spec.name!r} does not have a synthetic source")
    if min_size is not None and src.size < min_size:
        raise ValueError(f"task {spec.name!r}: size {src.size} < required minimum {min_size}")
    if seq_len < src.motif_len:
        raise ValueError(f"task {spec.name!r}: motif_len {src.motif_len} exceeds sequence length {seq_len}")
    motif_rng = derive_rng(src.seed, "motif")
    motif = [int(t) for t in motif_rng.integers(1, src.vocab_size, size=src.motif_len)]
    train = _make_examples(spec, seq_len, src.size, derive_rng(src.seed, "train"), motif)
    dev = _make_examples(spec, seq_len, src.dev_size, derive_rng(src.seed, "dev"), motif)
    return Dataset(
        name=spec.name, examples=train, dev=dev, n_classes=spec.n_classes,
        label_range=spec.label_range if spec.kind == "regression" else None,
        vocab_size=src.vocab_size,
    )


def presence_baseline_accuracy(dataset: Dataset, motif) -> float:
    """Accuracy of the trivial scan-for-motif classifier (test oracle)."""
    hits = sum(
        1 for tokens, label in dataset.examples
        if int(_contains_motif(list(tokens), list(motif))) == label
    )
    return hits / len(dataset.examples)


def task_motif(spec: TaskSpec) -> list:
    src = spec.source
    rng = derive_rng(src.seed, "motif")
    return [int(t) for t in rng.integers(1, src.vocab_size, size=src.motif_len)]


# ---------------------------------------------------------------------------
# TSV ingestion
# ---------------------------------------------------------------------------


class TsvFormatError(ValueError):
    pass


def _hash_token_id(token: str, seed: int, vocab_size: int) -> int:
    digest = hashlib.blake2b(f"{seed}:{token}".encode("utf-8"), digest_size=8).digest()
    return 1 + int.from_bytes(digest, "little") % (vocab_size - 1)


def ingest_tsv(path: str, spec: TaskSpec, seq_len: int) -> Dataset:
    """Read a two-column (text, label) TSV into a padded token dataset.

    Whitespace tokenization; tokens get run-scoped ids in first-seen order
    until the vocabulary is full, then fall back to a stable hash bucket.
    The dev split is the training file itself (desk-scale stand-in).
    """
    src = spec.source
    if not isinstance(src, TsvSource):
        raise TypeError(f"task {spec.name!r} does not have a TSV source")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TsvFormatError(f"{path}: empty file")
    header = lines[0].split("\t")
    if [h.strip() for h in header] != ["text", "label"]:
        raise TsvFormatError(f"{path}: line 1: header must be 'text<TAB>label', got {lines[0]!r}")
    if len(lines) < 2:
        raise TsvFormatError(f"{path}: no data rows after the header")

    vocab: dict[str, int] = {}
    capacity = src.vocab_size - 1  # id 0 is the pad token

    def token_id(token: str) -> int:
        if token in vocab:
            return vocab[token]
        if len(vocab) < capacity:
            vocab[token] = len(vocab) + 1
            return vocab[token]
        return _hash_token_id(token, src.vocab_seed, src.vocab_size)

    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 2:
            raise TsvFormatError(f"{path}: line {lineno}: expected 2 tab-separated columns, got {len(parts)}")
        text, label = parts[0], parts[1].strip()
        if not label:
            raise TsvFormatError(f"{path}: line {lineno}: missing label")
        ids = [token_id(tok) for tok in text.split()][:seq_len]
        ids += [PAD_ID] * (seq_len - len(ids))
        rows.append((tuple(ids), label, lineno))

    examples = []
    if spec.kind == "regression":
        for ids, label, lineno in rows:
            try:
                examples.append((ids, float(label)))
            except ValueError:
                raise TsvFormatError(f"{path}: line {lineno}: label {label!r} is not a number") from None
    else:
        raw = [label for _, label, _ in rows]
        try:
            numeric = [int(v) for v in raw]
        except ValueError:
            numeric = None
        if numeric is not None and all(0 <= v < spec.n_classes for v in numeric):
            mapping = None
        else:
            classes = sorted(set(raw))
            if len(classes) > spec.n_classes:
                raise TsvFormatError(
                    f"{path}: found {len(classes)} distinct labels but task declares "
                    f"{spec.n_classes} classes"
                )
            mapping = {label: i for i, label in enumerate(classes)}
        for i, (ids, label, _) in enumerate(rows):
            examples.append((ids, numeric[i] if mapping is None else mapping[label]))

    return Dataset(
        name=spec.name, examples=examples, dev=list(examples),
        n_classes=spec.n_classes,
        label_range=spec.label_range if spec.kind == "regression" else None,
        vocab_size=src.vocab_size,
    )


def build_dataset(spec: TaskSpec, seq_len: int, min_size: int = None) -> Dataset:
    if isinstance(spec.source, SyntheticSource):
        return generate_synthetic_task(spec, seq_len, min_size=min_size)
    return ingest_tsv(spec.source.path, spec, seq_len)
