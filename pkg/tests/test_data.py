"""Synthetic generators and TSV ingestion."""

import math

import pytest

from camtl.config import SyntheticSource, TaskSpec, TsvSource
from camtl.data import (
    Dataset,
    TsvFormatError,
    build_dataset,
    generate_synthetic_task,
    ingest_tsv,
    presence_baseline_accuracy,
    task_motif,
)


def synth_spec(name="t", generator="pattern_presence", size=200, seed=3, noise=0.0,
               vocab_size=16, motif_len=3, dev_size=100, kind="classification"):
    source = SyntheticSource(generator, size=size, seed=seed, vocab_size=vocab_size,
                             motif_len=motif_len, noise=noise, dev_size=dev_size)
    if kind == "classification":
        return TaskSpec(name, "classification", source, n_classes=2)
    return TaskSpec(name, "regression", source)


def test_noiseless_presence_is_solved_by_scan_baseline():
    spec = synth_spec(noise=0.0)
    ds = generate_synthetic_task(spec, seq_len=10)
    assert presence_baseline_accuracy(ds, task_motif(spec)) == 1.0


def test_label_noise_bounds_the_best_accuracy():
    # noise 0.5 on a binary task: the perfect classifier scores ~75%
    spec = synth_spec(size=4000, noise=0.5, seed=9)
    ds = generate_synthetic_task(spec, seq_len=10)
    acc = presence_baseline_accuracy(ds, task_motif(spec))
    bound = 1.0 - 0.5 * (1.0 - 0.5)
    sigma = math.sqrt(bound * (1 - bound) / len(ds.examples))
    assert abs(acc - bound) <= 3 * sigma


def test_generation_is_bitwise_deterministic():
    a = generate_synthetic_task(synth_spec(), seq_len=8)
    b = generate_synthetic_task(synth_spec(), seq_len=8)
    assert a.examples == b.examples
    assert a.dev == b.dev


def test_dev_and_train_are_distinct_streams():
    ds = generate_synthetic_task(synth_spec(size=100, dev_size=100), seq_len=8)
    assert ds.examples != ds.dev


def test_tokens_stay_in_vocab_and_labels_binary():
    for gen in ("pattern_presence", "majority", "parity"):
        ds = generate_synthetic_task(synth_spec(generator=gen, size=50), seq_len=8)
        for tokens, label in ds.examples:
            assert len(tokens) == 8
            assert all(1 <= t < 16 for t in tokens)
            assert label in (0, 1)


def test_majority_labels_are_correct():
    ds = generate_synthetic_task(synth_spec(generator="majority", size=80), seq_len=9)
    high_start = 1 + 15 // 2
    for tokens, label in ds.examples:
        high = sum(1 for t in tokens if t >= high_start)
        assert label == int(high > 9 - high)


def test_parity_labels_are_correct():
    spec = synth_spec(generator="parity", size=80, motif_len=2)
    ds = generate_synthetic_task(spec, seq_len=10)
    motif = tuple(task_motif(spec))
    for tokens, label in ds.examples:
        count = sum(1 for i in range(9) if tokens[i:i + 2] == motif)
        assert label == count % 2


def test_regression_scores_are_bounded_and_correct():
    spec = synth_spec(generator="regression_score", size=60, kind="regression")
    ds = generate_synthetic_task(spec, seq_len=10)
    high_start = 1 + 15 // 2
    for tokens, label in ds.examples:
        assert 0.0 <= label <= 1.0
        assert label == pytest.approx(sum(1 for t in tokens if t >= high_start) / 10)


def test_size_below_minimum_rejected():
    with pytest.raises(ValueError, match="minimum"):
        generate_synthetic_task(synth_spec(size=10), seq_len=8, min_size=32)


def test_motif_longer_than_sequence_rejected():
    with pytest.raises(ValueError, match="motif_len"):
        generate_synthetic_task(synth_spec(motif_len=9), seq_len=8)


# ---------------------------------------------------------------------------
# TSV
# ---------------------------------------------------------------------------


def tsv_spec(path, kind="classification", n_classes=2, vocab_size=64, vocab_seed=0):
    source = TsvSource(str(path), vocab_size=vocab_size, vocab_seed=vocab_seed)
    if kind == "classification":
        return TaskSpec("tsv", "classification", source, n_classes=n_classes)
    return TaskSpec("tsv", "regression", source)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_two_row_round_trip(tmp_path):
    p = write(tmp_path / "d.tsv", "text\tlabel\nhello world\tpos\nbye now\tneg\n")
    ds = ingest_tsv(str(p), tsv_spec(p), seq_len=4)
    assert len(ds.examples) == 2
    tokens, label = ds.examples[0]
    assert len(tokens) == 4 and tokens[2] == 0 and tokens[3] == 0  # padded
    assert {label, ds.examples[1][1]} == {0, 1}  # sorted label mapping: neg=0, pos=1
    assert ds.examples[0][1] == 1


def test_missing_label_column_reports_line(tmp_path):
    p = write(tmp_path / "d.tsv", "text\tlabel\nok one\t1\nbroken row no tab\n")
    with pytest.raises(TsvFormatError, match="line 3"):
        ingest_tsv(str(p), tsv_spec(p), seq_len=4)


def test_empty_file_and_bad_header(tmp_path):
    p = write(tmp_path / "e.tsv", "")
    with pytest.raises(TsvFormatError, match="empty"):
        ingest_tsv(str(p), tsv_spec(p), seq_len=4)
    p2 = write(tmp_path / "h.tsv", "body\ttag\nx\t1\n")
    with pytest.raises(TsvFormatError, match="header"):
        ingest_tsv(str(p2), tsv_spec(p2), seq_len=4)
    p3 = write(tmp_path / "only_header.tsv", "text\tlabel\n")
    with pytest.raises(TsvFormatError, match="no data rows"):
        ingest_tsv(str(p3), tsv_spec(p3), seq_len=4)


def test_token_ids_stable_across_ingests(tmp_path):
    body = "text\tlabel\n" + "\n".join(f"alpha beta w{i} gamma\t{i % 2}" for i in range(30)) + "\n"
    p = write(tmp_path / "s.tsv", body)
    a = ingest_tsv(str(p), tsv_spec(p, vocab_seed=5), seq_len=6)
    b = ingest_tsv(str(p), tsv_spec(p, vocab_seed=5), seq_len=6)
    assert a.examples == b.examples


def test_oov_hashing_when_vocab_full(tmp_path):
    rows = [f"tok{i}\t{i % 2}" for i in range(40)]
    p = write(tmp_path / "o.tsv", "text\tlabel\n" + "\n".join(rows) + "\n")
    ds = ingest_tsv(str(p), tsv_spec(p, vocab_size=8), seq_len=2)
    ids = {tokens[0] for tokens, _ in ds.examples}
    assert all(1 <= i < 8 for i in ids)  # hashed into range, never the pad id


def test_regression_tsv_parses_floats(tmp_path):
    p = write(tmp_path / "r.tsv", "text\tlabel\na b\t0.25\nc d\t0.75\n")
    ds = ingest_tsv(str(p), tsv_spec(p, kind="regression"), seq_len=4)
    assert [label for _, label in ds.examples] == [0.25, 0.75]
    bad = write(tmp_path / "rb.tsv", "text\tlabel\na\tnot_a_number\n")
    with pytest.raises(TsvFormatError, match="line 2"):
        ingest_tsv(str(bad), tsv_spec(bad, kind="regression"), seq_len=4)


def test_too_many_classes_rejected(tmp_path):
    p = write(tmp_path / "c.tsv", "text\tlabel\na\tx\nb\ty\nc\tz\n")
    with pytest.raises(TsvFormatError, match="distinct labels"):
        ingest_tsv(str(p), tsv_spec(p, n_classes=2), seq_len=4)


def test_build_dataset_dispatch(tmp_path):
    ds = build_dataset(synth_spec(size=40), seq_len=8, min_size=8)
    assert isinstance(ds, Dataset) and len(ds) == 40
    p = write(tmp_path / "b.tsv", "text\tlabel\nhello\t0\nworld\t1\n")
    ds2 = build_dataset(tsv_spec(p), seq_len=4)
    assert len(ds2) == 2
