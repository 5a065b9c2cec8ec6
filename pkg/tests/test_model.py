"""Conditional transformer modules: oracles, step-0 identity, gradients."""

import math

import numpy as np
import pytest

from camtl.conditioning import FiLMGenerator, UnknownTaskError
from camtl.model import (
    ConditionalAlignmentSite,
    ConditionalAttentionSite,
    ConditionalBottleneckSite,
    ConditionalLayerNormSite,
    DecoderHead,
    ModelConfig,
    MultiTaskModel,
    PlainLayerNorm,
    TaskDef,
    conditional_alignment,
    conditional_attention,
    conditional_bottleneck,
    conditional_layer_norm,
    head_forward,
)
from camtl.tensor import (
    ShapeError,
    Tape,
    Tensor,
    backward,
    finite_diff_check,
    log_softmax_lastdim,
    mul,
    scale,
    softmax_lastdim,
    sum_all,
)

TASKS = [TaskDef("alpha", "classification", 2), TaskDef("beta", "classification", 3)]


def tiny_config(**over):
    base = dict(seq_len=4, dim=8, n_layers=2, n_heads=2, vocab_size=12, n_blocks=2)
    base.update(over)
    return ModelConfig(**base)


def plain_variant(cfg: ModelConfig) -> ModelConfig:
    d = cfg.to_dict()
    d.update(attention_variant="none", bottleneck_variant="none",
             use_alignment=False, use_cln=False)
    return ModelConfig.from_dict(d)


def scalar_loss(t: Tensor) -> Tensor:
    probe = Tensor(np.linspace(0.5, 1.5, t.size).reshape(t.shape))
    return sum_all(mul(t, probe))


def gelu_scalar(x: float) -> float:
    return 0.5 * x * (1.0 + math.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def randomize_generator(gen: FiLMGenerator, rng, scale=0.3):
    gen.w_gamma.data[:] = rng.normal(0, scale, gen.w_gamma.shape)
    gen.b_gamma.data[:] = rng.normal(1, scale, gen.b_gamma.shape)
    gen.w_beta.data[:] = rng.normal(0, scale, gen.w_beta.shape)
    gen.b_beta.data[:] = rng.normal(0, scale, gen.b_beta.shape)


def affine_oracle(w, b, z):
    return np.array([sum(w[i][j] * z[j] for j in range(len(z))) + b[i] for i in range(len(b))])


# ---------------------------------------------------------------------------
# ModelConfig
# ---------------------------------------------------------------------------


def test_default_block_count_is_dim_over_seq_len():
    cfg = ModelConfig(seq_len=16, dim=32, n_layers=4, n_heads=4, vocab_size=10)
    assert cfg.n_blocks == 2
    assert cfg.block_size == 8


def test_block_count_required_when_no_default():
    with pytest.raises(ValueError, match="n_blocks"):
        ModelConfig(seq_len=6, dim=8, n_layers=2, n_heads=2, vocab_size=10)


def test_block_count_must_divide_seq_len():
    with pytest.raises(ValueError, match="divide"):
        ModelConfig(seq_len=6, dim=8, n_layers=2, n_heads=2, vocab_size=10, n_blocks=4)


def test_frozen_layers_default_to_bottom_half():
    cfg = ModelConfig(seq_len=4, dim=8, n_layers=6, n_heads=2, vocab_size=10, n_blocks=2)
    assert cfg.frozen_layers == (0, 1, 2)


def test_bottleneck_placement():
    small = tiny_config(n_layers=4, bottleneck_variant="base_top")
    assert small.bottleneck_layers() == (2, 3)
    deep = tiny_config(n_layers=8, bottleneck_variant="base_top")
    assert deep.bottleneck_layers() == (6, 7)
    skip = tiny_config(n_layers=3, bottleneck_variant="large_skip")
    assert skip.bottleneck_layers() == (0, 1, 2)


# ---------------------------------------------------------------------------
# conditional attention
# ---------------------------------------------------------------------------


def vanilla_attention(q, k, v, width):
    scores = q @ k.T / math.sqrt(width)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return (e / e.sum(axis=-1, keepdims=True)) @ v


def test_attention_bias_is_zero_at_step_zero():
    site = ConditionalAttentionSite(4, 2, 8, seed=3)
    for s in range(5):
        z = Tensor(np.random.default_rng(s).normal(size=8))
        assert np.array_equal(site.bias(z).data, np.zeros((4, 4)))
    assert any(np.abs(w.base.data).max() > 0 for w in site.blocks)


def test_attention_with_zero_bias_equals_vanilla():
    rng = np.random.default_rng(4)
    site = ConditionalAttentionSite(4, 2, 8, seed=1)
    q, k, v = (rng.normal(size=(4, 8)) for _ in range(3))
    out = conditional_attention(Tensor(q), Tensor(k), Tensor(v), site, Tensor(rng.normal(size=8)))
    assert np.max(np.abs(out.data - vanilla_attention(q, k, v, 8))) == 0.0


def test_saturated_bias_attends_to_self_only():
    # single full block, identity generator, -1e9 off the diagonal
    site = ConditionalAttentionSite(4, 1, 8, seed=0)
    site.generator.b_gamma.data[:] = 1.0
    site.blocks[0].base.data[:] = -1e9 * (1.0 - np.eye(4))
    rng = np.random.default_rng(5)
    v = rng.normal(size=(4, 8))
    out = conditional_attention(
        Tensor(np.zeros((4, 8))), Tensor(np.zeros((4, 8))), Tensor(v), site,
        Tensor(rng.normal(size=8)),
    )
    assert np.max(np.abs(out.data - v)) < 1e-12


def test_attention_matches_naive_loop_oracle():
    L, nb, d = 4, 2, 6
    side = L // nb
    rng = np.random.default_rng(9)
    site = ConditionalAttentionSite(L, nb, d, seed=7)
    randomize_generator(site.generator, rng)
    z = rng.uniform(-1, 1, d)
    q, k, v = (rng.uniform(-0.5, 0.5, (L, d)) for _ in range(3))

    gamma = affine_oracle(site.generator.w_gamma.data, site.generator.b_gamma.data, z)
    beta = affine_oracle(site.generator.w_beta.data, site.generator.b_beta.data, z)
    m = np.zeros((L, L))
    for n, w in enumerate(site.blocks):
        for i in range(side):
            for j in range(side):
                flat = i * side + j
                m[n * side + i, n * side + j] = (
                    w.base.data[i, j] * gamma[flat] + beta[flat]
                )
    expected = np.zeros((L, d))
    for i in range(L):
        row = [sum(q[i][s] * k[j][s] for s in range(d)) / math.sqrt(d) + m[i][j] for j in range(L)]
        mx = max(row)
        weights = [math.exp(r - mx) for r in row]
        total = sum(weights)
        probs = [w / total for w in weights]
        for s in range(d):
            expected[i][s] = sum(probs[j] * v[j][s] for j in range(L))

    out = conditional_attention(Tensor(q), Tensor(k), Tensor(v), site, Tensor(z))
    assert np.max(np.abs(out.data - expected)) < 1e-10


def test_attention_length_mismatch():
    site = ConditionalAttentionSite(4, 2, 8)
    bad = Tensor(np.zeros((6, 8)))
    with pytest.raises(ShapeError, match="does not match site"):
        conditional_attention(bad, bad, bad, site, Tensor(np.zeros(8)))


def test_block_sparsity_for_random_z():
    L, nb = 8, 2
    site = ConditionalAttentionSite(L, nb, 4, seed=2)
    rng = np.random.default_rng(0)
    randomize_generator(site.generator, rng)
    block = L // nb
    for _ in range(20):
        m = site.bias(Tensor(rng.normal(size=4))).data
        off = 0
        for i in range(L):
            for j in range(L):
                if i // block != j // block:
                    assert m[i, j] == 0.0
                    off += 1
        assert off == 32


def test_full_block_generator_is_n_squared_larger():
    blockwise = ConditionalAttentionSite(8, 2, 4, variant="block_diagonal")
    full = ConditionalAttentionSite(8, 2, 4, variant="full_block")
    assert full.generator.out_dim == blockwise.generator.out_dim * 2 ** 2
    assert len(full.blocks) == 1 and full.blocks[0].base.shape == (8, 8)


# ---------------------------------------------------------------------------
# conditional alignment
# ---------------------------------------------------------------------------


def test_alignment_is_identity_at_step_zero():
    site = ConditionalAlignmentSite(6, seed=0)
    x = np.random.default_rng(1).normal(size=(3, 6))
    out = conditional_alignment(Tensor(x), site, Tensor(np.random.default_rng(2).normal(size=6)))
    assert np.array_equal(out.data, x)


def test_alignment_pure_scaling():
    site = ConditionalAlignmentSite(4, seed=0)
    site.weight.generator.b_gamma.data[:] = 2.0
    x = np.random.default_rng(3).normal(size=(3, 4))
    out = conditional_alignment(Tensor(x), site, Tensor(np.zeros(4)))
    assert np.max(np.abs(out.data - 2.0 * x)) < 1e-12


def test_alignment_matches_loop_oracle():
    d = 5
    rng = np.random.default_rng(8)
    site = ConditionalAlignmentSite(d, seed=4)
    site.weight.base.data[:] = rng.normal(size=(d, d))
    randomize_generator(site.weight.generator, rng)
    z = rng.uniform(-1, 1, d)
    x = rng.uniform(-1, 1, (3, d))

    gamma = affine_oracle(site.weight.generator.w_gamma.data, site.weight.generator.b_gamma.data, z)
    beta = affine_oracle(site.weight.generator.w_beta.data, site.weight.generator.b_beta.data, z)
    r_hat = [[site.weight.base.data[r][c] * gamma[r] + beta[r] for c in range(d)] for r in range(d)]
    expected = [
        [sum(x[i][s] * r_hat[s][j] for s in range(d)) for j in range(d)] for i in range(3)
    ]
    out = conditional_alignment(Tensor(x), site, Tensor(z))
    assert np.max(np.abs(out.data - np.array(expected))) < 1e-12


# ---------------------------------------------------------------------------
# conditional layer norm
# ---------------------------------------------------------------------------


def test_cln_step_zero_equals_plain_ln():
    d = 6
    rng = np.random.default_rng(11)
    gamma_prime = rng.normal(1.0, 0.2, d)
    beta_prime = rng.normal(0.0, 0.2, d)
    site = ConditionalLayerNormSite(d, gamma_init=gamma_prime, beta_init=beta_prime)
    a = rng.normal(size=(4, d))
    out = conditional_layer_norm(Tensor(a), site, Tensor(rng.normal(size=d)))

    mu = a.mean(axis=-1, keepdims=True)
    var = a.var(axis=-1, keepdims=True)
    plain = (a - mu) / np.sqrt(var + 1e-12) * gamma_prime + beta_prime
    assert np.max(np.abs(out.data - plain)) < 1e-12


def test_cln_constant_row_outputs_task_shift():
    d = 4
    site = ConditionalLayerNormSite(d, beta_init=np.array([0.1, 0.2, 0.3, 0.4]))
    a = Tensor(np.full((2, d), 7.0))
    out = conditional_layer_norm(a, site, Tensor(np.zeros(d)))
    for row in out.data:
        assert np.max(np.abs(row - np.array([0.1, 0.2, 0.3, 0.4]))) < 1e-12


def test_cln_matches_loop_oracle():
    d = 5
    rng = np.random.default_rng(21)
    gamma_prime = rng.normal(1.0, 0.3, d)
    site = ConditionalLayerNormSite(d, gamma_init=gamma_prime)
    randomize_generator(site.generator, rng)
    z = rng.uniform(-1, 1, d)
    a = rng.uniform(-1, 1, (3, d))

    gamma = affine_oracle(site.generator.w_gamma.data, site.generator.b_gamma.data, z)
    beta = affine_oracle(site.generator.w_beta.data, site.generator.b_beta.data, z)
    expected = np.zeros((3, d))
    for i in range(3):
        mu = sum(a[i]) / d
        var = sum((a[i][j] - mu) ** 2 for j in range(d)) / d
        inv = 1.0 / math.sqrt(var + 1e-12)
        for j in range(d):
            expected[i][j] = (a[i][j] - mu) * inv * (gamma_prime[j] * gamma[j]) + beta[j]
    out = conditional_layer_norm(Tensor(a), site, Tensor(z))
    assert np.max(np.abs(out.data - expected)) < 1e-10


# ---------------------------------------------------------------------------
# conditional bottleneck
# ---------------------------------------------------------------------------


def test_bottleneck_residual_dead_at_step_zero():
    site = ConditionalBottleneckSite(6, 2, "base_top", seed=5)
    h = np.random.default_rng(6).normal(size=(3, 6))
    out = conditional_bottleneck(Tensor(h), site, Tensor(np.random.default_rng(7).normal(size=6)))
    assert np.array_equal(out.data, h)


def test_bottleneck_core_matches_loop_oracle():
    L, d, k = 2, 4, 2
    rng = np.random.default_rng(31)
    site = ConditionalBottleneckSite(d, k, "large_skip", seed=8)
    site.up.base.data[:] = rng.normal(size=(k, d))
    randomize_generator(site.down.generator, rng)
    randomize_generator(site.up.generator, rng)
    z = rng.uniform(-1, 1, d)
    h = rng.uniform(-1, 1, (L, d))

    dg = affine_oracle(site.down.generator.w_gamma.data, site.down.generator.b_gamma.data, z)
    db = affine_oracle(site.down.generator.w_beta.data, site.down.generator.b_beta.data, z)
    ug = affine_oracle(site.up.generator.w_gamma.data, site.up.generator.b_gamma.data, z)
    ub = affine_oracle(site.up.generator.w_beta.data, site.up.generator.b_beta.data, z)
    down_hat = [[site.down.base.data[r][c] * dg[r] + db[r] for c in range(k)] for r in range(d)]
    up_hat = [[site.up.base.data[r][c] * ug[r] + ub[r] for c in range(d)] for r in range(k)]
    mid = [[gelu_scalar(sum(h[i][s] * down_hat[s][j] for s in range(d))) for j in range(k)] for i in range(L)]
    expected = [[sum(mid[i][s] * up_hat[s][j] for s in range(k)) for j in range(d)] for i in range(L)]

    out = conditional_bottleneck(Tensor(h), site, Tensor(z))
    assert np.max(np.abs(out.data - np.array(expected))) < 1e-10


def test_bottleneck_variant_mismatch():
    site = ConditionalBottleneckSite(4, 2, "base_top")
    with pytest.raises(ValueError, match="mismatch"):
        conditional_bottleneck(Tensor(np.zeros((2, 4))), site, Tensor(np.zeros(4)),
                               variant="large_skip")


def test_dead_skip_path_equals_plain_encoder():
    cfg = tiny_config(bottleneck_variant="large_skip")
    model = MultiTaskModel(cfg, TASKS, seed=13)
    reference = MultiTaskModel(plain_variant(cfg), TASKS, seed=13)
    # default init: every skip contribution is exactly zero
    tokens = [1, 2, 3, 4]
    got = model.encoder_forward(tokens, "alpha").data
    want = reference.encoder_forward(tokens, "alpha").data
    assert np.max(np.abs(got - want)) < 1e-12


# ---------------------------------------------------------------------------
# heads
# ---------------------------------------------------------------------------


def test_zero_head_gives_uniform_softmax():
    head = DecoderHead("alpha", "classification", 6, 3)
    enc = Tensor(np.random.default_rng(2).normal(size=(4, 6)))
    logits = head.forward(enc)
    assert np.array_equal(logits.data, np.zeros(3))
    assert np.allclose(softmax_lastdim(logits).data, np.full(3, 1 / 3))


def test_head_projection_picks_coordinate():
    head = DecoderHead("alpha", "classification", 4, 2)
    head.w.data[0, 0] = 1.0
    enc = Tensor(np.arange(8.0).reshape(2, 4) + 3.0)
    logits = head.forward(enc)
    assert np.array_equal(logits.data, [enc.data[0, 0], 0.0])


def test_head_matches_affine_oracle():
    rng = np.random.default_rng(17)
    head = DecoderHead("alpha", "classification", 5, 3)
    head.w.data[:] = rng.normal(size=(3, 5))
    head.b.data[:] = rng.normal(size=3)
    enc = rng.normal(size=(2, 5))
    expected = affine_oracle(head.w.data, head.b.data, enc[0])
    assert np.max(np.abs(head.forward(Tensor(enc)).data - expected)) < 1e-12


def test_head_task_mismatch():
    head = DecoderHead("alpha", "classification", 4, 2)
    with pytest.raises(ValueError, match="owns task"):
        head_forward(Tensor(np.zeros((2, 4))), head, task="beta")


def test_regression_head_shape():
    head = DecoderHead("r", "regression", 4)
    out = head.forward(Tensor(np.ones((2, 4))))
    assert out.shape == (1,)


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------


def test_step_zero_forward_equals_plain_transformer():
    cfg = tiny_config(n_layers=4, bottleneck_variant="base_top")
    tasks = TASKS + [TaskDef("gamma", "classification", 2)]
    conditioned = MultiTaskModel(cfg, tasks, seed=21)
    plain = MultiTaskModel(plain_variant(cfg), tasks, seed=21)
    tokens = [3, 1, 4, 1]
    for task in ("alpha", "beta", "gamma"):
        diff = np.abs(
            conditioned.encoder_forward(tokens, task).data
            - plain.encoder_forward(tokens, task).data
        ).max()
        assert diff < 1e-9


def test_unknown_task_raises_and_lists_known():
    model = MultiTaskModel(tiny_config(), TASKS, seed=0)
    with pytest.raises(UnknownTaskError, match="alpha"):
        model.forward([1, 2], "nope")


def test_embedding_layer_is_always_frozen():
    model = MultiTaskModel(tiny_config(), TASKS, seed=0)
    assert not model.tok_emb.requires_grad
    assert not model.pos_emb.requires_grad
    for name in ("embed.tok", "embed.pos"):
        assert name in model.frozen_parameter_names()


def test_frozen_layers_have_no_trainable_parameters():
    cfg = tiny_config(n_layers=4)
    model = MultiTaskModel(cfg, TASKS, seed=0)
    assert cfg.frozen_layers == (0, 1)
    trainable = model.trainable_parameters()
    for name in trainable:
        assert not name.startswith("layer0.") and not name.startswith("layer1.")
    # conditional sites live only on the non-frozen layers
    assert model.layers[0].attn_site is None
    assert model.layers[2].attn_site is not None
    assert isinstance(model.layers[0].ln1, PlainLayerNorm)
    assert isinstance(model.layers[2].ln1, ConditionalLayerNormSite)


def test_pad_positions_do_not_leak_into_pooled_output():
    model = MultiTaskModel(tiny_config(), TASKS, seed=3)
    tokens = [5, 6]  # padded to length 4
    before = model.forward(tokens, "alpha").data.copy()
    model.pos_emb.data[2:] += 37.0  # only pad positions change
    after = model.forward(tokens, "alpha").data
    assert np.array_equal(before, after)


def test_token_ids_validated():
    model = MultiTaskModel(tiny_config(), TASKS, seed=3)
    with pytest.raises(ValueError, match="out of range"):
        model.forward([999], "alpha")


def test_full_block_variant_runs_and_matches_plain_at_step_zero():
    cfg = tiny_config(attention_variant="full_block")
    model = MultiTaskModel(cfg, TASKS, seed=11)
    plain = MultiTaskModel(plain_variant(cfg), TASKS, seed=11)
    tokens = [2, 5, 7, 1]
    diff = np.abs(model.encoder_forward(tokens, "alpha").data
                  - plain.encoder_forward(tokens, "alpha").data).max()
    assert diff < 1e-9
    site = model.layers[1].attn_site
    assert site.variant == "full_block"
    assert site.generator.out_dim == 16  # seq_len^2


def test_cln_base_scale_trainability_flag():
    conditioned = MultiTaskModel(tiny_config(cln_train_base=True), TASKS, seed=1)
    assert conditioned.layers[1].ln1.gamma_prime.requires_grad
    frozen_scale = MultiTaskModel(tiny_config(), TASKS, seed=1)
    assert not frozen_scale.layers[1].ln1.gamma_prime.requires_grad
    # the generator itself always trains
    assert frozen_scale.layers[1].ln1.generator.w_gamma.requires_grad


def test_tasks_see_different_outputs_once_conditioned():
    model = MultiTaskModel(tiny_config(), TASKS, seed=5)
    # push the two task embeddings apart and give the generators signal
    rng = np.random.default_rng(0)
    for layer in model.layers:
        if layer.attn_site is not None:
            randomize_generator(layer.attn_site.generator, rng)
    model.task_table.embed("alpha").data[:] = 1.0
    model.task_table.embed("beta").data[:] = -1.0
    tokens = [1, 2, 3, 4]
    a = model.encoder_forward(tokens, "alpha").data
    b = model.encoder_forward(tokens, "beta").data
    assert np.abs(a - b).max() > 0


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------


def site_cases():
    d = 6
    rng = np.random.default_rng(77)

    attn = ConditionalAttentionSite(4, 2, d, seed=1)
    randomize_generator(attn.generator, rng)
    q, k, v = (Tensor(rng.uniform(-0.5, 0.5, (4, d))) for _ in range(3))

    def attn_loss(z):
        return scalar_loss(conditional_attention(q, k, v, attn, z))

    align = ConditionalAlignmentSite(d, seed=2)
    randomize_generator(align.weight.generator, rng)
    x_emb = Tensor(rng.uniform(-1, 1, (3, d)))

    def align_loss(z):
        return scalar_loss(conditional_alignment(x_emb, align, z))

    cln = ConditionalLayerNormSite(d, gamma_init=rng.normal(1, 0.2, d))
    randomize_generator(cln.generator, rng)
    a_in = Tensor(rng.uniform(-1, 1, (3, d)))

    def cln_loss(z):
        return scalar_loss(conditional_layer_norm(a_in, cln, z))

    top = ConditionalBottleneckSite(d, 2, "base_top", seed=3)
    top.up.base.data[:] = rng.normal(size=(2, d))
    randomize_generator(top.down.generator, rng)
    h_in = Tensor(rng.uniform(-1, 1, (3, d)))

    def top_loss(z):
        return scalar_loss(conditional_bottleneck(h_in, top, z))

    skip = ConditionalBottleneckSite(d, 2, "large_skip", seed=4)
    skip.up.base.data[:] = rng.normal(size=(2, d))
    randomize_generator(skip.up.generator, rng)

    def skip_loss(z):
        return scalar_loss(conditional_bottleneck(h_in, skip, z))

    return [
        ("attention", attn_loss, attn.parameters()),
        ("alignment", align_loss, align.parameters()),
        ("cln", cln_loss, cln.parameters()),
        ("bottleneck_base_top", top_loss, top.parameters()),
        ("bottleneck_large_skip", skip_loss, skip.parameters()),
    ]


@pytest.mark.parametrize("name,loss,params", site_cases(), ids=lambda c: c if isinstance(c, str) else "")
def test_site_gradients_into_task_embedding(name, loss, params):
    z = Tensor(np.random.default_rng(123).uniform(-1, 1, 6), requires_grad=True)
    assert finite_diff_check(loss, z, 1e-5) < 1e-4


@pytest.mark.parametrize("name,loss,params", site_cases(), ids=lambda c: c if isinstance(c, str) else "")
def test_site_gradients_into_every_parameter(name, loss, params):
    z = Tensor(np.random.default_rng(321).uniform(-1, 1, 6))
    for pname, p in params.items():
        if not p.requires_grad:
            continue
        err = finite_diff_check(lambda _: loss(z), p, 1e-5)
        assert err < 1e-4, f"{name}.{pname}: {err}"


def test_frozen_base_weights_still_train_generator_and_embedding():
    d = 6
    rng = np.random.default_rng(55)
    site = ConditionalAttentionSite(4, 2, d, seed=9)
    randomize_generator(site.generator, rng)
    for block in site.blocks:
        block.base.requires_grad = False
    q, k, v = (Tensor(rng.uniform(-0.5, 0.5, (4, d))) for _ in range(3))
    z = Tensor(rng.uniform(-1, 1, d), requires_grad=True)

    with Tape() as tape:
        loss = scalar_loss(conditional_attention(q, k, v, site, z))
    backward(loss, tape)
    assert all(b.base.grad is None for b in site.blocks)
    assert np.abs(z.grad).max() > 0
    assert np.abs(site.generator.w_gamma.grad).max() > 0

    def loss_fn(t):
        return scalar_loss(conditional_attention(q, k, v, site, t))

    assert finite_diff_check(loss_fn, z, 1e-5) < 1e-4
    assert finite_diff_check(lambda _: loss_fn(z), site.generator.w_gamma, 1e-5) < 1e-4


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    onehot = np.zeros(logits.shape)
    onehot[label] = 1.0
    return scale(sum_all(mul(log_softmax_lastdim(logits), Tensor(onehot))), -1.0)


def test_end_to_end_gradient_check_every_trainable_group():
    cfg = ModelConfig(seq_len=8, dim=16, n_layers=2, n_heads=2, vocab_size=10,
                      n_blocks=2, bottleneck_variant="base_top")
    model = MultiTaskModel(cfg, TASKS, seed=42)
    rng = np.random.default_rng(6)
    for layer in model.layers:
        if layer.attn_site is not None:
            randomize_generator(layer.attn_site.generator, rng, scale=0.1)
    tokens = [1, 5, 3, 7, 2, 8, 4, 6]

    def loss_fn(_):
        return cross_entropy(model.forward(tokens, "beta"), 1)

    failures = {}
    for name, param in model.trainable_parameters().items():
        err = finite_diff_check(loss_fn, param, 1e-5)
        if err >= 1e-4:
            failures[name] = err
    assert not failures, f"gradient check failures: {failures}"
