import math

import numpy as np
import pytest

from conftest import tiny_generator
from msdatf.errors import ConfigError, DimensionError
from msdatf.generator import (
    Generator,
    GeneratorConfig,
    attention,
    cnn_forward,
    embed,
    encoder_forward,
    init_params,
    mha,
    patchify,
)
from msdatf.numerics import Tensor, cross_entropy, linear, softmax
from msdatf.numerics.gradcheck import check_gradients


def explicit_attention(q, k, v):
    s = q @ k.T / math.sqrt(q.shape[-1])
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return (e / e.sum(axis=1, keepdims=True)) @ v


# ------------------------------------------------------------------ config


def test_default_config():
    c = GeneratorConfig()
    assert (c.patch, c.embed_dim, c.depth, c.heads, c.head_dim) == (3, 64, 8, 8, 8)
    assert c.mlp_units == (2048, 1024)
    assert c.c1_filters == (64, 64, 128) and c.c2_filters == (128, 256, 512)
    assert c.dropout == (0.30, 0.20)
    assert c.feature_map_shape == (512, 15, 2) and c.n_tokens == 5


def test_config_rejects_bad_heads():
    with pytest.raises(ConfigError):
        GeneratorConfig(embed_dim=10, heads=3)


# --------------------------------------------------------------- shapes


def test_default_pipeline_shapes():
    gen = Generator(GeneratorConfig(), seed=0)
    x = np.random.default_rng(0).standard_normal((1, 5, 62, 9))
    fm = gen.feature_map(x, train=True, rng=np.random.default_rng(1))
    assert fm.shape == (1, 512, 15, 2)
    patches = patchify(fm, 3)
    assert patches.shape == (1, 5, 9 * 512)
    tokens = embed(patches, gen.params)
    assert tokens.shape == (1, 5, 64)
    enc = encoder_forward(tokens, gen.params, gen.config)
    assert enc.shape == (1, 5, 64)
    emb = gen(x, train=False)
    assert emb.shape == (1, 64)


def test_too_small_to_pool():
    cfg = tiny_generator(input_shape=(5, 62, 3))
    gen = Generator(cfg, seed=0)
    with pytest.raises(DimensionError):
        gen(np.zeros((2, 5, 62, 3)), train=True, rng=np.random.default_rng(0))


def test_wrong_input_shape():
    gen = Generator(tiny_generator(), seed=0)
    with pytest.raises(DimensionError):
        gen(np.zeros((1, 5, 60, 9)), train=True, rng=np.random.default_rng(0))


def test_dropout_rates_follow_config():
    cfg = tiny_generator(dropout=(0.0, 0.0))
    gen = Generator(cfg, seed=0)
    x = np.random.default_rng(0).standard_normal((3, 5, 62, 9))
    a = gen.feature_map(x, train=True, rng=np.random.default_rng(1), update_stats=False).data
    b = gen.feature_map(x, train=True, rng=np.random.default_rng(2), update_stats=False).data
    assert np.array_equal(a, b)


# --------------------------------------------------------------- patchify


def test_patchify_examples():
    fm = Tensor(np.random.default_rng(0).standard_normal((2, 4, 15, 2)))
    assert patchify(fm, 3).shape == (2, 5, 36)
    assert patchify(Tensor(np.zeros((1, 2, 6, 6))), 3).shape == (1, 4, 18)


def test_patchify_padding_and_layout():
    fm = np.random.default_rng(1).standard_normal((1, 2, 15, 2))
    p = patchify(Tensor(fm), 3).data
    # patch 1 covers rows 3..5, cols 0..2 (col 2 is padding); layout (row, col, channel)
    block = p[0, 1].reshape(3, 3, 2)
    assert np.array_equal(block[:, :2, :], fm[0, :, 3:6, 0:2].transpose(1, 2, 0))
    assert np.all(block[:, 2, :] == 0)


def test_patchify_p1_is_spatial_columns():
    fm = np.random.default_rng(2).standard_normal((1, 3, 2, 4))
    p = patchify(Tensor(fm), 1).data
    assert p.shape == (1, 8, 3)
    assert np.array_equal(p[0, 5], fm[0, :, 1, 1])


# ------------------------------------------------------------------ embed


def test_zero_patches_give_positional_rows(tiny_config):
    params = init_params(tiny_config, np.random.default_rng(0))
    n, plen = params["pos_embed"].shape[0], params["patch.weight"].shape[0]
    tokens = embed(Tensor(np.zeros((1, n, plen))), params)
    assert np.array_equal(tokens.data[0], params["pos_embed"].data)


def test_identical_patches_differ_by_position(tiny_config):
    params = init_params(tiny_config, np.random.default_rng(0))
    n, plen = params["pos_embed"].shape[0], params["patch.weight"].shape[0]
    patch = np.random.default_rng(1).standard_normal(plen)
    tokens = embed(Tensor(np.tile(patch, (1, n, 1))), params).data
    assert not np.allclose(tokens[0, 0], tokens[0, 1])


def test_selection_projection_reproduces_coordinates(tiny_config):
    params = init_params(tiny_config, np.random.default_rng(0))
    n, plen = params["pos_embed"].shape[0], params["patch.weight"].shape[0]
    D = tiny_config.embed_dim
    cols = np.random.default_rng(3).permutation(plen)[:D]
    w = np.zeros((plen, D))
    w[cols, np.arange(D)] = 1.0
    params["patch.weight"] = Tensor(w)
    patches = np.random.default_rng(4).standard_normal((1, n, plen))
    tokens = embed(Tensor(patches), params).data
    assert np.allclose(tokens[0], patches[0][:, cols] + params["pos_embed"].data, atol=0)


def test_too_many_tokens():
    params = init_params(tiny_generator(), np.random.default_rng(0))
    n, plen = params["pos_embed"].shape[0], params["patch.weight"].shape[0]
    with pytest.raises(DimensionError):
        embed(Tensor(np.zeros((1, n + 1, plen))), params)


# -------------------------------------------------------------- attention


def test_attention_single_row_is_v():
    rng = np.random.default_rng(0)
    q, k, v = (Tensor(rng.standard_normal((1, 4))) for _ in range(3))
    assert np.array_equal(attention(q, k, v).data, v.data)


def test_attention_uniform_when_orthogonal():
    q = Tensor(np.array([[1.0, 0.0], [2.0, 0.0]]))
    k = Tensor(np.array([[0.0, 1.0], [0.0, -3.0], [0.0, 0.5]]))
    v = np.random.default_rng(0).standard_normal((3, 4))
    out = attention(q, k, Tensor(v)).data
    assert np.allclose(out, np.tile(v.mean(axis=0), (2, 1)), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_attention_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    q, k, v = rng.standard_normal((3, 3, 4))
    out = attention(Tensor(q), Tensor(k), Tensor(v)).data
    assert np.allclose(out, explicit_attention(q, k, v), atol=1e-12)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(0)
    q, k = rng.standard_normal((2, 6, 8)) * 5
    s = softmax(Tensor(q @ k.T / math.sqrt(8))).data
    assert np.all(np.abs(s.sum(axis=-1) - 1) < 1e-12)


def test_mha_single_head_equals_attention(tiny_config):
    params = init_params(tiny_generator(heads=1), np.random.default_rng(0))
    tokens = Tensor(np.random.default_rng(1).standard_normal((1, 5, 4)))
    out = mha(tokens, params, "enc.0.attn.", heads=1).data

    def proj(name):
        return linear(tokens, params[f"enc.0.attn.{name}.weight"], params[f"enc.0.attn.{name}.bias"]).data[0]

    att = explicit_attention(proj("q"), proj("k"), proj("v"))
    ref = att @ params["enc.0.attn.o.weight"].data + params["enc.0.attn.o.bias"].data
    assert np.allclose(out[0], ref, atol=1e-12)


def test_mha_heads_must_divide():
    params = init_params(tiny_generator(), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        mha(Tensor(np.zeros((1, 2, 4))), params, "enc.0.attn.", heads=3)


def test_mha_default_output_shape():
    cfg = GeneratorConfig(depth=1, mlp_units=(8, 8), c1_filters=(2, 2, 2), c2_filters=(2, 2, 2))
    params = init_params(cfg, np.random.default_rng(0))
    out = mha(Tensor(np.zeros((1, 5, 64))), params, "enc.0.attn.", heads=8)
    assert out.shape == (1, 5, 64)


# ---------------------------------------------------------------- encoder


def test_encoder_permutation_equivariance():
    cfg = tiny_generator(depth=2, pos_embed=False)
    params = init_params(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((2, 5, 4))
    perm = np.array([3, 0, 4, 1, 2])
    a = encoder_forward(Tensor(x), params, cfg).data
    b = encoder_forward(Tensor(x[:, perm]), params, cfg).data
    assert np.allclose(a[:, perm], b, rtol=0, atol=1e-13)


def test_positional_embedding_breaks_equivariance():
    cfg = tiny_generator(depth=2)
    params = init_params(cfg, np.random.default_rng(0))
    n, plen = params["pos_embed"].shape[0], params["patch.weight"].shape[0]
    patches = np.random.default_rng(1).standard_normal((1, n, plen))
    perm = np.roll(np.arange(n), 1)
    a = encoder_forward(embed(Tensor(patches), params), params, cfg).data
    b = encoder_forward(embed(Tensor(patches[:, perm]), params), params, cfg).data
    assert not np.allclose(a[:, perm], b, atol=1e-6)


def test_depth_zero_is_identity():
    cfg = tiny_generator(depth=0)
    params = init_params(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((1, 3, 4))
    assert np.array_equal(encoder_forward(Tensor(x), params, cfg).data, x)


def test_feedforward_widths():
    params = init_params(GeneratorConfig(depth=1, c1_filters=(2, 2, 2), c2_filters=(2, 2, 2)),
                         np.random.default_rng(0))
    assert params["enc.0.ff.0.weight"].shape == (64, 2048)
    assert params["enc.0.ff.1.weight"].shape == (2048, 1024)
    assert params["enc.0.ff.2.weight"].shape == (1024, 64)


def test_encoder_gradient_on_toy():
    cfg = tiny_generator(depth=1, mlp_units=(5, 3))
    params = init_params(cfg, np.random.default_rng(0))
    x = Tensor(np.random.default_rng(1).standard_normal((1, 5, 4)), requires_grad=True)
    coef = np.random.default_rng(2).standard_normal((1, 5, 4))
    wq = params["enc.0.attn.q.weight"]
    w1 = params["enc.0.ff.1.weight"]

    def f(x, wq, w1):
        return (encoder_forward(x, params, cfg) * coef).sum()

    assert check_gradients(f, [x, wq, w1]) < 1e-3


# --------------------------------------------------------------- generate


def test_eval_mode_deterministic_and_batch_consistent(tiny_config):
    gen = Generator(tiny_config, seed=0)
    x = np.random.default_rng(0).standard_normal((4, 5, 62, 9))
    gen(x, train=True, rng=np.random.default_rng(0))           # initialise BN statistics
    a, b = gen(x, train=False).data, gen(x, train=False).data
    assert np.array_equal(a, b)
    twin = gen(np.stack([x[0], x[0]]), train=False).data
    assert np.array_equal(twin[0], twin[1])


def test_train_mode_differs_only_through_dropout(tiny_config):
    gen = Generator(tiny_config, seed=0)
    x = np.random.default_rng(0).standard_normal((4, 5, 62, 9))
    a = gen(x, train=True, rng=np.random.default_rng(1), update_stats=False).data
    b = gen(x, train=True, rng=np.random.default_rng(1), update_stats=False).data
    c = gen(x, train=True, rng=np.random.default_rng(2), update_stats=False).data
    assert np.array_equal(a, b) and not np.allclose(a, c)


def test_embeddings_finite_and_varied(tiny_config):
    gen = Generator(tiny_config, seed=0)
    x = np.random.default_rng(0).standard_normal((8, 5, 62, 9))
    emb = gen(x, train=True, rng=np.random.default_rng(0)).data
    assert np.all(np.isfinite(emb)) and emb.std(axis=0).min() > 0


def test_param_names_fixed_by_config(tiny_config):
    a = list(init_params(tiny_config, np.random.default_rng(0)))
    b = list(init_params(tiny_config, np.random.default_rng(9)))
    assert a == b
    assert "enc.0.attn.q.weight" in a and "cnn.conv6.weight" in a and "pos_embed" in a


@pytest.mark.parametrize("seed", range(5))
def test_every_parameter_gets_gradient(seed, tiny_config):
    """CE on random data reaches every parameter.

    Batch norm runs on running statistics here: in batch-statistics mode a
    conv bias is cancelled by the mean subtraction and its gradient is
    exactly zero by construction.
    """
    gen = Generator(tiny_config, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 5, 62, 9))
    gen(x, train=True, rng=np.random.default_rng(0))
    w = Tensor(rng.standard_normal((tiny_config.embed_dim, 3)), requires_grad=True)
    emb = gen(x, train=True, rng=np.random.default_rng(seed), update_stats=False, bn_train=False)
    cross_entropy(softmax(emb @ w), rng.integers(0, 3, 6)).backward()
    dead = [n for n, p in gen.params.items() if p.grad is None or not np.any(p.grad)]
    assert dead == []


def test_buffers_round_trip(tiny_config):
    gen = Generator(tiny_config, seed=0)
    gen(np.random.default_rng(0).standard_normal((3, 5, 62, 9)), train=True, rng=np.random.default_rng(0))
    other = Generator(tiny_config, seed=1)
    other.load_buffers(gen.buffers())
    for name in gen.stats:
        assert np.array_equal(other.stats[name].mean, gen.stats[name].mean)
        assert other.stats[name].initialized


def test_cnn_forward_function_matches_method(tiny_config):
    gen = Generator(tiny_config, seed=0)
    x = np.random.default_rng(0).standard_normal((2, 5, 62, 9))
    a = cnn_forward(x, gen.params, gen.stats, tiny_config, train=True, rng=np.random.default_rng(3),
                    update_stats=False).data
    b = gen.feature_map(x, train=True, rng=np.random.default_rng(3), update_stats=False).data
    assert np.array_equal(a, b)
