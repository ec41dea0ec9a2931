import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecg_sbncl import vit1d
from ecg_sbncl.vit1d import LengthNotDivisible, ModelConfig, encode_tokens, forward, init_params, param_count, patchify

PINNED_COUNT = 1_199_232  # closed-form sum over the declared shapes, pinned


def test_patchify_counts_and_layout():
    assert patchify(np.zeros(1000), 20).shape == (50, 20)
    p = patchify(np.arange(40), 20)
    assert np.array_equal(p[0], np.arange(20)) and np.array_equal(p[1], np.arange(20, 40))
    assert np.array_equal(p.reshape(-1), np.arange(40))


def test_patchify_rejects_ragged_length():
    with pytest.raises(LengthNotDivisible):
        patchify(np.zeros(1001), 20)
    with pytest.raises(LengthNotDivisible):
        ModelConfig(input_len=1001)


def test_default_param_count_pinned():
    n = param_count(ModelConfig())
    assert n == PINNED_COUNT
    assert abs(n - vit1d.REFERENCE_PARAM_COUNT) / vit1d.REFERENCE_PARAM_COUNT < 0.01


def test_hand_summed_tiny_count():
    cfg = ModelConfig(input_len=40, patch_size=20, model_dim=4, n_blocks=1, n_heads=1)
    # patch 20*4+4, cls 4, pos 3*4, block (60+20+16+80+68), final norm 8
    assert param_count(cfg) == 84 + 4 + 12 + 244 + 8 == 352


@given(st.integers(1, 8), st.sampled_from([4, 8, 16]))
def test_count_is_affine_in_depth(blocks, dim):
    one = param_count(ModelConfig(model_dim=dim, n_blocks=1, n_heads=2))
    two = param_count(ModelConfig(model_dim=dim, n_blocks=2, n_heads=2))
    many = param_count(ModelConfig(model_dim=dim, n_blocks=blocks, n_heads=2))
    assert many == one + (blocks - 1) * (two - one)


@pytest.mark.parametrize("cfg", [ModelConfig(), ModelConfig(model_dim=32, n_blocks=2), ModelConfig(input_len=40, model_dim=8, n_blocks=1, n_heads=1)])
def test_count_matches_tensors(cfg):
    params = init_params(cfg, 0)
    assert sum(v.size for v in params.values()) == param_count(cfg)
    assert {k: v.shape for k, v in params.items()} == vit1d.param_shapes(cfg)


def test_init_scheme():
    cfg = ModelConfig(model_dim=16, n_blocks=2, n_heads=2)
    a, b, c = init_params(cfg, 7), init_params(cfg, 7), init_params(cfg, 8)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)
    for k, v in a.items():
        if k.endswith(("ln1.weight", "ln2.weight")) or k == "norm.weight":
            assert np.all(v == 1.0)
        elif k.endswith(".bias"):
            assert np.all(v == 0.0)
        else:
            assert np.abs(v).max() <= 0.04 + 1e-15


def test_truncated_normal_statistics():
    x = vit1d.truncated_normal(np.random.default_rng(0), (200_000,))
    # std of N(0,1) truncated at +-2 is 0.8796
    assert x.std() == pytest.approx(0.02 * 0.8796, rel=0.01)


def test_forward_shape_and_determinism():
    cfg = ModelConfig(model_dim=32, n_blocks=2, n_heads=4)
    params = init_params(cfg, 0)
    x = np.random.default_rng(1).standard_normal((3, 1000))
    out = forward(x, params, cfg).data
    assert out.shape == (3, 32)
    assert forward(x[0], params, cfg).data.shape == (32,)
    assert np.array_equal(out[0], forward(x[0], params, cfg).data)
    assert np.array_equal(forward(np.stack([x[1], x[1]]), params, cfg).data[0], out[1])


def test_full_model_outputs_128():
    cfg = ModelConfig()
    out = forward(np.zeros(1000) + np.sin(np.arange(1000) / 7), init_params(cfg, 0), cfg).data
    assert out.shape == (128,) and np.isfinite(out).all()


def test_patch_permutation_leaves_class_token_unchanged():
    cfg = ModelConfig(input_len=200, model_dim=16, n_blocks=1, n_heads=2)
    params = init_params(cfg, 3)
    params["pos_embed"] = np.zeros_like(params["pos_embed"])
    x = np.random.default_rng(4).standard_normal(200)
    perm = np.random.default_rng(5).permutation(cfg.n_patches)
    xp = patchify(x, 20)[perm].reshape(-1)
    h = encode_tokens(x, params, cfg, n_blocks=1).data[0]
    hp = encode_tokens(xp, params, cfg, n_blocks=1).data[0]
    assert np.allclose(h[0], hp[0], atol=1e-13)
    assert np.allclose(h[1:][perm], hp[1:], atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 999), st.integers(0, 2**31))
def test_small_input_perturbation_is_small(i, seed):
    cfg = ModelConfig(model_dim=32, n_blocks=2, n_heads=4)
    params = init_params(cfg, 0)
    x = np.random.default_rng(seed).standard_normal(1000)
    y = x.copy()
    y[i] += 1e-8
    assert np.abs(forward(x, params, cfg).data - forward(y, params, cfg).data).max() < 1e-2


def test_reduced_encoder_grad_check():
    from ecg_sbncl.sbncl import gradcheck_model

    res = gradcheck_model(model_dim=8, n_blocks=1, input_len=40, patch_size=20, n_heads=1, seed=0)
    assert res.max_rel_error < 1e-5
    assert res.n_scalars > 352
