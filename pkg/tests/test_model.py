import numpy as np
import pytest

from ctnet import autograd as ag
from ctnet.autograd import Variable
from ctnet.config import DESK_MODEL, FULL_MODEL, TINY_MODEL, ModelConfig
from ctnet.errors import ConfigError, ShapeError
from ctnet.model import (build_model, cast_params, fc_branch, forward, fuse_and_predict,
                         multi_head_attention, parameter_count, se_attention, se_residual_block,
                         transformer_branch)
from ctnet.rng import Rng


def enumerate_param_count(cfg):
    """Count by walking the architecture layer by layer."""
    total = 0
    conv = lambda cin, cout: cout * cin * 9 + cout
    norm = lambda c: 2 * c
    lin = lambda i, o: i * o + o
    ch = cfg.stage_channels
    total += conv(cfg.renum_ct, ch[0]) + norm(ch[0])
    for i, c in enumerate(ch):
        total += conv(c, c) + norm(c) + conv(c, c)
        total += lin(c, c // cfg.se_reduction) + lin(c // cfg.se_reduction, c)
        if i + 1 < len(ch):
            total += conv(c, ch[i + 1]) + norm(ch[i + 1])
    d, m = cfg.token_width, cfg.mlp_hidden
    total += 2 * norm(d) + 4 * lin(d, d) + lin(d, m) + lin(m, d) + lin(d, 2)
    total += lin(cfg.feature_width, 2)
    return total


@pytest.mark.parametrize("cfg", [DESK_MODEL, TINY_MODEL, FULL_MODEL])
def test_parameter_count(cfg):
    assert parameter_count(build_model(cfg, Rng(0))) == enumerate_param_count(cfg)


def test_desk_param_count_value():
    assert parameter_count(build_model(DESK_MODEL, Rng(0))) == 126960


def test_build_is_seed_deterministic():
    a, b = build_model(DESK_MODEL, Rng(9)), build_model(DESK_MODEL, Rng(9))
    assert all(a[k].value.tobytes() == b[k].value.tobytes() for k in a)
    c = build_model(DESK_MODEL, Rng(10))
    assert any(a[k].value.tobytes() != c[k].value.tobytes() for k in a)


def test_init_scheme():
    p = build_model(DESK_MODEL, Rng(0))
    w = p["stages.1.block.conv1.weight"].value
    assert np.abs(w).max() <= np.sqrt(1 / (32 * 9))
    assert (p["fc.bias"].value == 0).all()
    assert (p["stem.norm.gamma"].value == 1).all() and (p["stem.norm.beta"].value == 0).all()


def test_config_invariants():
    with pytest.raises(ConfigError, match="tokens"):
        ModelConfig(stage_channels=(16, 32, 60), tokens=8)
    with pytest.raises(ConfigError, match="heads"):
        ModelConfig(tokens=4, heads=3)
    with pytest.raises(ConfigError, match="classes"):
        ModelConfig(classes=3)


def _x(cfg, batch, seed=0, dtype=np.float32):
    return Rng(seed).normal((batch, cfg.renum_ct, cfg.image_size, cfg.image_size)).astype(dtype)


# -------------------------------------------------------------- SE block

def _block_params(c, r, seed=0):
    return {k: v for k, v in build_model(
        ModelConfig(renum_ct=1, image_size=4, stage_channels=(c,), se_reduction=r, tokens=1, heads=1),
        Rng(seed), np.float64).items() if k.startswith("stages.0.block")}


def test_se_zero_excitation_halves_input():
    p = _block_params(8, 4)
    p["stages.0.block.se.fc2.weight"].value[:] = 0
    x = Variable(Rng(1).normal((2, 8, 5, 5)))
    out, gate = se_attention(x, p, "stages.0.block.se", return_gate=True)
    np.testing.assert_array_equal(gate.value, 0.5)
    np.testing.assert_array_equal(out.value, 0.5 * x.value)


def test_se_gate_strictly_inside_unit_interval():
    p = _block_params(8, 4)
    for k in ("fc1.weight", "fc2.weight"):
        p[f"stages.0.block.se.{k}"].value *= 10
    x = Variable(10 * Rng(2).normal((3, 8, 4, 4)))
    out, gate = se_attention(x, p, "stages.0.block.se", return_gate=True)
    assert ((gate.value > 0) & (gate.value < 1)).all()
    assert out.shape == x.shape


def test_residual_block_zero_weights_is_relu():
    p = _block_params(16, 4)
    for v in p.values():
        v.value[:] = 0
    x = Variable(Rng(3).normal((2, 16, 8, 8)))
    out = se_residual_block(x, p, "stages.0.block", 4)
    np.testing.assert_array_equal(out.value, np.maximum(x.value, 0))
    assert out.shape == (2, 16, 8, 8)


def test_residual_block_channel_mismatch():
    p = _block_params(8, 4)
    with pytest.raises(ShapeError):
        se_residual_block(Variable(np.zeros((1, 4, 3, 3))), p, "stages.0.block", 4)


def test_residual_block_gradcheck():
    p = _block_params(4, 2, seed=5)
    x = Variable(Rng(4).normal((2, 4, 4, 4)), requires_grad=True)
    r = Rng(6).normal((2, 4, 4, 4))
    f = lambda: ag.sum_(ag.mul(se_residual_block(x, p, "stages.0.block", 2), r))
    assert ag.grad_check(f, [x, *p.values()]) < 1e-4


# ---------------------------------------------------------- transformer

def test_single_token_attention_is_value_projection():
    cfg = ModelConfig(renum_ct=1, image_size=4, stage_channels=(8,), tokens=1, heads=2, se_reduction=4)
    p = build_model(cfg, Rng(0), np.float64)
    x = Variable(Rng(1).normal((3, 1, 8)))
    out, w = multi_head_attention(x, p, "transformer.attn", 2, return_weights=True)
    assert (w.value == 1.0).all()
    v = x.value @ p["transformer.attn.v.weight"].value + p["transformer.attn.v.bias"].value
    expected = v @ p["transformer.attn.o.weight"].value + p["transformer.attn.o.bias"].value
    np.testing.assert_allclose(out.value, expected, atol=1e-12)


def test_attention_rows_sum_to_one():
    p = build_model(DESK_MODEL, Rng(0), np.float64)
    feat = Variable(5 * Rng(1).normal((4, 64)))
    _, w = transformer_branch(feat, p, DESK_MODEL, return_attention=True)
    assert w.shape == (4, 4, 4, 4)
    np.testing.assert_allclose(w.value.sum(axis=-1), 1.0, atol=1e-6)


def test_token_permutation_invariance():
    cfg = DESK_MODEL
    p = build_model(cfg, Rng(2), np.float64)
    feat = Rng(3).normal((2, 64))
    perm = [2, 0, 3, 1]
    permuted = feat.reshape(2, 4, 16)[:, perm].reshape(2, 64)
    a = transformer_branch(Variable(feat), p, cfg).value
    b = transformer_branch(Variable(permuted), p, cfg).value
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_transformer_shape_error():
    p = build_model(DESK_MODEL, Rng(0))
    with pytest.raises(ShapeError):
        transformer_branch(Variable(np.zeros((2, 60))), p, DESK_MODEL)


# ----------------------------------------------------------- fc + fusion

def test_fc_branch_zero_and_linear():
    p = build_model(DESK_MODEL, Rng(0), np.float64)
    feat = Rng(1).normal((3, 64))
    out = fc_branch(Variable(feat), p)
    assert out.shape == (3, 2)
    np.testing.assert_allclose(fc_branch(Variable(2.5 * feat), p).value, 2.5 * out.value, rtol=1e-12)
    p["fc.weight"].value[:] = 0
    assert (fc_branch(Variable(feat), p).value == 0).all()
    pred = fuse_and_predict(np.zeros((1, 2)), fc_branch(Variable(feat[:1]), p), "fc")[0]
    assert pred.probabilities == (0.5, 0.5)
    assert pred.label == "COVID-19"  # tie goes to class 0


def test_fusion_identities():
    lf = np.array([[0.3, -1.2], [2.0, 0.5]])
    zero = fuse_and_predict(np.zeros_like(lf), lf, "fused")
    fc = fuse_and_predict(np.zeros_like(lf), lf, "fc")
    assert [p.probabilities for p in zero] == [p.probabilities for p in fc]
    doubled = fuse_and_predict(lf, lf, "fused")
    ref = np.exp(2 * lf) / np.exp(2 * lf).sum(axis=1, keepdims=True)
    for row, p in enumerate(doubled):
        np.testing.assert_allclose(p.probabilities, ref[row], rtol=1e-12)
        assert p.label == fc[row].label
        assert sum(p.probabilities) == pytest.approx(1.0, abs=1e-6)


# ---------------------------------------------------------------- forward

def test_forward_desk_shapes():
    p = build_model(DESK_MODEL, Rng(0))
    out = forward(_x(DESK_MODEL, 2), p, DESK_MODEL)
    assert out.logits.shape == out.fc_logits.shape == out.transformer_logits.shape == (2, 2)
    preds = out.predictions("fused")
    for pr in preds:
        assert abs(sum(pr.probabilities) - 1) < 1e-6
        assert pr.label == ("COVID-19", "Non-COVID-19")[int(np.argmax(pr.probabilities))]


def test_forward_rejects_wrong_size():
    p = build_model(DESK_MODEL, Rng(0))
    with pytest.raises(ShapeError):
        forward(np.zeros((1, 8, 16, 16), np.float32), p, DESK_MODEL)


def test_batch_rows_are_independent():
    cfg = TINY_MODEL
    p = build_model(cfg, Rng(1), np.float64)
    a, b = _x(cfg, 2, 1, np.float64), _x(cfg, 3, 2, np.float64)
    whole = forward(np.concatenate([a, b]), p, cfg).logits.value
    parts = np.concatenate([forward(a, p, cfg).logits.value, forward(b, p, cfg).logits.value])
    np.testing.assert_allclose(whole, parts, atol=1e-10)
    same = forward(np.concatenate([a[:1], a[:1]]), p, cfg).logits.value
    np.testing.assert_allclose(same[0], same[1], atol=1e-10)


def test_zeroed_transformer_head_fused_equals_fc():
    p = build_model(DESK_MODEL, Rng(4))
    p["transformer.head.weight"].value[:] = 0
    p["transformer.head.bias"].value[:] = 0
    out = forward(_x(DESK_MODEL, 3, 5), p, DESK_MODEL)
    assert out.predictions("fused") != out.predictions("fc")  # modes differ in the mode tag only
    assert [q.probabilities for q in out.predictions("fused")] == [q.probabilities for q in out.predictions("fc")]


def test_full_model_gradcheck_tiny():
    cfg = TINY_MODEL
    p = build_model(cfg, Rng(7), np.float64)
    x = _x(cfg, 2, 8, np.float64)
    f = lambda: ag.cross_entropy(forward(x, p, cfg).logits, [0, 1])
    assert ag.grad_check(f, list(p.values())) < 1e-4


def test_cast_params_keeps_values():
    p = build_model(TINY_MODEL, Rng(0))
    q = cast_params(p, np.float64)
    assert all(q[k].value.dtype == np.float64 and np.array_equal(q[k].value, p[k].value) for k in p)
