import math
from decimal import Decimal, localcontext

import numpy as np
import pytest

from polyseq import tensor as T
from polyseq.errors import ShapeError
from polyseq.model import (
    ModelConfig,
    RunState,
    attention,
    encoder_forward,
    init_encoder,
    init_mlm_head,
    init_regression_head,
    layer_of,
    mlm_head,
    positional_encoding,
    regression_head,
)
from polyseq.tensor import Tensor
from gradcheck import rel_error


def small(**kw):
    base = dict(vocab_size=20, d_model=8, n_layers=2, n_heads=2, max_length=12)
    base.update(kw)
    return ModelConfig(**base)


def test_pe_position_zero():
    pe = positional_encoding(4, 16)
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)


def test_pe_reference_values():
    pe = positional_encoding(2, 768)
    assert pe[1, 0] == pytest.approx(math.sin(1.0), abs=1e-12)
    assert pe[1, 766] == pytest.approx(math.sin(1 / 10000 ** (766 / 768)), abs=1e-15)
    # independent evaluation in 50-digit decimal arithmetic
    with localcontext() as ctx:
        ctx.prec = 50
        angle = 1 / Decimal(10000) ** (Decimal(766) / Decimal(768))
        sin = angle - angle**3 / 6 + angle**5 / 120
    assert pe[1, 766] == pytest.approx(float(sin), abs=1e-15)
    assert pe[1, 766] == pytest.approx(1.0243e-4, rel=1e-4)


def test_pe_odd_width():
    pe = positional_encoding(3, 5)
    assert pe.shape == (3, 5)
    assert pe[2, 4] == pytest.approx(math.sin(2 / 10000 ** (4 / 5)), abs=1e-12)


def test_attention_hand_case(f64):
    q = Tensor(np.ones((1, 1, 2, 1)))
    k = Tensor(np.array([1.0, -1.0]).reshape(1, 1, 2, 1))
    out = attention(q, k, k)
    np.testing.assert_allclose(out.weights[0, 0, 0], [0.8808, 0.1192], atol=1e-4)


def test_attention_zero_query_is_mean_of_unmasked(f64):
    rng = np.random.default_rng(0)
    q = Tensor(np.zeros((1, 1, 4, 3)))
    k = Tensor(rng.standard_normal((1, 1, 4, 3)))
    v = Tensor(rng.standard_normal((1, 1, 4, 3)))
    out = attention(q, k, v, np.array([[1, 1, 1, 0]]))
    np.testing.assert_allclose(out.weights[0, 0], np.tile([1 / 3, 1 / 3, 1 / 3, 0], (4, 1)), atol=1e-12)
    np.testing.assert_allclose(out.context.data[0, 0], v.data[0, 0, :3].mean(axis=0), atol=1e-12)


def test_attention_single_survivor():
    rng = np.random.default_rng(1)
    q, k, v = (Tensor(rng.standard_normal((2, 2, 3, 4))) for _ in range(3))
    out = attention(q, k, v, np.array([[0, 1, 0], [1, 0, 0]]))
    np.testing.assert_allclose(out.weights[0, :, :, 1], 1.0)
    np.testing.assert_allclose(out.weights[1, :, :, 0], 1.0)


def test_attention_shape_errors():
    with pytest.raises(ShapeError):
        attention(Tensor(np.ones((1, 2, 3))), Tensor(np.ones((1, 2, 3))), Tensor(np.ones((1, 2, 3))))
    x = Tensor(np.ones((1, 1, 3, 2)))
    with pytest.raises(ShapeError):
        attention(x, x, x, np.ones((1, 4)))


def test_encoder_shapes_and_eval_determinism():
    cfg = small()
    params = init_encoder(cfg, np.random.default_rng(0))
    ids = np.array([[2, 7, 8, 9, 3, 0], [2, 5, 3, 0, 0, 0]])
    mask = (ids != 0).astype(int)
    a = encoder_forward(ids, mask, cfg, params)
    b = encoder_forward(ids, mask, cfg, params)
    assert a.hidden.shape == (2, 6, 8)
    assert len(a.attentions) == 2 and a.attentions[0].shape == (2, 2, 6, 6)
    np.testing.assert_array_equal(a.hidden.data, b.hidden.data)


def test_padding_does_not_change_real_positions(f64):
    cfg = small()
    params = init_encoder(cfg, np.random.default_rng(0))
    short = np.array([[2, 7, 8, 3]])
    long = np.array([[2, 7, 8, 3, 0, 0, 0]])
    a = encoder_forward(short, np.ones_like(short), cfg, params).hidden.data
    b = encoder_forward(long, (long != 0).astype(int), cfg, params).hidden.data
    np.testing.assert_allclose(a[0], b[0, :4], atol=1e-6)


def test_training_dropout_varies_with_step():
    cfg = small(dropout_hidden=0.3)
    params = init_encoder(cfg, np.random.default_rng(0))
    ids = np.array([[2, 7, 8, 3]])
    m = np.ones_like(ids)
    a = encoder_forward(ids, m, cfg, params, RunState(True, 0, 1)).hidden.data
    b = encoder_forward(ids, m, cfg, params, RunState(True, 0, 1)).hidden.data
    c = encoder_forward(ids, m, cfg, params, RunState(True, 0, 2)).hidden.data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_mlm_head_uniform_when_decoder_zero():
    cfg = small()
    rng = np.random.default_rng(0)
    params = init_mlm_head(cfg, rng, init_encoder(cfg, rng))
    params["mlm.decoder.weight"].data[:] = 0
    hidden = encoder_forward(np.array([[2, 5, 3]]), np.ones((1, 3)), cfg, params).hidden
    logits = mlm_head(hidden, params, cfg)
    assert logits.shape == (1, 3, 20)
    probs = T.softmax(logits).data
    np.testing.assert_allclose(probs, 1 / 20, atol=1e-6)


def test_tied_mlm_head_has_no_decoder_matrix():
    cfg = small(tie_mlm_weights=True)
    rng = np.random.default_rng(0)
    params = init_mlm_head(cfg, rng, init_encoder(cfg, rng))
    assert "mlm.decoder.weight" not in params
    hidden = encoder_forward(np.array([[2, 5, 3]]), np.ones((1, 3)), cfg, params).hidden
    assert mlm_head(hidden, params, cfg).shape == (1, 3, 20)


def test_regression_head_zero_weights_give_bias():
    cfg = small()
    rng = np.random.default_rng(0)
    params = init_regression_head(cfg, rng, init_encoder(cfg, rng))
    params["reg.out.weight"].data[:] = 0
    params["reg.out.bias"].data[:] = 1.25
    hidden = Tensor(rng.standard_normal((3, 4, 8)))
    out = regression_head(hidden, params, cfg)
    assert out.shape == (3, 1)
    np.testing.assert_array_equal(out.data, 1.25)


def test_regression_head_gradients(f64):
    cfg = small()
    rng = np.random.default_rng(0)
    params = init_regression_head(cfg, rng, init_encoder(cfg, rng))
    hidden = Tensor(rng.standard_normal((2, 3, 8)))

    def value():
        return float(regression_head(hidden, params, cfg).data.sum())

    regression_head(hidden, params, cfg).sum().backward()
    for name in ("reg.dense.weight", "reg.out.weight", "reg.out.bias"):
        p = params[name]
        for index in list(np.ndindex(p.shape))[:10]:
            old = p.data[index]
            h = 1e-5 * max(1.0, abs(old))
            p.data[index] = old + h
            up = value()
            p.data[index] = old - h
            down = value()
            p.data[index] = old
            assert rel_error(p.grad[index], (up - down) / (2 * h)) < 1e-4


def test_config_validation():
    from polyseq.errors import ConfigError

    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=10, d_model=10, n_heads=3)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=10, dropout_hidden=1.0)


def test_layer_names():
    cfg = small()
    params = init_encoder(cfg, np.random.default_rng(0))
    layers = {layer_of(n) for n in params}
    assert layers == {None, 0, 1}
    assert params["embed.tokens.weight"].shape == (20, 8)


def test_input_longer_than_max_length():
    cfg = small(max_length=4)
    params = init_encoder(cfg, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        encoder_forward(np.ones((1, 5), dtype=int), np.ones((1, 5)), cfg, params)
