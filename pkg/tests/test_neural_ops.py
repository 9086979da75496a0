import numpy as np
import pytest

from stepsmith.neural.gradcheck import grad_check, promote
from stepsmith.neural.layers import ConvLstmCell, Dense, LstmCell, convlstm_forward, lstm_forward
from stepsmith.neural.losses import bce_loss, softmax_ce_loss
from stepsmith.neural.tensor import (
    Tensor,
    add,
    concat,
    conv3x3,
    dropout,
    leaky_relu,
    lstm_cell,
    matmul,
    maxpool_freq,
    mul,
    reshape,
    sigmoid,
    softmax,
    sumall,
    tanh,
    tensor,
)


def t64(rng, *shape):
    return tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def np_sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


class TestForwardValues:
    def test_leaky_relu_slope(self):
        out = leaky_relu(tensor([[-1.0, 2.0]]))
        assert np.allclose(out.data, [[-0.3, 2.0]])

    def test_softmax_uniform(self):
        out = softmax(tensor(np.zeros((2, 7))))
        assert np.allclose(out.data, 1.0 / 7.0)
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_sigmoid_extreme_inputs_stay_finite(self):
        # the sign-split form must not overflow on large-magnitude inputs
        with np.errstate(over="raise"):
            out = sigmoid(tensor([[-500.0, 0.0, 500.0]], dtype=np.float64))
        assert np.all(np.isfinite(out.data))
        assert out.data[0, 1] == 0.5
        mid = sigmoid(tensor([[-30.0, 30.0]], dtype=np.float64))
        assert 0.0 < mid.data[0, 0] < mid.data[0, 1] < 1.0

    def test_maxpool_band_counts(self):
        x = Tensor(np.zeros((2, 5, 80, 3)))
        assert maxpool_freq(x).data.shape == (2, 5, 26, 3)
        again = maxpool_freq(Tensor(np.zeros((2, 5, 26, 3))))
        assert again.data.shape == (2, 5, 8, 3)

    def test_maxpool_narrow_input_keeps_one_band(self):
        x = Tensor(np.arange(8.0).reshape(1, 2, 2, 2))
        out = maxpool_freq(x)
        assert out.data.shape == (1, 2, 1, 2)
        assert np.allclose(out.data[0, 0, 0], [2.0, 3.0])

    def test_maxpool_values(self):
        x = Tensor(np.array([[1.0, 5.0, 2.0, 9.0, 0.0, 3.0, 7.0]])[..., None])
        out = maxpool_freq(x)
        assert np.allclose(out.data[..., 0], [[5.0, 9.0]])

    def test_dropout_rate_zero_and_inference_are_identity(self):
        x = tensor(np.ones((4, 4)))
        assert dropout(x, 0.0, training=True, rng=np.random.default_rng(0)) is x
        assert dropout(x, 0.5, training=False) is x

    def test_dropout_expectation(self):
        rng = np.random.default_rng(1)
        x = tensor(np.full((200, 200), 3.0))
        out = dropout(x, 0.4, training=True, rng=rng)
        assert abs(out.data.mean() - 3.0) <= 0.02 * 3.0
        kept = out.data[out.data != 0]
        assert np.allclose(kept, 3.0 / 0.6)

    def test_dropout_needs_rng_in_training(self):
        with pytest.raises(ValueError, match="rng"):
            dropout(tensor(np.ones(3)), 0.5, training=True)

    def test_matmul_shape_error(self):
        with pytest.raises(ValueError, match="matmul"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


class TestBackwardBasics:
    def test_grad_accumulates_across_uses(self):
        x = tensor([2.0], requires_grad=True, dtype=np.float64)
        y = sumall(add(mul(x, x), x))  # x^2 + x -> dy/dx = 2x + 1 = 5
        y.backward()
        assert np.allclose(x.grad, [5.0])

    def test_broadcast_bias_gradient(self):
        w = tensor(np.ones((3, 2)), requires_grad=True, dtype=np.float64)
        b = tensor(np.zeros(2), requires_grad=True, dtype=np.float64)
        x = Tensor(np.ones((5, 3), dtype=np.float64))
        out = sumall(add(matmul(x, w), b))
        out.backward()
        assert np.allclose(b.grad, [5.0, 5.0])
        assert np.allclose(w.grad, 5.0)

    @pytest.mark.parametrize(
        "build",
        [
            lambda x: sumall(mul(x, x)),
            lambda x: sumall(leaky_relu(x)),
            lambda x: sumall(sigmoid(x)),
            lambda x: sumall(tanh(x)),
            lambda x: sumall(mul(softmax(x), x)),
            lambda x: sumall(reshape(mul(x, x), (x.data.size,))),
            lambda x: sumall(concat([x, mul(x, x)], axis=1)),
        ],
    )
    def test_elementwise_gradients(self, build):
        rng = np.random.default_rng(2)
        x = t64(rng, 4, 5)
        err = grad_check(lambda: build(x), [x])
        assert err < 1e-6

    def test_maxpool_gradient(self):
        rng = np.random.default_rng(3)
        x = t64(rng, 2, 3, 7, 2)
        err = grad_check(lambda: sumall(mul(maxpool_freq(x), x2c(x))), [x])
        assert err < 1e-6

    def test_dropout_gradient(self):
        rng = np.random.default_rng(4)
        x = t64(rng, 6, 6)
        err = grad_check(
            lambda: sumall(dropout(x, 0.3, training=True, rng=np.random.default_rng(7))),
            [x],
        )
        assert err < 1e-6


def x2c(x):
    # a fixed tensor shaped like maxpool's output, to give the loss curvature
    f_out = max(1, x.data.shape[-2] // 3)
    rng = np.random.default_rng(99)
    shape = x.data.shape[:-2] + (f_out,) + x.data.shape[-1:]
    return Tensor(rng.standard_normal(shape))


class TestConv:
    def test_conv_matches_direct_convolution(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((2, 4, 5, 3)))
        k = Tensor(rng.standard_normal((3, 3, 3, 2)))
        b = Tensor(rng.standard_normal(2))
        out = conv3x3(x, k, b)
        # direct nested-loop oracle with zero padding
        expect = np.zeros((2, 4, 5, 2))
        for n in range(2):
            for i in range(4):
                for j in range(5):
                    acc = b.data.copy()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            yy, xx = i + dy, j + dx
                            if 0 <= yy < 4 and 0 <= xx < 5:
                                acc = acc + x.data[n, yy, xx] @ k.data[dy + 1, dx + 1]
                    expect[n, i, j] = acc
        assert np.allclose(out.data, expect, atol=1e-12)

    def test_conv_gradients(self):
        rng = np.random.default_rng(6)
        x = t64(rng, 2, 3, 4, 2)
        k = t64(rng, 3, 3, 2, 3)
        b = t64(rng, 3)
        err = grad_check(lambda: sumall(tanh(conv3x3(x, k, b))), [x, k, b])
        assert err < 1e-6


def lstm_oracle(xs, w, u, b, units):
    """Step-by-step plain-numpy LSTM, gate order (i, f, g, o)."""
    h = np.zeros(units)
    c = np.zeros(units)
    out = []
    for x_t in xs:
        pre = x_t @ w + h @ u + b
        i = np_sigmoid(pre[:units])
        f = np_sigmoid(pre[units : 2 * units])
        g = np.tanh(pre[2 * units : 3 * units])
        o = np_sigmoid(pre[3 * units :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h.copy())
    return np.array(out)


class TestLstm:
    def test_cell_step_matches_oracle(self):
        rng = np.random.default_rng(7)
        units = 3
        pre = rng.standard_normal((2, 4 * units))
        c_prev = rng.standard_normal((2, units))
        h, c = lstm_cell(Tensor(pre), Tensor(c_prev))
        i = np_sigmoid(pre[:, :units])
        f = np_sigmoid(pre[:, units : 2 * units])
        g = np.tanh(pre[:, 2 * units : 3 * units])
        o = np_sigmoid(pre[:, 3 * units :])
        expect_c = f * c_prev + i * g
        assert np.allclose(c.data, expect_c, atol=1e-12)
        assert np.allclose(h.data, o * np.tanh(expect_c), atol=1e-12)

    def test_cell_gradients(self):
        rng = np.random.default_rng(8)
        pre = t64(rng, 3, 12)
        c_prev = t64(rng, 3, 3)

        def loss():
            h, c = lstm_cell(pre, c_prev)
            return sumall(add(mul(h, h), c))

        err = grad_check(loss, [pre, c_prev])
        assert err < 1e-6

    def test_forward_zero_weights(self):
        cell = LstmCell(4, 3, np.random.default_rng(9))
        for p in cell.params().values():
            p.data = np.zeros_like(p.data)
        out = lstm_forward(cell, np.zeros((5, 4), dtype=np.float32))
        assert np.all(out.data == 0.0)

    def test_forward_t1_equals_single_step(self):
        rng = np.random.default_rng(10)
        cell = LstmCell(4, 3, rng)
        x = rng.standard_normal((1, 4)).astype(np.float32)
        seq_out = lstm_forward(cell, x)
        h, _ = cell.step(
            Tensor(x), Tensor(np.zeros((1, 3), np.float32)), Tensor(np.zeros((1, 3), np.float32))
        )
        assert np.array_equal(seq_out.data, h.data)

    def test_forward_matches_oracle(self):
        rng = np.random.default_rng(11)
        cell = LstmCell(5, 4, rng)
        promote(cell.params().values())
        xs = rng.standard_normal((6, 5))
        out = lstm_forward(cell, xs)
        expect = lstm_oracle(xs, cell.w.data, cell.u.data, cell.bias.data, 4)
        assert np.allclose(out.data, expect, atol=1e-6)

    def test_sequence_gradients(self):
        rng = np.random.default_rng(12)
        cell = LstmCell(3, 2, rng)
        params = list(cell.params().values())
        promote(params)
        xs = rng.standard_normal((4, 3))
        err = grad_check(lambda: sumall(lstm_forward(cell, xs)), params)
        assert err < 1e-5


class TestConvLstm:
    def test_zero_input_zero_bias_gives_zero_hidden(self):
        rng = np.random.default_rng(13)
        cell = ConvLstmCell(2, 3, rng)
        cell.bias.data = np.zeros_like(cell.bias.data)
        out = convlstm_forward(cell, np.zeros((3, 4, 5, 2), np.float32))
        assert np.all(out.data == 0.0)

    def test_1x1_spatial_reduces_to_lstm(self):
        rng = np.random.default_rng(14)
        conv_cell = ConvLstmCell(3, 4, rng)
        lstm = LstmCell(3, 4, np.random.default_rng(0))
        # with 1x1 spatial input only the center tap ever sees data
        lstm.w.data = conv_cell.kernel.data[1, 1, :3, :].copy()
        lstm.u.data = conv_cell.kernel.data[1, 1, 3:, :].copy()
        lstm.bias.data = conv_cell.bias.data.copy()
        xs = rng.standard_normal((5, 3)).astype(np.float32)
        conv_out = convlstm_forward(cell=conv_cell, sequence=xs.reshape(5, 1, 1, 3))
        lstm_out = lstm_forward(lstm, xs)
        assert np.allclose(conv_out.data.reshape(5, 4), lstm_out.data, atol=1e-6)

    def test_translation_equivariance(self):
        rng = np.random.default_rng(15)
        cell = ConvLstmCell(2, 3, rng)
        base = rng.standard_normal((2, 8, 9, 2)).astype(np.float32)
        shifted = np.roll(base, shift=(2, 1), axis=(1, 2))
        out_a = convlstm_forward(cell, base).data
        out_b = convlstm_forward(cell, shifted).data
        # compare cells whose 2-step receptive field avoids both the zero
        # padding and the rows/cols that np.roll wrapped around
        assert np.allclose(out_b[:, 4:6, 3:7], out_a[:, 2:4, 2:6], atol=1e-5)

    def test_cell_gradients_t2(self):
        rng = np.random.default_rng(16)
        cell = ConvLstmCell(2, 2, rng)
        params = list(cell.params().values())
        promote(params)
        xs = rng.standard_normal((2, 4, 6, 2))
        err = grad_check(lambda: sumall(convlstm_forward(cell, xs)), params)
        assert err < 1e-5


class TestLosses:
    def test_bce_exact_match_hits_clamp_floor(self):
        pred = Tensor(np.array([[1.0, 0.0]], dtype=np.float32))
        loss = bce_loss(pred, np.array([[1.0, 0.0]], dtype=np.float32))
        assert 0.0 < float(loss.data) <= 1.2e-7

    def test_bce_half_is_ln2(self):
        pred = Tensor(np.full((4, 3), 0.5))
        loss = bce_loss(pred, np.random.default_rng(17).integers(0, 2, (4, 3)).astype(np.float64))
        assert np.isclose(float(loss.data), np.log(2.0), atol=1e-7)

    def test_bce_rejects_nonbinary_targets(self):
        with pytest.raises(ValueError, match="0 or 1"):
            bce_loss(Tensor(np.full((2, 2), 0.5)), np.full((2, 2), 0.3))

    def test_bce_gradient(self):
        rng = np.random.default_rng(18)
        x = t64(rng, 3, 4)
        target = rng.integers(0, 2, (3, 4)).astype(np.float64)
        err = grad_check(lambda: bce_loss(sigmoid(x), target), [x])
        assert err < 1e-6

    def test_ce_uniform_is_ln_k(self):
        loss = softmax_ce_loss(Tensor(np.zeros((5, 256), np.float32)), np.arange(5))
        assert np.isclose(float(loss.data), np.log(256.0), atol=1e-6)

    def test_ce_invalid_target(self):
        with pytest.raises(ValueError, match="outside"):
            softmax_ce_loss(Tensor(np.zeros((2, 4))), np.array([1, 4]))

    def test_ce_gradient(self):
        rng = np.random.default_rng(19)
        x = t64(rng, 4, 6)
        target = rng.integers(0, 6, 4)
        err = grad_check(lambda: softmax_ce_loss(x, target), [x])
        assert err < 1e-6


class TestDenseLayer:
    def test_zero_init_head_outputs(self):
        head = Dense(7, 5, zero_init=True)
        out = softmax(head(Tensor(np.ones((2, 7), np.float32))))
        assert np.allclose(out.data, 0.2)
        sig = sigmoid(head(Tensor(np.ones((2, 7), np.float32))))
        assert np.allclose(sig.data, 0.5)

    def test_dense_gradcheck(self):
        rng = np.random.default_rng(20)
        layer = Dense(4, 3, rng)
        params = list(layer.params().values())
        promote(params)
        x = rng.standard_normal((5, 4))
        err = grad_check(lambda: sumall(tanh(layer(Tensor(x)))), params)
        assert err < 1e-6
