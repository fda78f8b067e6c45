"""Layer-by-layer gradient verification plus optimizer and format checks.

Every analytic gradient is compared against a central finite difference
with step 1e-5; the relative error bound is 1e-4 throughout.
"""

import numpy as np
import pytest

from scabench.errors import DataFormatError, TrainingDiverged
from scabench.nn import (Adam, ChannelAttention, Conv2D, Embedding, Flatten,
                         FullyConnected, GRUCell, NearestUpsample, ReLU,
                         Reshape, Sequential, Sigmoid, Softmax,
                         SpatialAttention, Tanh, bce_with_logits,
                         check_gradients, finite_difference, l1_loss,
                         load_checkpoint, mse_loss, relative_error,
                         save_checkpoint, softmax_cross_entropy)

TOL = 1e-4


def grad_pairs(layer, x, seed):
    """Analytic input/parameter gradients of sum(forward(x) * R)."""
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(layer.forward(x).shape)

    def loss_fn():
        return float((layer.forward(x) * r).sum())

    for _, owner, key in layer.named_parameters():
        owner.grads[key][...] = 0.0
    layer.forward(x)
    dx = layer.backward(r)
    pairs = [(x, dx)]
    pairs += [(owner.params[key], owner.grads[key].copy())
              for _, owner, key in layer.named_parameters()]
    return loss_fn, pairs


def assert_layer_gradients(layer, x, seed=0):
    loss_fn, pairs = grad_pairs(layer, x, seed)
    assert check_gradients(loss_fn, pairs) < TOL


class TestLayerGradients:
    def test_conv_stride1(self):
        rng = np.random.default_rng(10)
        layer = Conv2D(2, 3, 3, stride=1, pad=1, rng=rng)
        assert_layer_gradients(layer, rng.standard_normal((2, 2, 5, 5)))

    def test_conv_stride2(self):
        rng = np.random.default_rng(11)
        layer = Conv2D(3, 2, 3, stride=2, pad=1, rng=rng)
        assert_layer_gradients(layer, rng.standard_normal((2, 3, 6, 6)))

    def test_fully_connected(self):
        rng = np.random.default_rng(12)
        layer = FullyConnected(7, 4, rng=rng)
        assert_layer_gradients(layer, rng.standard_normal((3, 7)))

    def test_relu(self):
        rng = np.random.default_rng(13)
        assert_layer_gradients(ReLU(), rng.standard_normal((4, 9)) + 0.05)

    def test_sigmoid(self):
        rng = np.random.default_rng(14)
        assert_layer_gradients(Sigmoid(), rng.standard_normal((4, 9)))

    def test_tanh(self):
        rng = np.random.default_rng(15)
        assert_layer_gradients(Tanh(), rng.standard_normal((4, 9)))

    def test_softmax(self):
        rng = np.random.default_rng(16)
        assert_layer_gradients(Softmax(), rng.standard_normal((4, 6)))

    def test_nearest_upsample(self):
        rng = np.random.default_rng(17)
        assert_layer_gradients(NearestUpsample(2), rng.standard_normal((2, 3, 3, 3)))

    def test_channel_attention(self):
        rng = np.random.default_rng(18)
        layer = ChannelAttention(8, reduction=4, rng=rng)
        assert_layer_gradients(layer, rng.standard_normal((2, 8, 4, 4)))

    def test_spatial_attention(self):
        rng = np.random.default_rng(19)
        layer = SpatialAttention(kernel=7, rng=rng)
        assert_layer_gradients(layer, rng.standard_normal((2, 4, 6, 6)))

    def test_attention_pair_chained(self):
        rng = np.random.default_rng(20)
        pair = Sequential([
            ChannelAttention(8, reduction=4, rng=rng),
            SpatialAttention(kernel=3, rng=rng),
        ])
        assert_layer_gradients(pair, rng.standard_normal((2, 8, 4, 4)))

    def test_small_stack(self):
        rng = np.random.default_rng(21)
        stack = Sequential([
            Conv2D(1, 4, 3, stride=2, pad=1, rng=rng),
            ReLU(),
            Flatten(),
            FullyConnected(4 * 3 * 3, 5, rng=rng),
            Tanh(),
        ])
        assert_layer_gradients(stack, rng.standard_normal((2, 1, 6, 6)))

    def test_reshape_roundtrip_gradient(self):
        rng = np.random.default_rng(22)
        stack = Sequential([Flatten(), Reshape((2, 3, 3))])
        x = rng.standard_normal((2, 2, 3, 3))
        assert np.array_equal(stack.forward(x), x)
        assert_layer_gradients(stack, x)

    def test_embedding(self):
        rng = np.random.default_rng(23)
        emb = Embedding(10, 4, rng=rng)
        ids = np.array([[1, 3, 3], [0, 9, 1]])
        r = rng.standard_normal((2, 3, 4))

        def loss_fn():
            return float((emb.forward(ids) * r).sum())

        emb.grads["weight"][...] = 0.0
        emb.forward(ids)
        emb.backward(r)
        analytic = emb.grads["weight"].copy()
        numeric = finite_difference(loss_fn, emb.params["weight"])
        assert relative_error(analytic, numeric) < TOL

    def test_gru_bptt(self):
        rng = np.random.default_rng(24)
        cell = GRUCell(4, 5, rng=rng)
        xs = rng.standard_normal((3, 2, 4))
        h0 = rng.standard_normal((2, 5))
        proj = rng.standard_normal((3, 2, 5))

        def loss_fn():
            h = h0
            total = 0.0
            for t in range(3):
                h, _ = cell.step(xs[t], h)
                total += float((h * proj[t]).sum())
            return total

        for _, owner, key in cell.named_parameters():
            owner.grads[key][...] = 0.0
        h = h0
        caches = []
        for t in range(3):
            h, cache = cell.step(xs[t], h)
            caches.append(cache)
        dxs = np.zeros_like(xs)
        dh = np.zeros_like(h0)
        for t in reversed(range(3)):
            dxs[t], dh = cell.backward_step(dh + proj[t], caches[t])
        pairs = [(xs, dxs), (h0, dh)]
        pairs += [(owner.params[key], owner.grads[key].copy())
                  for _, owner, key in cell.named_parameters()]
        assert check_gradients(loss_fn, pairs) < TOL


class TestLossGradients:
    def test_mse(self):
        rng = np.random.default_rng(30)
        pred = rng.standard_normal((3, 4))
        target = rng.standard_normal((3, 4))
        _, grad = mse_loss(pred, target)
        numeric = finite_difference(lambda: mse_loss(pred, target)[0], pred)
        assert relative_error(grad, numeric) < TOL

    def test_l1(self):
        rng = np.random.default_rng(31)
        pred = rng.standard_normal((3, 4))
        target = pred + np.where(rng.random((3, 4)) > 0.5, 0.5, -0.5)
        _, grad = l1_loss(pred, target)
        numeric = finite_difference(lambda: l1_loss(pred, target)[0], pred)
        assert relative_error(grad, numeric) < TOL

    def test_bce_with_logits(self):
        rng = np.random.default_rng(32)
        logits = rng.standard_normal((5,)) * 3
        for target in (0.0, 1.0):
            _, grad = bce_with_logits(logits, target)
            numeric = finite_difference(lambda: bce_with_logits(logits, target)[0], logits)
            assert relative_error(grad, numeric) < TOL

    def test_bce_extreme_logits_finite(self):
        logits = np.array([800.0, -800.0])
        loss, grad = bce_with_logits(logits, 1.0)
        assert np.isfinite(loss) and np.isfinite(grad).all()

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(33)
        logits = rng.standard_normal((4, 6))
        labels = rng.integers(0, 6, size=4)
        _, grad = softmax_cross_entropy(logits, labels)
        numeric = finite_difference(
            lambda: softmax_cross_entropy(logits, labels)[0], logits)
        assert relative_error(grad, numeric) < TOL

    def test_softmax_cross_entropy_weighted(self):
        rng = np.random.default_rng(34)
        logits = rng.standard_normal((2, 5, 6))
        labels = rng.integers(0, 6, size=(2, 5))
        weights = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=float)
        _, grad = softmax_cross_entropy(logits, labels, weights)
        assert np.all(grad[0, 3:] == 0.0)
        numeric = finite_difference(
            lambda: softmax_cross_entropy(logits, labels, weights)[0], logits)
        assert relative_error(grad, numeric) < TOL

    def test_softmax_cross_entropy_needs_weight(self):
        with pytest.raises(DataFormatError):
            softmax_cross_entropy(np.zeros((1, 3)), np.zeros(1, dtype=int),
                                  np.zeros(1))

    def test_shape_mismatch(self):
        with pytest.raises(DataFormatError):
            mse_loss(np.zeros((2, 2)), np.zeros((2, 3)))


class TestWorkedExamples:
    def test_identity_convolution(self):
        conv = Conv2D(1, 1, 3, stride=1, pad=1)
        conv.params["weight"][...] = 0.0
        conv.params["weight"][0, 0, 1, 1] = 1.0
        x = np.random.default_rng(40).standard_normal((1, 1, 5, 5))
        assert np.allclose(conv.forward(x), x)

    def test_fc_dot_product(self):
        fc = FullyConnected(2, 1)
        fc.params["weight"][...] = [[3.0], [4.0]]
        assert fc.forward(np.array([[1.0, 1.0]]))[0, 0] == 7.0

    def test_fc_gradient_is_exact_for_linear_map(self):
        # central differences are exact on a linear function up to roundoff
        rng = np.random.default_rng(41)
        fc = FullyConnected(3, 2, rng=rng)
        x = rng.standard_normal((2, 3))

        def loss_fn():
            return float(fc.forward(x).sum())

        fc.grads["weight"][...] = 0.0
        fc.forward(x)
        fc.backward(np.ones((2, 2)))
        numeric = finite_difference(loss_fn, fc.params["weight"])
        assert relative_error(fc.grads["weight"], numeric) < 1e-9

    def test_relu_blocks_gradient_at_negatives(self):
        relu = ReLU()
        x = np.array([[-1.0, 2.0, -3.0]])
        relu.forward(x)
        assert relu.backward(np.ones_like(x)).tolist() == [[0.0, 1.0, 0.0]]

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(42)
        y = Softmax().forward(rng.standard_normal((8, 13)) * 20)
        assert np.all(np.abs(y.sum(axis=-1) - 1.0) <= 1e-12)

    def test_upsample_repeats_blocks(self):
        x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
        y = NearestUpsample(2).forward(x)
        assert y[0, 0].tolist() == [[1, 1, 2, 2], [1, 1, 2, 2],
                                    [3, 3, 4, 4], [3, 3, 4, 4]]

    def test_saturated_spatial_gate_is_identity(self):
        # gate of all ones must pass the input through unchanged
        att = SpatialAttention(kernel=3)
        att.conv.params["weight"][...] = 0.0
        att.conv.params["bias"][...] = 50.0
        x = np.random.default_rng(43).standard_normal((1, 3, 4, 4))
        y = att.forward(x)
        assert np.array_equal(att.last_map, np.ones((1, 1, 4, 4)))
        assert np.array_equal(y, x)

    def test_fresh_channel_attention_halves_input(self):
        # zero-initialized biases and symmetric pooling give sigmoid(0) = 0.5
        att = ChannelAttention(4, reduction=4)
        for key in att.params:
            att.params[key][...] = 0.0
        x = np.random.default_rng(44).standard_normal((2, 4, 3, 3))
        assert np.allclose(att.forward(x), 0.5 * x)

    def test_translation_compatible_conv_interior(self):
        rng = np.random.default_rng(45)
        conv = Conv2D(1, 2, 3, stride=1, pad=1, rng=rng)
        x = rng.standard_normal((1, 1, 8, 8))
        y = conv.forward(x)
        y_shift = conv.forward(np.roll(x, 1, axis=2))
        assert np.allclose(y_shift[:, :, 2:-1, :], np.roll(y, 1, axis=2)[:, :, 2:-1, :])

    def test_glorot_bounds_and_zero_bias(self):
        rng = np.random.default_rng(46)
        fc = FullyConnected(30, 20, rng=rng)
        bound = np.sqrt(6.0 / (30 + 20))
        assert np.abs(fc.params["weight"]).max() <= bound
        assert np.all(fc.params["bias"] == 0.0)

    def test_embedding_rejects_out_of_vocab(self):
        with pytest.raises(DataFormatError):
            Embedding(4, 2).forward(np.array([0, 4]))

    def test_conv_rejects_wrong_channels(self):
        with pytest.raises(DataFormatError):
            Conv2D(2, 1, 3).forward(np.zeros((1, 3, 5, 5)))


class TestAdam:
    def one_param(self, value):
        fc = FullyConnected(1, 1)
        fc.params["weight"][...] = value
        return fc

    def test_first_step_magnitude(self):
        # one update from rest moves each coordinate by almost exactly lr
        fc = self.one_param(1.0)
        opt = Adam(fc.named_parameters(), lr=2e-4)
        fc.grads["weight"][...] = 0.3
        opt.step()
        delta = fc.params["weight"][0, 0] - 1.0
        assert abs(delta + 2e-4) < 1e-7

    def test_zero_gradient_keeps_parameter(self):
        fc = self.one_param(1.5)
        opt = Adam(fc.named_parameters())
        fc.grads["weight"][...] = 0.0
        opt.step()
        assert fc.params["weight"][0, 0] == 1.5

    def test_equal_gradients_equal_updates(self):
        fc = FullyConnected(1, 2)
        fc.params["weight"][...] = [[0.7, 0.7]]
        opt = Adam(fc.named_parameters(), lr=1e-3)
        for _ in range(5):
            opt.zero_grad()
            fc.grads["weight"][...] = [[0.2, 0.2]]
            opt.step()
        assert fc.params["weight"][0, 0] == fc.params["weight"][0, 1]

    def test_nonfinite_gradient_raises(self):
        fc = self.one_param(1.0)
        opt = Adam(fc.named_parameters())
        fc.grads["weight"][...] = np.nan
        with pytest.raises(TrainingDiverged):
            opt.step()

    def test_zero_grad_clears_accumulation(self):
        fc = self.one_param(1.0)
        opt = Adam(fc.named_parameters())
        fc.grads["weight"][...] = 0.5
        opt.zero_grad()
        assert np.all(fc.grads["weight"] == 0.0)


class TestCheckpointFormat:
    def roundtrip(self, tmp_path, meta, tensors):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, meta, tensors)
        return load_checkpoint(path)

    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(50)
        tensors = [("enc.w", rng.standard_normal((3, 4))),
                   ("enc.b", rng.standard_normal(4)),
                   ("scalar", np.array(2.5))]
        meta, loaded = self.roundtrip(tmp_path, {"kind": "test", "n": 3}, tensors)
        assert meta == {"kind": "test", "n": 3}
        assert list(loaded) == ["enc.w", "enc.b", "scalar"]
        for name, arr in tensors:
            assert np.array_equal(loaded[name], arr)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOT-A-CKPT\n12\n{}")
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {}, [("w", np.ones((4, 4)))])
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, {}, [("w", np.ones(2))])
        path.write_bytes(path.read_bytes() + b"extra")
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_corrupt_header_length(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"SCABENCH-CKPT 1\nabc\n{}")
        with pytest.raises(DataFormatError):
            load_checkpoint(path)
