"""Neural network layers with explicit forward/backward passes.

Everything is float64 numpy. Each layer keeps its parameters in
``self.params`` and accumulates parameter gradients into matching arrays in
``self.grads`` during ``backward`` (callers zero them between batches, see
``Adam.zero_grad``). ``backward`` takes the gradient of the loss w.r.t. the
layer output and returns the gradient w.r.t. the layer input.

Weights are initialized from U(-a, a) with a = sqrt(6 / (fan_in + fan_out))
using a caller-provided generator; biases start at zero.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataFormatError


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float64)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Layer:
    """Base: parameter bookkeeping plus the forward/backward contract."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _register(self, name: str, value: np.ndarray):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def children(self) -> list["Layer"]:
        return []

    def named_parameters(self, prefix: str = ""):
        for name, value in self.params.items():
            yield f"{prefix}{name}", self, name
        for i, child in enumerate(self.children()):
            yield from child.named_parameters(f"{prefix}{type(child).__name__.lower()}{i}.")

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _shape_error(self, expected: str, got) -> DataFormatError:
        return DataFormatError(f"{type(self).__name__}: expected input {expected}, got {got}")


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = layers

    def children(self) -> list[Layer]:
        return list(self.layers)

    def named_parameters(self, prefix: str = ""):
        for i, child in enumerate(self.layers):
            yield from child.named_parameters(f"{prefix}{i}.")

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out


def _im2col(x_padded: np.ndarray, k: int, stride: int) -> np.ndarray:
    b, c, hp, wp = x_padded.shape
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    s0, s1, s2, s3 = x_padded.strides
    windows = np.lib.stride_tricks.as_strided(
        x_padded,
        shape=(b, c, k, k, oh, ow),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    return windows.reshape(b, c * k * k, oh * ow), oh, ow


def _col2im(dcols: np.ndarray, padded_shape, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, c, hp, wp = padded_shape
    dx = np.zeros(padded_shape, dtype=np.float64)
    dcols = dcols.reshape(b, c, k, k, oh, ow)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += dcols[
                :, :, i, j
            ]
    return dx


class Conv2D(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, pad: int = 0, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        fan_in = in_channels * kernel * kernel
        fan_out = out_channels * kernel * kernel
        rng = rng if rng is not None else np.random.default_rng(0)
        self._register("weight", glorot_uniform(rng, (out_channels, in_channels, kernel, kernel),
                                                fan_in, fan_out))
        self._register("bias", np.zeros(out_channels, dtype=np.float64))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise self._shape_error(f"(B, {self.in_channels}, H, W)", x.shape)
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else np.ascontiguousarray(x)
        cols, oh, ow = _im2col(xp, self.kernel, self.stride)
        w_mat = self.params["weight"].reshape(self.out_channels, -1)
        y = np.matmul(w_mat[None, :, :], cols)
        y += self.params["bias"][None, :, None]
        self._cache = (xp.shape, cols, oh, ow)
        return y.reshape(x.shape[0], self.out_channels, oh, ow)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        padded_shape, cols, oh, ow = self._cache
        b = grad_out.shape[0]
        gy = grad_out.reshape(b, self.out_channels, oh * ow)
        self.grads["weight"] += np.einsum("bop,bcp->oc", gy, cols).reshape(
            self.params["weight"].shape
        )
        self.grads["bias"] += gy.sum(axis=(0, 2))
        w_mat = self.params["weight"].reshape(self.out_channels, -1)
        dcols = np.matmul(w_mat.T[None, :, :], gy)
        dxp = _col2im(dcols, padded_shape, self.kernel, self.stride, oh, ow)
        p = self.pad
        return dxp[:, :, p : padded_shape[2] - p, p : padded_shape[3] - p] if p else dxp


class FullyConnected(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.n_in = n_in
        self.n_out = n_out
        rng = rng if rng is not None else np.random.default_rng(0)
        self._register("weight", glorot_uniform(rng, (n_in, n_out), n_in, n_out))
        self._register("bias", np.zeros(n_out, dtype=np.float64))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise self._shape_error(f"(B, {self.n_in})", x.shape)
        self._cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._cache
        self.grads["weight"] += x.T @ grad_out
        self.grads["bias"] += grad_out.sum(axis=0)
        return grad_out @ self.params["weight"].T


class Flatten(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._shape)


class Reshape(Layer):
    """Reshape everything after the batch axis."""

    def __init__(self, target: tuple[int, ...]):
        super().__init__()
        self.target = tuple(target)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape((x.shape[0],) + self.target)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._shape)


class ReLU(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad_out, 0.0)


class Sigmoid(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = _sigmoid(x)
        return self._y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out * self._y * (1.0 - self._y)


class Tanh(Layer):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out * (1.0 - self._y * self._y)


class Softmax(Layer):
    """Softmax over the last axis."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        shifted = x - x.max(axis=-1, keepdims=True)
        ex = np.exp(shifted)
        self._y = ex / ex.sum(axis=-1, keepdims=True)
        return self._y

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        y = self._y
        inner = (grad_out * y).sum(axis=-1, keepdims=True)
        return y * (grad_out - inner)


class NearestUpsample(Layer):
    def __init__(self, factor: int):
        super().__init__()
        if factor < 1:
            raise DataFormatError(f"upsample factor must be >= 1, got {factor}")
        self.factor = factor

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise self._shape_error("(B, C, H, W)", x.shape)
        f = self.factor
        return np.repeat(np.repeat(x, f, axis=2), f, axis=3)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        f = self.factor
        b, c, hf, wf = grad_out.shape
        return grad_out.reshape(b, c, hf // f, f, wf // f, f).sum(axis=(3, 5))


class ChannelAttention(Layer):
    """Per-channel gate from pooled descriptors.

    Average- and max-pooled channel vectors go through a shared two-layer
    bottleneck; the summed outputs pass a sigmoid and rescale each channel.
    """

    def __init__(self, channels: int, reduction: int = 4, rng: np.random.Generator | None = None):
        super().__init__()
        if channels % reduction:
            raise DataFormatError(f"channels {channels} not divisible by reduction {reduction}")
        self.channels = channels
        hidden = channels // reduction
        rng = rng if rng is not None else np.random.default_rng(0)
        self._register("w1", glorot_uniform(rng, (channels, hidden), channels, hidden))
        self._register("b1", np.zeros(hidden, dtype=np.float64))
        self._register("w2", glorot_uniform(rng, (hidden, channels), hidden, channels))
        self._register("b2", np.zeros(channels, dtype=np.float64))
        self._cache = None

    def _bottleneck(self, pooled: np.ndarray):
        pre = pooled @ self.params["w1"] + self.params["b1"]
        hid = np.where(pre > 0, pre, 0.0)
        return pre, hid, hid @ self.params["w2"] + self.params["b2"]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise self._shape_error(f"(B, {self.channels}, H, W)", x.shape)
        b, c, h, w = x.shape
        avg = x.mean(axis=(2, 3))
        flat = x.reshape(b, c, h * w)
        argmax = flat.argmax(axis=2)
        mx = np.take_along_axis(flat, argmax[:, :, None], axis=2)[:, :, 0]
        pre_a, hid_a, out_a = self._bottleneck(avg)
        pre_m, hid_m, out_m = self._bottleneck(mx)
        scale = _sigmoid(out_a + out_m)
        self._cache = (x, avg, argmax, pre_a, hid_a, pre_m, hid_m, scale)
        return x * scale[:, :, None, None]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x, avg, argmax, pre_a, hid_a, pre_m, hid_m, scale = self._cache
        b, c, h, w = x.shape
        dscale = (grad_out * x).sum(axis=(2, 3))
        dx = grad_out * scale[:, :, None, None]
        dout = dscale * scale * (1.0 - scale)  # both branch outputs receive this
        # The bottleneck is shared, so both branches accumulate into w1/w2.
        self.grads["w2"] += hid_a.T @ dout + hid_m.T @ dout
        self.grads["b2"] += 2.0 * dout.sum(axis=0)
        dhid = dout @ self.params["w2"].T
        dpre_a = np.where(pre_a > 0, dhid, 0.0)
        dpre_m = np.where(pre_m > 0, dhid, 0.0)
        flat = x.reshape(b, c, h * w)
        mx = np.take_along_axis(flat, argmax[:, :, None], axis=2)[:, :, 0]
        self.grads["w1"] += avg.T @ dpre_a + mx.T @ dpre_m
        self.grads["b1"] += dpre_a.sum(axis=0) + dpre_m.sum(axis=0)
        davg = dpre_a @ self.params["w1"].T
        dmx = dpre_m @ self.params["w1"].T
        dx += davg[:, :, None, None] / (h * w)
        dflat = np.zeros((b, c, h * w), dtype=np.float64)
        np.put_along_axis(dflat, argmax[:, :, None], dmx[:, :, None], axis=2)
        return dx + dflat.reshape(b, c, h, w)


class SpatialAttention(Layer):
    """Per-position gate from channelwise average and max maps.

    The two pooled maps stack into a 2-channel image, pass a k x k
    convolution and a sigmoid, and the resulting map rescales every
    channel. The map of the most recent forward pass stays readable at
    ``last_map`` for leak localization.
    """

    def __init__(self, kernel: int = 7, rng: np.random.Generator | None = None):
        super().__init__()
        if kernel % 2 == 0:
            raise DataFormatError(f"spatial attention kernel must be odd, got {kernel}")
        self.kernel = kernel
        self.conv = Conv2D(2, 1, kernel, stride=1, pad=(kernel - 1) // 2, rng=rng)
        self.last_map: np.ndarray | None = None
        self._cache = None

    def children(self) -> list[Layer]:
        return [self.conv]

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4:
            raise self._shape_error("(B, C, H, W)", x.shape)
        b, c, h, w = x.shape
        avg = x.mean(axis=1, keepdims=True)
        argmax = x.argmax(axis=1)
        mx = np.take_along_axis(x, argmax[:, None, :, :], axis=1)
        stacked = np.concatenate([avg, mx], axis=1)
        logits = self.conv.forward(stacked)
        gate = _sigmoid(logits)
        self.last_map = gate
        self._cache = (x, argmax, gate)
        return x * gate

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x, argmax, gate = self._cache
        b, c, h, w = x.shape
        dgate = (grad_out * x).sum(axis=1, keepdims=True)
        dx = grad_out * gate
        dlogits = dgate * gate * (1.0 - gate)
        dstacked = self.conv.backward(dlogits)
        dx += dstacked[:, 0:1, :, :] / c
        dmx = dstacked[:, 1:2, :, :]
        dmax = np.zeros_like(x)
        np.put_along_axis(dmax, argmax[:, None, :, :], dmx, axis=1)
        return dx + dmax


class Embedding(Layer):
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.vocab_size = vocab_size
        rng = rng if rng is not None else np.random.default_rng(0)
        self._register("weight", glorot_uniform(rng, (vocab_size, dim), vocab_size, dim))
        self._cache = None

    def forward(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids)
        if ids.min(initial=0) < 0 or ids.max(initial=0) >= self.vocab_size:
            raise DataFormatError(f"token id outside vocabulary of {self.vocab_size}")
        self._cache = ids
        return self.params["weight"][ids]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        np.add.at(self.grads["weight"], self._cache, grad_out)
        return np.zeros(0)  # ids are not differentiable


class GRUCell(Layer):
    """Single gated recurrent cell, driven step by step.

    ``step`` returns the next hidden state and an opaque cache;
    ``backward_step`` consumes caches in reverse order and accumulates
    parameter gradients, returning (dx, dh_prev).
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_dim = in_dim
        self.hidden = hidden
        rng = rng if rng is not None else np.random.default_rng(0)
        for gate in ("update", "reset", "cand"):
            self._register(f"w_{gate}", glorot_uniform(rng, (in_dim, hidden), in_dim, hidden))
            self._register(f"u_{gate}", glorot_uniform(rng, (hidden, hidden), hidden, hidden))
            self._register(f"b_{gate}", np.zeros(hidden, dtype=np.float64))

    def step(self, x: np.ndarray, h: np.ndarray):
        p = self.params
        z = _sigmoid(x @ p["w_update"] + h @ p["u_update"] + p["b_update"])
        r = _sigmoid(x @ p["w_reset"] + h @ p["u_reset"] + p["b_reset"])
        c = np.tanh(x @ p["w_cand"] + (r * h) @ p["u_cand"] + p["b_cand"])
        h_next = (1.0 - z) * h + z * c
        return h_next, (x, h, z, r, c)

    def backward_step(self, dh_next: np.ndarray, cache):
        x, h, z, r, c = cache
        p, g = self.params, self.grads
        dc = dh_next * z
        dz = dh_next * (c - h)
        dh = dh_next * (1.0 - z)
        dc_pre = dc * (1.0 - c * c)
        g["w_cand"] += x.T @ dc_pre
        g["u_cand"] += (r * h).T @ dc_pre
        g["b_cand"] += dc_pre.sum(axis=0)
        drh = dc_pre @ p["u_cand"].T
        dr = drh * h
        dh += drh * r
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        for gate, dpre in (("update", dz_pre), ("reset", dr_pre)):
            g[f"w_{gate}"] += x.T @ dpre
            g[f"u_{gate}"] += h.T @ dpre
            g[f"b_{gate}"] += dpre.sum(axis=0)
        dx = dc_pre @ p["w_cand"].T + dz_pre @ p["w_update"].T + dr_pre @ p["w_reset"].T
        dh += dz_pre @ p["u_update"].T + dr_pre @ p["u_reset"].T
        return dx, dh
