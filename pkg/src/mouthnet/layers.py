"""Neural layers with explicit forward and reverse-mode backward passes.

All activations are channels-last numpy arrays. Convolutions are evaluated as
im2col + matmul so the heavy lifting happens inside BLAS; their input
gradients are assembled as one matmul plus a loop of strided slice-adds over
kernel offsets, which avoids scatter operations entirely.

Layers cache whatever the backward pass needs during a train-mode forward.
A layer instance is therefore single-owner while training; eval-mode forward
with shared parameters is safe to run concurrently.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .rng import Rng
from .tensorops import DTYPE


def kaiming_uniform(rng: Rng, shape, fan_in: int, dtype=DTYPE) -> np.ndarray:
    """Fan-in Kaiming-uniform init: U(-b, b) with b = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return ((rng.uniform(shape) * 2.0 - 1.0) * bound).astype(dtype)


class Layer:
    def params(self) -> dict:
        return {}

    def buffers(self) -> dict:
        return {}


def _check_channels(c_have: int, c_want: int, what: str) -> None:
    if c_have != c_want:
        raise ValueError(f"{what}: input has {c_have} channels, layer expects {c_want}")


class Conv1d(Layer):
    """1-D convolution over [N, T, C], 'same' padding, stride 1, dilated."""

    def __init__(self, c_in, c_out, kernel, dilation=1, bias=False, rng=None, dtype=DTYPE):
        if kernel % 2 == 0:
            raise ValueError("same padding requires an odd kernel size")
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.dilation = kernel, dilation
        self.pad = dilation * (kernel - 1) // 2
        rng = rng or Rng(0)
        self.weight = kaiming_uniform(rng, (kernel, c_in, c_out), kernel * c_in, dtype)
        self.bias = np.zeros(c_out, dtype=dtype) if bias else None
        self.grads: dict[str, np.ndarray] = {}

    def params(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def forward(self, x, train=False, rng=None):
        _check_channels(x.shape[-1], self.c_in, "conv1d")
        n, t, _ = x.shape
        k, d, p = self.kernel, self.dilation, self.pad
        xp = np.pad(x, ((0, 0), (p, p), (0, 0)))
        span = d * (k - 1) + 1
        if xp.shape[1] < span:
            raise ValueError(f"kernel span {span} exceeds padded length {xp.shape[1]}")
        win = sliding_window_view(xp, span, axis=1)[:, :, :, ::d]  # [N,T,C,k]
        cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n * t, k * self.c_in)
        y = cols @ self.weight.reshape(k * self.c_in, self.c_out)
        if self.bias is not None:
            y += self.bias
        if train:
            self._cache = (cols, (n, t))
        return y.reshape(n, t, self.c_out)

    def backward(self, dy):
        cols, (n, t) = self._cache
        k, d, p = self.kernel, self.dilation, self.pad
        g = dy.reshape(n * t, self.c_out)
        self.grads = {"weight": (cols.T @ g).reshape(self.weight.shape)}
        if self.bias is not None:
            self.grads["bias"] = g.sum(axis=0, dtype=np.float64).astype(g.dtype)
        gw = (g @ self.weight.reshape(k * self.c_in, self.c_out).T).reshape(n, t, k, self.c_in)
        dxp = np.zeros((n, t + 2 * p, self.c_in), dtype=dy.dtype)
        for i in range(k):
            dxp[:, i * d : i * d + t, :] += gw[:, :, i, :]
        return dxp[:, p : p + t, :]


class Conv2d(Layer):
    """2-D convolution over [N, H, W, C] with explicit stride and padding."""

    def __init__(self, c_in, c_out, kernel, stride=1, padding=0, bias=False, rng=None, dtype=DTYPE):
        self.c_in, self.c_out = c_in, c_out
        self.kernel = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
        self.stride = (stride, stride) if np.isscalar(stride) else tuple(stride)
        self.padding = (padding, padding) if np.isscalar(padding) else tuple(padding)
        kh, kw = self.kernel
        rng = rng or Rng(0)
        self.weight = kaiming_uniform(rng, (kh, kw, c_in, c_out), kh * kw * c_in, dtype)
        self.bias = np.zeros(c_out, dtype=dtype) if bias else None
        self.grads: dict[str, np.ndarray] = {}

    def params(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def forward(self, x, train=False, rng=None):
        _check_channels(x.shape[-1], self.c_in, "conv2d")
        n = x.shape[0]
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        if xp.shape[1] < kh or xp.shape[2] < kw:
            raise ValueError(f"kernel {self.kernel} exceeds padded input {xp.shape[1:3]}")
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
        ho, wo = win.shape[1], win.shape[2]
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
        cols = cols.reshape(n * ho * wo, kh * kw * self.c_in)
        y = cols @ self.weight.reshape(-1, self.c_out)
        if self.bias is not None:
            y += self.bias
        if train:
            self._cache = (cols, (n, ho, wo), xp.shape)
        return y.reshape(n, ho, wo, self.c_out)

    def backward(self, dy):
        cols, (n, ho, wo), xp_shape = self._cache
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        g = dy.reshape(n * ho * wo, self.c_out)
        self.grads = {"weight": (cols.T @ g).reshape(self.weight.shape)}
        if self.bias is not None:
            self.grads["bias"] = g.sum(axis=0, dtype=np.float64).astype(g.dtype)
        gw = (g @ self.weight.reshape(-1, self.c_out).T)
        gw = np.ascontiguousarray(
            gw.reshape(n * ho * wo, kh * kw, self.c_in).transpose(1, 0, 2)
        ).reshape(kh, kw, n, ho, wo, self.c_in)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + ho * sh : sh, j : j + wo * sw : sw, :] += gw[i, j]
        h = xp_shape[1] - 2 * ph
        w = xp_shape[2] - 2 * pw
        return dxp[:, ph : ph + h, pw : pw + w, :]


class Conv3d(Layer):
    """3-D convolution over [N, T, H, W, C].

    need_input_grad=False skips the input-gradient assembly in backward; use
    it only when the layer's input is data rather than an activation.
    """

    def __init__(self, c_in, c_out, kernel, stride=(1, 1, 1), padding=(0, 0, 0), bias=False,
                 rng=None, dtype=DTYPE, need_input_grad=True):
        self.c_in, self.c_out = c_in, c_out
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.padding = tuple(padding)
        self.need_input_grad = need_input_grad
        kt, kh, kw = self.kernel
        rng = rng or Rng(0)
        self.weight = kaiming_uniform(rng, (kt, kh, kw, c_in, c_out), kt * kh * kw * c_in, dtype)
        self.bias = np.zeros(c_out, dtype=dtype) if bias else None
        self.grads: dict[str, np.ndarray] = {}

    def params(self):
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def forward(self, x, train=False, rng=None):
        _check_channels(x.shape[-1], self.c_in, "conv3d")
        n = x.shape[0]
        (kt, kh, kw), (st, sh, sw) = self.kernel, self.stride
        pt, ph, pw = self.padding
        xp = np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
        if xp.shape[1] < kt or xp.shape[2] < kh or xp.shape[3] < kw:
            raise ValueError(f"kernel {self.kernel} exceeds padded input {xp.shape[1:4]}")
        win = sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))[:, ::st, ::sh, ::sw]
        to, ho, wo = win.shape[1:4]
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 3, 5, 6, 7, 4))
        cols = cols.reshape(n * to * ho * wo, kt * kh * kw * self.c_in)
        y = cols @ self.weight.reshape(-1, self.c_out)
        if self.bias is not None:
            y += self.bias
        if train:
            self._cache = (cols, (n, to, ho, wo), xp.shape)
        return y.reshape(n, to, ho, wo, self.c_out)

    def backward(self, dy):
        cols, (n, to, ho, wo), xp_shape = self._cache
        (kt, kh, kw), (st, sh, sw) = self.kernel, self.stride
        pt, ph, pw = self.padding
        g = dy.reshape(-1, self.c_out)
        self.grads = {"weight": (cols.T @ g).reshape(self.weight.shape)}
        if self.bias is not None:
            self.grads["bias"] = g.sum(axis=0, dtype=np.float64).astype(g.dtype)
        if not self.need_input_grad:
            return None
        gw = (g @ self.weight.reshape(-1, self.c_out).T)
        # offset-major layout so each accumulation reads a contiguous block
        gw = np.ascontiguousarray(
            gw.reshape(n * to * ho * wo, kt * kh * kw, self.c_in).transpose(1, 0, 2)
        ).reshape(kt, kh, kw, n, to, ho, wo, self.c_in)
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for a in range(kt):
            for i in range(kh):
                for j in range(kw):
                    dxp[:, a : a + to * st : st, i : i + ho * sh : sh,
                        j : j + wo * sw : sw, :] += gw[a, i, j]
        t = xp_shape[1] - 2 * pt
        h = xp_shape[2] - 2 * ph
        w = xp_shape[3] - 2 * pw
        return dxp[:, pt : pt + t, ph : ph + h, pw : pw + w, :]


class Conv3dSliced(Conv3d):
    """Same operation as Conv3d with temporal stride 1, evaluated as kt
    temporally shifted 2-D convolutions sharing one im2col matrix. This is
    several times lighter on memory traffic for large inputs with few
    channels, which is exactly the front-end's regime. Supports parameter
    gradients only (need_input_grad must be False)."""

    def __init__(self, c_in, c_out, kernel, stride=(1, 1, 1), padding=(0, 0, 0), bias=False,
                 rng=None, dtype=DTYPE):
        if stride[0] != 1:
            raise ValueError("Conv3dSliced requires temporal stride 1")
        super().__init__(c_in, c_out, kernel, stride, padding, bias, rng, dtype,
                         need_input_grad=False)

    def forward(self, x, train=False, rng=None):
        _check_channels(x.shape[-1], self.c_in, "conv3d")
        n, t = x.shape[:2]
        (kt, kh, kw), (_, sh, sw) = self.kernel, self.stride
        pt, ph, pw = self.padding
        xp = np.pad(x, ((0, 0), (pt, pt), (ph, ph), (pw, pw), (0, 0)))
        tp = t + 2 * pt
        if tp < kt or xp.shape[2] < kh or xp.shape[3] < kw:
            raise ValueError(f"kernel {self.kernel} exceeds padded input {xp.shape[1:4]}")
        frames = xp.reshape(n * tp, *xp.shape[2:])
        win = sliding_window_view(frames, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
        ho, wo = win.shape[1], win.shape[2]
        cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
        cols = cols.reshape(n * tp * ho * wo, kh * kw * self.c_in)
        w2 = self.weight.reshape(kt, kh * kw * self.c_in, self.c_out)
        w2 = w2.transpose(1, 0, 2).reshape(kh * kw * self.c_in, kt * self.c_out)
        out = (cols @ w2).reshape(n, tp, ho, wo, kt, self.c_out)
        to = tp - kt + 1
        y = out[:, 0:to, :, :, 0, :].copy()
        for a in range(1, kt):
            y += out[:, a : a + to, :, :, a, :]
        if self.bias is not None:
            y += self.bias
        if train:
            self._cache = (cols, (n, tp, to, ho, wo))
        return y

    def backward(self, dy):
        cols, (n, tp, to, ho, wo) = self._cache
        kt, kh, kw = self.kernel
        k2 = kh * kw * self.c_in
        g = np.ascontiguousarray(dy).reshape(n, to * ho * wo, self.c_out)
        cols5 = cols.reshape(n, tp, ho * wo, k2)
        dw = np.zeros((kt, k2, self.c_out), dtype=dy.dtype)
        for a in range(kt):
            for i in range(n):
                block = cols5[i, a : a + to].reshape(to * ho * wo, k2)
                dw[a] += block.T @ g[i]
        self.grads = {"weight": dw.reshape(self.weight.shape)}
        if self.bias is not None:
            self.grads["bias"] = g.reshape(-1, self.c_out).sum(axis=0, dtype=np.float64) \
                .astype(dy.dtype)
        return None


class BatchNorm(Layer):
    """Per-channel batch normalization over all leading axes.

    Train mode normalizes with biased batch statistics and updates the running
    estimates with momentum 0.1; eval mode normalizes with the running
    estimates. Statistics are accumulated in float64.
    """

    MOMENTUM = 0.1
    EPS = 1e-5

    def __init__(self, channels, dtype=DTYPE):
        self.channels = channels
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.grads: dict[str, np.ndarray] = {}

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train=False, rng=None):
        _check_channels(x.shape[-1], self.channels, "batchnorm")
        axes = tuple(range(x.ndim - 1))
        if train:
            count = int(np.prod(x.shape[:-1]))
            if count == 0:
                raise ValueError("batchnorm train mode needs a non-empty batch")
            mean = np.mean(x, axis=axes)
            var = np.mean(np.square(x - mean), axis=axes)
            m = x.dtype.type(self.MOMENTUM)
            self.running_mean *= 1 - m
            self.running_mean += m * mean.astype(self.running_mean.dtype)
            self.running_var *= 1 - m
            self.running_var += m * var.astype(self.running_var.dtype)
        else:
            mean = self.running_mean.astype(x.dtype)
            var = self.running_var.astype(x.dtype)
            count = 0
        inv_std = 1.0 / np.sqrt(var + x.dtype.type(self.EPS))
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, train, count)
        return self.gamma * xhat + self.beta

    def backward(self, dy):
        xhat, inv_std, train, count = self._cache
        axes = tuple(range(dy.ndim - 1))
        dyx = dy * xhat
        dgamma = np.sum(dyx, axis=axes)
        dbeta = np.sum(dy, axis=axes)
        self.grads = {"gamma": dgamma, "beta": dbeta}
        if not train:
            return dy * (self.gamma * inv_std)
        n = dy.dtype.type(count)
        return (self.gamma * inv_std / n) * (n * dy - dbeta - xhat * dgamma)


class PReLU(Layer):
    """y = max(0, x) + a * min(0, x) with one learnable slope per channel."""

    def __init__(self, channels, init=0.25, dtype=DTYPE):
        self.channels = channels
        self.alpha = np.full(channels, init, dtype=dtype)
        self.grads: dict[str, np.ndarray] = {}

    def params(self):
        return {"alpha": self.alpha}

    def forward(self, x, train=False, rng=None):
        _check_channels(x.shape[-1], self.channels, "prelu")
        if train:
            self._cache = x
        return np.maximum(x, 0) + self.alpha * np.minimum(x, 0)

    def backward(self, dy):
        x = self._cache
        neg = np.minimum(x, 0)
        axes = tuple(range(dy.ndim - 1))
        self.grads = {"alpha": np.sum(dy * neg, axis=axes, dtype=np.float64).astype(dy.dtype)}
        return np.where(x > 0, dy, dy * self.alpha)


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        return dy * self._mask


class MaxPool2d(Layer):
    """Max pooling over the two spatial axes of [N, H, W, C]."""

    def __init__(self, kernel=3, stride=2, padding=1):
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def forward(self, x, train=False, rng=None):
        k, s, p = self.kernel, self.stride, self.padding
        fill = -np.inf if x.dtype.kind == "f" else 0
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)), constant_values=fill)
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
        n, ho, wo, c = win.shape[:4]
        flat = win.reshape(n, ho, wo, c, k * k)
        arg = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        if train:
            self._cache = (arg, xp.shape, (n, ho, wo, c))
        return y

    def backward(self, dy):
        arg, xp_shape, (n, ho, wo, c) = self._cache
        k, s, p = self.kernel, self.stride, self.padding
        _, hp, wp, _ = xp_shape
        di, dj = arg // k, arg % k
        rows = (np.arange(ho)[None, :, None, None] * s) + di
        colx = (np.arange(wo)[None, None, :, None] * s) + dj
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, None, None, :]
        flat_idx = ((nn * hp + rows) * wp + colx) * c + cc
        dxp = np.zeros(int(np.prod(xp_shape)), dtype=dy.dtype)
        np.add.at(dxp, flat_idx.ravel(), dy.ravel())
        dxp = dxp.reshape(xp_shape)
        h, w = hp - 2 * p, wp - 2 * p
        return dxp[:, p : p + h, p : p + w, :]


class Dropout(Layer):
    """Inverted-scaling dropout: identity in eval mode."""

    def __init__(self, p):
        self.p = p

    def forward(self, x, train=False, rng=None):
        if not train or self.p <= 0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = (rng.uniform(x.shape) >= self.p).astype(x.dtype)
        self._mask = keep / x.dtype.type(1.0 - self.p)
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class Linear(Layer):
    def __init__(self, c_in, c_out, rng=None, dtype=DTYPE):
        rng = rng or Rng(0)
        self.c_in, self.c_out = c_in, c_out
        self.weight = kaiming_uniform(rng, (c_in, c_out), c_in, dtype)
        self.bias = np.zeros(c_out, dtype=dtype)
        self.grads: dict[str, np.ndarray] = {}

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, train=False, rng=None):
        _check_channels(x.shape[-1], self.c_in, "linear")
        if train:
            self._cache = x
        return x @ self.weight + self.bias

    def backward(self, dy):
        x = self._cache
        x2 = x.reshape(-1, self.c_in)
        g2 = dy.reshape(-1, self.c_out)
        self.grads = {
            "weight": x2.T @ g2,
            "bias": g2.sum(axis=0, dtype=np.float64).astype(dy.dtype),
        }
        return dy @ self.weight.T


class SpatialMean(Layer):
    """Global average over H and W of [N, H, W, C]."""

    def forward(self, x, train=False, rng=None):
        self._hw = x.shape[1:3]
        return np.mean(x, axis=(1, 2))

    def backward(self, dy):
        h, w = self._hw
        scale = dy.dtype.type(1.0 / (h * w))
        return np.broadcast_to(dy[:, None, None, :] * scale, (dy.shape[0], h, w, dy.shape[1])).copy()


class TemporalMean(Layer):
    """Average over the time axis of [N, T, C]."""

    def forward(self, x, train=False, rng=None):
        self._t = x.shape[1]
        return np.mean(x, axis=1)

    def backward(self, dy):
        t = self._t
        scale = dy.dtype.type(1.0 / t)
        return np.broadcast_to(dy[:, None, :] * scale, (dy.shape[0], t, dy.shape[1])).copy()
