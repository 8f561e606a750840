"""Layer definitions with hand-written forward and backward passes.

Activations are NHWC arrays ``(batch, height, width, channels)``; fully
connected layers flatten whatever arrives in C order. Convolution and
pooling are "valid" (no padding): ``out = (in - k) // stride + 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..tensor_core import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _glorot(shape, fan_in, fan_out, rng):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _window_out(n: int, k: int, s: int) -> int:
    return (n - k) // s + 1


class Layer:
    has_params = False

    def out_shape(self, shape: tuple) -> tuple:
        return shape

    def init_params(self, shape, rng) -> dict:
        return {}

    def init_state(self, shape) -> dict:
        return {}

    def forward(self, params, state, x, train, rng):
        raise NotImplementedError

    def backward(self, params, cache, dy, need_dx=True):
        raise NotImplementedError

    def describe(self) -> str:
        return type(self).__name__


@dataclass(frozen=True)
class Input(Layer):
    height: int
    width: int
    channels: int = 1

    def out_shape(self, shape=None):
        return (self.height, self.width, self.channels)

    def forward(self, params, state, x, train, rng):
        if x.shape[1:] != (self.height, self.width, self.channels):
            raise ShapeError(f"input batch {x.shape[1:]} does not match {self.out_shape()}")
        return x, None

    def backward(self, params, cache, dy, need_dx=True):
        return dy, {}

    def describe(self):
        return f"Input {self.height}x{self.width}x{self.channels}"


def _spatial(shape, who):
    if len(shape) != 3:
        raise ShapeError(f"{who} needs a spatial (H, W, C) input, got {shape}")
    return shape


@dataclass(frozen=True)
class Conv2D(Layer):
    kh: int
    kw: int
    filters: int
    sh: int = 1
    sw: int = 1
    bias: bool = True
    has_params = True

    def __post_init__(self):
        if min(self.kh, self.kw, self.filters, self.sh, self.sw) < 1:
            raise ValueError(f"invalid convolution {self}")

    def out_shape(self, shape):
        h, w, _ = _spatial(shape, self.describe())
        if self.kh > h or self.kw > w:
            raise ShapeError(f"{self.describe()}: kernel exceeds input {h}x{w}")
        return (_window_out(h, self.kh, self.sh), _window_out(w, self.kw, self.sw), self.filters)

    def init_params(self, shape, rng):
        c = shape[2]
        k = self.kh * self.kw
        p = {"W": _glorot((self.kh, self.kw, c, self.filters), k * c, k * self.filters, rng)}
        if self.bias:
            p["b"] = np.zeros(self.filters)
        return p

    def _cols(self, x, ho, wo):
        # (N*ho*wo, C*kh*kw) patch matrix, channel-major within each patch
        win = sliding_window_view(x, (self.kh, self.kw), axis=(1, 2))[:, ::self.sh, ::self.sw]
        return win[:, :ho, :wo].reshape(-1, win.shape[3] * self.kh * self.kw)

    def _w2(self, w):
        return w.transpose(2, 0, 1, 3).reshape(-1, self.filters)

    def forward(self, params, state, x, train, rng):
        ho, wo, _ = self.out_shape(x.shape[1:])
        cols = self._cols(x, ho, wo)
        y = (cols @ self._w2(params["W"])).reshape(x.shape[0], ho, wo, self.filters)
        if self.bias:
            y += params["b"]
        return y, (cols, x.shape)

    def backward(self, params, cache, dy, need_dx=True):
        cols, xshape = cache
        n, ho, wo, f = dy.shape
        w = params["W"]
        dy2 = dy.reshape(-1, f)
        kh, kw, c, _ = w.shape
        grads = {"W": (cols.T @ dy2).reshape(c, kh, kw, f).transpose(1, 2, 0, 3).copy()}
        if self.bias:
            grads["b"] = np.ones(dy2.shape[0]) @ dy2
        if not need_dx:
            return None, grads
        dcols = (dy2 @ self._w2(w).T).reshape(n, ho, wo, c, kh, kw)
        dx = np.zeros(xshape, dtype=dcols.dtype)
        for a in range(kh):
            for b in range(kw):
                dx[:, a:a + self.sh * (ho - 1) + 1:self.sh, b:b + self.sw * (wo - 1) + 1:self.sw] += dcols[..., a, b]
        return dx, grads

    def describe(self):
        return f"Conv2D [{self.kh},{self.kw}] x{self.filters} stride [{self.sh},{self.sw}]"


@dataclass(frozen=True)
class BatchNorm(Layer):
    has_params = True

    def init_params(self, shape, rng):
        c = shape[-1]
        return {"gamma": np.ones(c), "beta": np.zeros(c)}

    def init_state(self, shape):
        c = shape[-1]
        return {"running_mean": np.zeros(c), "running_var": np.ones(c)}

    def forward(self, params, state, x, train, rng):
        c = x.shape[-1]
        x2 = x.reshape(-1, c)
        if train:
            ones = np.ones(x2.shape[0], dtype=x2.dtype)
            mean = (ones @ x2) / x2.shape[0]
            xc = x2 - mean
            var = np.einsum("ij,ij->j", xc, xc) / x2.shape[0]
        else:
            mean, var = state["running_mean"], state["running_var"]
            xc = x2 - mean
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = xc * inv_std
        y = xhat * params["gamma"] + params["beta"]
        return y.reshape(x.shape), (xhat, inv_std, train, mean, var)

    def backward(self, params, cache, dy, need_dx=True):
        xhat, inv_std, train, _, _ = cache
        dy2 = dy.reshape(-1, dy.shape[-1])
        m = dy2.shape[0]
        dbeta = np.ones(m, dtype=dy2.dtype) @ dy2
        dgamma = np.einsum("ij,ij->j", dy2, xhat)
        grads = {"gamma": dgamma, "beta": dbeta}
        if not need_dx:
            return None, grads
        scale = params["gamma"] * inv_std
        if not train:
            return (dy2 * scale).reshape(dy.shape), grads
        dx = (dy2 - (dbeta + xhat * dgamma) / m) * scale
        return dx.reshape(dy.shape), grads

    @staticmethod
    def updated_state(state, cache, n: int):
        _, _, train, mean, var = cache
        if not train:
            return state
        unbiased = var * n / max(n - 1, 1)
        return {
            "running_mean": (1 - BN_MOMENTUM) * state["running_mean"] + BN_MOMENTUM * mean,
            "running_var": (1 - BN_MOMENTUM) * state["running_var"] + BN_MOMENTUM * unbiased,
        }


@dataclass(frozen=True)
class ReLU(Layer):
    def forward(self, params, state, x, train, rng):
        return np.maximum(x, 0.0), x > 0

    def backward(self, params, cache, dy, need_dx=True):
        return dy * cache, {}


@dataclass(frozen=True)
class Sigmoid(Layer):
    def forward(self, params, state, x, train, rng):
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return y, y

    def backward(self, params, cache, dy, need_dx=True):
        return dy * cache * (1.0 - cache), {}


@dataclass(frozen=True)
class MaxPool(Layer):
    ph: int
    pw: int
    sh: int = 1
    sw: int = 1

    def __post_init__(self):
        if min(self.ph, self.pw, self.sh, self.sw) < 1:
            raise ValueError(f"invalid pooling {self}")

    def out_shape(self, shape):
        h, w, c = _spatial(shape, self.describe())
        if self.ph > h or self.pw > w:
            raise ShapeError(f"{self.describe()}: window exceeds input {h}x{w}")
        return (_window_out(h, self.ph, self.sh), _window_out(w, self.pw, self.sw), c)

    def _windows(self, ho, wo):
        for a in range(self.ph):
            for b in range(self.pw):
                yield (slice(None), slice(a, a + self.sh * (ho - 1) + 1, self.sh),
                       slice(b, b + self.sw * (wo - 1) + 1, self.sw))

    def forward(self, params, state, x, train, rng):
        ho, wo, _ = self.out_shape(x.shape[1:])
        y = None
        for sl in self._windows(ho, wo):
            y = x[sl].copy() if y is None else np.maximum(y, x[sl])
        return y, (x, y)

    def backward(self, params, cache, dy, need_dx=True):
        x, y = cache
        _, ho, wo, _ = y.shape
        dx = np.zeros_like(x)
        taken = np.zeros(y.shape, dtype=bool)
        # gradient goes to the first maximal element of each window
        for sl in self._windows(ho, wo):
            hit = (x[sl] == y) & ~taken
            dx[sl] += np.where(hit, dy, 0.0)
            taken |= hit
        return dx, {}

    def describe(self):
        return f"MaxPool [{self.ph},{self.pw}] stride [{self.sh},{self.sw}]"


@dataclass(frozen=True)
class Dropout(Layer):
    rate: float = 0.2

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")

    def forward(self, params, state, x, train, rng):
        if not train or self.rate == 0:
            return x, None
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, params, cache, dy, need_dx=True):
        return (dy if cache is None else dy * cache), {}

    def describe(self):
        return f"Dropout {self.rate}"


@dataclass(frozen=True)
class FullyConnected(Layer):
    units: int
    has_params = True

    def __post_init__(self):
        if self.units < 1:
            raise ValueError("units must be >= 1")

    def out_shape(self, shape):
        return (self.units,)

    def init_params(self, shape, rng):
        d = int(np.prod(shape))
        return {"W": _glorot((d, self.units), d, self.units, rng), "b": np.zeros(self.units)}

    def forward(self, params, state, x, train, rng):
        flat = x.reshape(x.shape[0], -1)
        return flat @ params["W"] + params["b"], (flat, x.shape)

    def backward(self, params, cache, dy, need_dx=True):
        flat, shape = cache
        grads = {"W": flat.T @ dy, "b": dy.sum(axis=0)}
        dx = (dy @ params["W"].T).reshape(shape) if need_dx else None
        return dx, grads

    def describe(self):
        return f"FullyConnected {self.units}"


@dataclass(frozen=True)
class RegressionOutput(Layer):
    """Linear output; the loss is the mean squared error."""

    def forward(self, params, state, x, train, rng):
        return x, None

    def backward(self, params, cache, dy, need_dx=True):
        return dy, {}


LAYER_TYPES = {cls.__name__: cls for cls in
               (Input, Conv2D, BatchNorm, ReLU, Sigmoid, MaxPool, Dropout, FullyConnected, RegressionOutput)}
