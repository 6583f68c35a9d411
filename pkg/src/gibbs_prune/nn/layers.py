"""Numpy layers with explicit forward/backward passes.

Activations are NHWC float64 arrays. ``forward`` returns ``(y, cache)`` and
``backward(cache, dy)`` returns ``(dx, grads)``; only batch norm keeps state
between calls (its running moments).

Conv2d and Dense are maskable: when ``mask`` is set (an int8 array over
{-1, +1} with the weight's shape) the forward pass uses ``w * (mask + 1) / 2``
and the stored weights are left untouched.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..masks import apply_mask


class Layer:
    name = ""
    params: dict

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def children(self):
        return ()


class _Maskable(Layer):
    mask: np.ndarray | None = None

    def effective_weight(self):
        w = self.params["w"]
        return w if self.mask is None else apply_mask(w, self.mask)

    def _masked_grad(self, dw):
        if self.mask is None:
            return dw
        return dw * ((self.mask + 1) // 2)


class Conv2d(_Maskable):
    """Stride-1, 'same'-padded convolution with weight shape (K, K, C_in, C_out)."""

    def __init__(self, name, k, c_in, c_out, rng, bias=True):
        self.name = name
        self.k = k
        std = np.sqrt(2.0 / (k * k * c_in))
        self.params = {"w": rng.normal(0.0, std, (k, k, c_in, c_out))}
        if bias:
            self.params["b"] = np.zeros(c_out)
        self.mask = None

    def _cols(self, x):
        pad = self.k // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        win = sliding_window_view(xp, (self.k, self.k), axis=(1, 2))  # B,H,W,C,k,k
        b, h, w_, c = x.shape
        return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w_, self.k * self.k * c)

    def forward(self, x, training=False):
        w = self.effective_weight()
        cols = self._cols(x)
        y = cols @ w.reshape(-1, w.shape[-1])
        if "b" in self.params:
            y = y + self.params["b"]
        return y.reshape(x.shape[:3] + (w.shape[-1],)), (x.shape, cols, w)

    def backward(self, cache, dy):
        shape, cols, w = cache
        b, h, w_, c = shape
        k, pad = self.k, self.k // 2
        dy2 = dy.reshape(-1, dy.shape[-1])
        grads = {"w": self._masked_grad((cols.T @ dy2).reshape(w.shape))}
        if "b" in self.params:
            grads["b"] = dy2.sum(axis=0)
        dcols = (dy2 @ w.reshape(-1, w.shape[-1]).T).reshape(b, h, w_, k, k, c)
        dxp = np.zeros((b, h + 2 * pad, w_ + 2 * pad, c))
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + h, j:j + w_, :] += dcols[:, :, :, i, j, :]
        return dxp[:, pad:pad + h, pad:pad + w_, :], grads


class Dense(_Maskable):
    def __init__(self, name, n_in, n_out, rng, bias=True):
        self.name = name
        self.params = {"w": rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out))}
        if bias:
            self.params["b"] = np.zeros(n_out)
        self.mask = None

    def forward(self, x, training=False):
        w = self.effective_weight()
        y = x @ w
        if "b" in self.params:
            y = y + self.params["b"]
        return y, (x, w)

    def backward(self, cache, dy):
        x, w = cache
        grads = {"w": self._masked_grad(x.T @ dy)}
        if "b" in self.params:
            grads["b"] = dy.sum(axis=0)
        return dy @ w.T, grads


class ReLU(Layer):
    def __init__(self, name="relu"):
        self.name = name
        self.params = {}

    def forward(self, x, training=False):
        return np.maximum(x, 0.0), x > 0

    def backward(self, cache, dy):
        return dy * cache, {}


class MaxPool2(Layer):
    def __init__(self, name="pool"):
        self.name = name
        self.params = {}

    def forward(self, x, training=False):
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ValueError("max-pool(2) needs even spatial dimensions")
        blocks = x.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(
            b, h // 2, w // 2, c, 4)
        arg = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return y, (x.shape, arg)

    def backward(self, cache, dy):
        (b, h, w, c), arg = cache
        blocks = np.zeros((b, h // 2, w // 2, c, 4))
        np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
        dx = blocks.reshape(b, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        return dx.reshape(b, h, w, c), {}


class GlobalAvgPool(Layer):
    def __init__(self, name="gap"):
        self.name = name
        self.params = {}

    def forward(self, x, training=False):
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, cache, dy):
        b, h, w, c = cache
        return np.broadcast_to(dy[:, None, None, :] / (h * w), cache).copy(), {}


class Flatten(Layer):
    def __init__(self, name="flatten"):
        self.name = name
        self.params = {}

    def forward(self, x, training=False):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy):
        return dy.reshape(cache), {}


class BatchNorm(Layer):
    """Per-channel normalization with learned scale/shift and running moments.

    Training mode normalizes with batch statistics; evaluation uses the
    running averages.
    """

    def __init__(self, name, channels, momentum=0.9, eps=1e-5):
        self.name = name
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, training=False):
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mean
            self.running_var = m * self.running_var + (1 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        return self.params["gamma"] * xhat + self.params["beta"], (xhat, inv, training)

    def backward(self, cache, dy):
        xhat, inv, training = cache
        axes = tuple(range(dy.ndim - 1))
        grads = {"gamma": (dy * xhat).sum(axis=axes), "beta": dy.sum(axis=axes)}
        dxhat = dy * self.params["gamma"]
        if not training:
            return dxhat * inv, grads
        n = dy.size // dy.shape[-1]
        dx = inv / n * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, grads


class Residual(Layer):
    """``body(x) + shortcut(x)``; the shortcut is the identity unless a layer
    (typically a 1x1 projection conv) is given."""

    def __init__(self, name, body, shortcut=None):
        self.name = name
        self.body = list(body)
        self.shortcut = shortcut
        self.params = {}

    def children(self):
        return tuple(self.body) + ((self.shortcut,) if self.shortcut is not None else ())

    def forward(self, x, training=False):
        caches = []
        h = x
        for layer in self.body:
            h, cache = layer.forward(h, training)
            caches.append(cache)
        if self.shortcut is None:
            return h + x, (caches, None)
        s, s_cache = self.shortcut.forward(x, training)
        return h + s, (caches, s_cache)

    def backward(self, cache, dy):
        caches, s_cache = cache
        grads = {}
        d = dy
        for layer, c in zip(reversed(self.body), reversed(caches)):
            d, g = layer.backward(c, d)
            grads.update({f"{layer.name}.{k}": v for k, v in g.items()})
        if self.shortcut is None:
            return d + dy, grads
        ds, g = self.shortcut.backward(s_cache, dy)
        grads.update({f"{self.shortcut.name}.{k}": v for k, v in g.items()})
        return d + ds, grads


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy loss and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return float(loss), d / n
