"""Layers with explicit forward/backward passes.

Each layer keeps the activations it needs from the most recent ``forward`` call
and accumulates parameter gradients into ``self.grads`` during ``backward``.
Shapes follow the batch-first convention; images are NHWC.
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch


def sigmoid(z):
    # tanh form: overflow-free for any z and cheaper than a masked exp
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    x2 = x * x
    u = _GELU_C * x * (1.0 + 0.044715 * x2)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_grad(x):
    # x * x rather than x ** 3: float power is several times slower
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def _acc(self, name, g):
        if name in self.grads:
            self.grads[name] += g
        else:
            self.grads[name] = g.copy()


class Linear(Layer):
    def __init__(self, n_in, n_out, rng, scale=None):
        super().__init__()
        scale = np.sqrt(1.0 / n_in) if scale is None else scale
        self.params["W"] = rng.normal(0.0, scale, size=(n_in, n_out))
        self.params["b"] = np.zeros(n_out)
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x, train=False):
        if x.shape[-1] != self.n_in:
            raise ShapeMismatch(f"Linear expects last dim {self.n_in}, got {x.shape[-1]}")
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        x2 = self._x.reshape(-1, self.n_in)
        d2 = dy.reshape(-1, self.n_out)
        self._acc("W", x2.T @ d2)
        self._acc("b", d2.sum(axis=0))
        return dy @ self.params["W"].T


class SigmoidHead(Linear):
    """Linear map to a single logit; the sigmoid lives in the loss."""

    def __init__(self, n_in, rng):
        super().__init__(n_in, 1, rng)

    def forward(self, x, train=False):
        return super().forward(x, train)[..., 0]

    def backward(self, dy):
        return super().backward(dy[..., None])


class Embedding(Layer):
    def __init__(self, vocab, dim, rng, scale=0.1):
        super().__init__()
        self.params["W"] = rng.normal(0.0, scale, size=(vocab, dim))
        self.vocab, self.dim = vocab, dim

    def forward(self, idx, train=False):
        idx = np.asarray(idx)
        if idx.size and (idx.min() < 0 or idx.max() >= self.vocab):
            raise ShapeMismatch("embedding index out of range")
        self._idx = idx
        return self.params["W"][idx]

    def backward(self, dy):
        g = np.zeros_like(self.params["W"])
        np.add.at(g, self._idx.ravel(), dy.reshape(-1, self.dim))
        self._acc("W", g)
        return None


class LayerNorm(Layer):
    def __init__(self, dim, eps=1e-8):
        super().__init__()
        self.params["gamma"] = np.ones(dim)
        self.params["beta"] = np.zeros(dim)
        self.eps = eps

    def forward(self, x, train=False):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv
        self._cache = (xhat, inv)
        return xhat * self.params["gamma"] + self.params["beta"]

    def backward(self, dy):
        xhat, inv = self._cache
        d = xhat.shape[-1]
        self._acc("gamma", (dy * xhat).reshape(-1, d).sum(axis=0))
        self._acc("beta", dy.reshape(-1, d).sum(axis=0))
        dxhat = dy * self.params["gamma"]
        return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))


class Gelu(Layer):
    def forward(self, x, train=False):
        self._x = x
        return gelu(x)

    def backward(self, dy):
        return dy * gelu_grad(self._x)


class Dropout(Layer):
    def __init__(self, rate):
        super().__init__()
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate <= 0 or rng is None:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class Mlp(Layer):
    def __init__(self, dim, hidden, rng):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.act = Gelu()
        self.fc2 = Linear(hidden, dim, rng)
        self._bind()

    def _bind(self):
        self.params = {"fc1.W": self.fc1.params["W"], "fc1.b": self.fc1.params["b"],
                       "fc2.W": self.fc2.params["W"], "fc2.b": self.fc2.params["b"]}

    def forward(self, x, train=False):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))

    def backward(self, dy):
        self.fc1.grads, self.fc2.grads = {}, {}
        dx = self.fc1.backward(self.act.backward(self.fc2.backward(dy)))
        for k, v in self.fc1.grads.items():
            self._acc(f"fc1.{k}", v)
        for k, v in self.fc2.grads.items():
            self._acc(f"fc2.{k}", v)
        return dx

    def load(self, params):
        self.fc1.params["W"], self.fc1.params["b"] = params["fc1.W"], params["fc1.b"]
        self.fc2.params["W"], self.fc2.params["b"] = params["fc2.W"], params["fc2.b"]
        self._bind()


class MultiHeadSelfAttention(Layer):
    def __init__(self, d_model, heads, rng):
        super().__init__()
        if d_model % heads:
            raise ShapeMismatch("d_model must be divisible by the number of heads")
        s = np.sqrt(1.0 / d_model)
        for name in ("q", "k", "v", "o"):
            self.params[f"W{name}"] = rng.normal(0.0, s, size=(d_model, d_model))
            self.params[f"b{name}"] = np.zeros(d_model)
        self.d, self.h = d_model, heads
        self.dk = d_model // heads

    def _split(self, x):
        b, t, _ = x.shape
        return x.reshape(b, t, self.h, self.dk).transpose(0, 2, 1, 3)

    def _merge(self, x):
        b, _, t, _ = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, self.d)

    def forward(self, x, mask=None, train=False):
        """x: (B, T, d); mask: (B, T) bool, True for real tokens."""
        p = self.params
        q = self._split(x @ p["Wq"] + p["bq"])
        k = self._split(x @ p["Wk"] + p["bk"])
        v = self._split(x @ p["Wv"] + p["bv"])
        a = q @ k.transpose(0, 1, 3, 2)
        a *= 1.0 / np.sqrt(self.dk)
        if mask is not None:
            a += np.where(mask, 0.0, -1e30)[:, None, None, :]
        a -= a.max(axis=-1, keepdims=True)
        np.exp(a, out=a)
        a /= a.sum(axis=-1, keepdims=True)
        ctx = self._merge(a @ v)
        self._cache = (x, q, k, v, a, ctx)
        return ctx @ p["Wo"] + p["bo"]

    def backward(self, dy):
        p = self.params
        x, q, k, v, a, ctx = self._cache
        d = self.d
        self._acc("Wo", ctx.reshape(-1, d).T @ dy.reshape(-1, d))
        self._acc("bo", dy.reshape(-1, d).sum(axis=0))
        dctx = self._split(dy @ p["Wo"].T)
        da = dctx @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dctx
        ds = da * a
        ds -= a * ds.sum(axis=-1, keepdims=True)
        ds *= 1.0 / np.sqrt(self.dk)
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        x2 = x.reshape(-1, d)
        dx = np.zeros_like(x)
        for name, g in (("q", dq), ("k", dk), ("v", dv)):
            g2 = self._merge(g)
            self._acc(f"W{name}", x2.T @ g2.reshape(-1, d))
            self._acc(f"b{name}", g2.reshape(-1, d).sum(axis=0))
            dx += g2 @ p[f"W{name}"].T
        return dx


class LstmCell(Layer):
    """LSTM unrolled over a right-padded sequence; returns the last valid hidden state."""

    def __init__(self, n_in, hidden, rng):
        super().__init__()
        s = np.sqrt(1.0 / (n_in + hidden))
        self.params["W"] = rng.normal(0.0, s, size=(n_in + hidden, 4 * hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget-gate bias
        self.params["b"] = b
        self.n_in, self.H = n_in, hidden

    def forward(self, x, mask=None, train=False):
        B, T, _ = x.shape
        H = self.H
        W, b = self.params["W"], self.params["b"]
        if mask is None:
            mask = np.ones((B, T))
        mask = mask.astype(np.float64)
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        steps = []
        xh = np.empty((B, self.n_in + H))
        for t in range(T):
            xh = np.concatenate([x[:, t], h], axis=1)
            z = xh @ W + b
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = sigmoid(z[:, 3 * H:])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            m = mask[:, t:t + 1]
            steps.append((xh, i, f, g, o, c, tc, m))
            c = m * c_new + (1 - m) * c
            h = m * h_new + (1 - m) * h
        self._steps = steps
        return h

    def backward(self, dh):
        H = self.H
        W = self.params["W"]
        dW = np.zeros_like(W)
        db = np.zeros(4 * H)
        B = dh.shape[0]
        dc = np.zeros((B, H))
        dx = np.zeros((B, len(self._steps), self.n_in))
        dz = np.empty((B, 4 * H))
        for t in range(len(self._steps) - 1, -1, -1):
            xh, i, f, g, o, c_prev, tc, m = self._steps[t]
            dh_new = m * dh
            dc_new = m * dc + dh_new * o * (1 - tc * tc)
            dz[:, :H] = dc_new * g * i * (1 - i)
            dz[:, H:2 * H] = dc_new * c_prev * f * (1 - f)
            dz[:, 2 * H:3 * H] = dc_new * i * (1 - g * g)
            dz[:, 3 * H:] = dh_new * tc * o * (1 - o)
            dW += xh.T @ dz
            db += dz.sum(axis=0)
            dxh = dz @ W.T
            dx[:, t] = dxh[:, :self.n_in]
            dh = dxh[:, self.n_in:] + (1 - m) * dh
            dc = dc_new * f + (1 - m) * dc
        self._acc("W", dW)
        self._acc("b", db)
        return dx


class Conv2d(Layer):
    """Valid (unpadded) convolution over NHWC input."""

    def __init__(self, in_ch, out_ch, kernel, stride, rng):
        super().__init__()
        fan_in = in_ch * kernel * kernel
        self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, out_ch))
        self.params["b"] = np.zeros(out_ch)
        self.cin, self.cout, self.k, self.s = in_ch, out_ch, kernel, stride
        self.input_grad = True

    def forward(self, x, train=False):
        B, Hh, Ww, C = x.shape
        if C != self.cin:
            raise ShapeMismatch(f"Conv2d expects {self.cin} channels, got {C}")
        k, s = self.k, self.s
        if Hh < k or Ww < k:
            raise ShapeMismatch("input smaller than the convolution kernel")
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
        _, Ho, Wo = win.shape[:3]
        cols = win.reshape(B * Ho * Wo, C * k * k)
        self._cache = (x.shape, cols, Ho, Wo)
        return (cols @ self.params["W"] + self.params["b"]).reshape(B, Ho, Wo, self.cout)

    def backward(self, dy):
        shape, cols, Ho, Wo = self._cache
        B, _, _, C = shape
        k, s = self.k, self.s
        d2 = dy.reshape(-1, self.cout)
        self._acc("W", cols.T @ d2)
        self._acc("b", d2.sum(axis=0))
        if not self.input_grad:
            return None
        dcols = (d2 @ self.params["W"].T).reshape(B, Ho, Wo, C, k, k)
        dx = np.zeros(shape)
        for i in range(k):
            for j in range(k):
                dx[:, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s, :] += dcols[..., i, j]
        return dx


class MaxPool(Layer):
    def __init__(self, k):
        super().__init__()
        self.k = k

    def forward(self, x, train=False):
        B, Hh, Ww, C = x.shape
        k = self.k
        Ho, Wo = Hh // k, Ww // k
        if Ho == 0 or Wo == 0:
            raise ShapeMismatch("input smaller than the pooling window")
        xc = x[:, :Ho * k, :Wo * k]
        blocks = xc.reshape(B, Ho, k, Wo, k, C).transpose(0, 1, 3, 5, 2, 4).reshape(
            B, Ho, Wo, C, k * k)
        arg = blocks.argmax(axis=-1)
        self._cache = (x.shape, arg, Ho, Wo)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        shape, arg, Ho, Wo = self._cache
        B, Hh, Ww, C = shape
        k = self.k
        blocks = np.zeros((B, Ho, Wo, C, k * k))
        np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
        dx = np.zeros(shape)
        dx[:, :Ho * k, :Wo * k] = blocks.reshape(B, Ho, Wo, C, k, k).transpose(
            0, 1, 4, 2, 5, 3).reshape(B, Ho * k, Wo * k, C)
        return dx
