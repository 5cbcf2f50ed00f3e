"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from .layers import (Conv2d, Embedding, Layer, LayerNorm, Linear, LstmCell, MaxPool, Mlp,
                     MultiHeadSelfAttention, SigmoidHead)
from .module import Module, bce_with_logits


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """||a - n|| / max(||a|| + ||n||, floor).

    The floor keeps tensors whose true gradient is zero (e.g. the key bias of
    softmax attention) from comparing rounding noise against rounding noise.
    """
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), floor)
    return float(num / den)


def _numeric_grad(f, arr, eps):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        fp = f()
        arr[i] = old - eps
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def grad_check(model: Module, batch, epsilon: float = 1e-4) -> float:
    """Max relative error between backprop and finite differences over all parameters.

    ``batch`` is ``(inputs, labels)``; the loss is mean binary cross-entropy
    evaluated in inference mode (no dropout).
    """
    inputs, labels = batch

    def loss():
        return bce_with_logits(model.forward(inputs, train=False, rng=None), labels)[0]

    model.zero_grad()
    logits = model.forward(inputs, train=False, rng=None)
    _, dlogits = bce_with_logits(logits, labels)
    model.backward(dlogits)
    analytic = {k: v.copy() for k, v in model.gradients().items()}
    worst = 0.0
    for name, arr in model.parameters().items():
        worst = max(worst, relative_error(analytic[name], _numeric_grad(loss, arr, epsilon)))
    return worst


class _LayerHarness(Module):
    """Wraps a single layer: scalar output = sum(layer(x) * R) mapped through a fixed head."""

    def __init__(self, layer: Layer, x, rng, extra_kwargs=None):
        super().__init__()
        self.layers["layer"] = layer
        self.x = x
        self.kw = extra_kwargs or {}
        out = layer.forward(x, **self.kw)
        self.R = rng.normal(size=out.shape)

    def forward(self, inputs, train=False, rng=None):
        out = self.layers["layer"].forward(self.x, **self.kw)
        self._shape = out.shape
        s = (out * self.R).reshape(out.shape[0], -1).sum(axis=1)
        return s

    def backward(self, dlogits):
        dy = self.R * dlogits.reshape((-1,) + (1,) * (len(self._shape) - 1))
        return self.layers["layer"].backward(dy)


def _layer_cases(seed: int):
    rng = np.random.default_rng(seed)
    B = 3
    cases = {}
    cases["Linear"] = (Linear(5, 4, rng), rng.normal(size=(B, 5)), {})
    cases["Embedding"] = (Embedding(7, 4, rng, scale=1.0), rng.integers(0, 7, size=(B, 5)), {})
    cases["LstmCell"] = (LstmCell(3, 4, rng), rng.normal(size=(B, 5, 3)),
                         {"mask": np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0], [1, 0, 0, 0, 0]],
                                           dtype=float)})
    cases["MultiHeadSelfAttention"] = (
        MultiHeadSelfAttention(8, 2, rng), rng.normal(size=(B, 4, 8)),
        {"mask": np.array([[1, 1, 1, 1], [1, 1, 0, 0], [1, 1, 1, 0]], dtype=bool)})
    ln = LayerNorm(6)
    ln.params["gamma"] = rng.normal(1.0, 0.3, size=6)
    ln.params["beta"] = rng.normal(0.0, 0.3, size=6)
    cases["LayerNorm"] = (ln, rng.normal(size=(B, 2, 6)), {})
    cases["Mlp"] = (Mlp(5, 7, rng), rng.normal(size=(B, 5)), {})
    cases["Conv2d"] = (Conv2d(2, 3, 3, 2, rng), rng.normal(size=(B, 7, 7, 2)), {})
    cases["MaxPool"] = (MaxPool(2), rng.normal(size=(B, 5, 4, 2)), {})
    cases["SigmoidHead"] = (SigmoidHead(5, rng), rng.normal(size=(B, 5)), {})
    return cases, rng


def layer_grad_check(name: str, seed: int = 0, epsilon: float = 1e-4) -> float:
    """Relative error for one layer type, covering parameters and (float) inputs."""
    cases, rng = _layer_cases(seed)
    layer, x, kw = cases[name]
    h = _LayerHarness(layer, x, rng, kw)
    labels = rng.integers(0, 2, size=x.shape[0]).astype(float)
    worst = grad_check(h, (None, labels), epsilon)
    if np.issubdtype(np.asarray(x).dtype, np.floating):
        h.zero_grad()
        logits = h.forward(None)
        _, dl = bce_with_logits(logits, labels)
        dx = h.backward(dl)

        def loss():
            return bce_with_logits(h.forward(None), labels)[0]

        worst = max(worst, relative_error(dx, _numeric_grad(loss, h.x, epsilon)))
    return worst


LAYER_TYPES = ["Linear", "Embedding", "LstmCell", "MultiHeadSelfAttention", "LayerNorm", "Mlp",
               "Conv2d", "MaxPool", "SigmoidHead"]
