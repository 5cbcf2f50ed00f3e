"""Base class for composite networks and the binary cross-entropy loss."""
from __future__ import annotations

import numpy as np

from ..errors import NonFiniteActivation, NonFiniteGradient, ShapeMismatch
from .layers import Layer, sigmoid


class Module:
    """A network assembled from named layers.

    Subclasses register layers in ``self.layers`` (insertion order is the
    parameter order), implement ``forward(inputs, train, rng) -> logits`` and
    ``backward(dlogits)``. Extra free-standing tensors (e.g. a learned
    classification token) go in ``self.extra`` with grads in ``self.extra_grads``.
    """

    def __init__(self):
        self.layers: dict[str, Layer] = {}
        self.extra: dict[str, np.ndarray] = {}
        self.extra_grads: dict[str, np.ndarray] = {}

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.layers.items():
            for pname, arr in layer.params.items():
                out[f"{lname}.{pname}"] = arr
        out.update(self.extra)
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for lname, layer in self.layers.items():
            for pname, arr in layer.params.items():
                g = layer.grads.get(pname)
                out[f"{lname}.{pname}"] = np.zeros_like(arr) if g is None else g
        for k, v in self.extra.items():
            g = self.extra_grads.get(k)
            out[k] = np.zeros_like(v) if g is None else g
        return out

    def zero_grad(self):
        for layer in self.layers.values():
            layer.grads = {}
        self.extra_grads = {}

    def load_parameters(self, params: dict[str, np.ndarray]):
        own = self.parameters()
        for k, v in params.items():
            if k not in own:
                raise ShapeMismatch(f"unknown parameter {k}")
            if own[k].shape != v.shape:
                raise ShapeMismatch(f"parameter {k}: expected {own[k].shape}, got {v.shape}")
            own[k][...] = v

    def copy_parameters(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def predict_logits(self, inputs) -> np.ndarray:
        logits = self.forward(inputs, train=False, rng=None)
        check_finite(logits, "logits")
        return logits


def check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteActivation(f"non-finite values in {what}")


def check_finite_grads(grads):
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {k}")


def bce_with_logits(logits: np.ndarray, labels: np.ndarray):
    """Mean binary cross-entropy and its gradient with respect to the logits."""
    z = logits
    loss = np.mean(np.logaddexp(0.0, z) - labels * z)
    grad = (sigmoid(z) - labels) / len(z)
    return float(loss), grad
