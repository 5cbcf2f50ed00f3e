"""Desk-scale neural classifiers: fixation LSTM, fixation-fusion transformer, scanpath convnet."""
from __future__ import annotations

import numpy as np

from ..core import N_SACCADE_CLASSES
from ..neuralnet import (Conv2d, Dropout, Embedding, Gelu, LayerNorm, Linear, LstmCell, MaxPool,
                         Mlp, Module, MultiHeadSelfAttention, SigmoidHead)
from .data import CONTINUOUS, EYE_COLS, LING_COLS

N_CONT = len(CONTINUOUS)
N_GLOBAL = 9


def describe(module: Module) -> list[tuple]:
    """Layer-spec summary, e.g. ``("LstmCell", 11, 64)``."""
    out = []
    for name, layer in module.layers.items():
        kind = type(layer).__name__
        if isinstance(layer, SigmoidHead):
            out.append((name, kind, layer.n_in))
        elif isinstance(layer, Linear):
            out.append((name, kind, layer.n_in, layer.n_out))
        elif isinstance(layer, Embedding):
            out.append((name, kind, layer.vocab, layer.dim))
        elif isinstance(layer, LstmCell):
            out.append((name, kind, layer.n_in, layer.H))
        elif isinstance(layer, MultiHeadSelfAttention):
            out.append((name, kind, layer.d, layer.h))
        elif isinstance(layer, LayerNorm):
            out.append((name, kind, len(layer.params["gamma"])))
        elif isinstance(layer, Mlp):
            out.append((name, kind, layer.fc1.n_in, layer.fc1.n_out))
        elif isinstance(layer, Conv2d):
            out.append((name, kind, layer.cin, layer.cout, layer.k, layer.s))
        elif isinstance(layer, MaxPool):
            out.append((name, kind, layer.k))
    return out


class RnnFixation(Module):
    """LSTM over the fixation sequence; final state joined with the global measures.

    ``eye_features=False`` with ``word_dim > 0`` gives the embeddings-only
    ablation: word identities in fixation order and nothing else.
    """

    def __init__(self, class_dim=4, hidden=64, vocab_size=0, word_dim=0, eye_features=True,
                 dropout=0.1, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.eye, self.word_dim, self.class_dim, self.hidden = eye_features, word_dim, class_dim, hidden
        if not eye_features and word_dim <= 0:
            raise ValueError("the embeddings-only variant needs word_dim > 0")
        in_dim = 0
        if eye_features:
            self.layers["class_emb"] = Embedding(N_SACCADE_CLASSES, class_dim, rng, scale=0.5)
            in_dim += N_CONT + class_dim
        if word_dim:
            self.layers["word_emb"] = Embedding(vocab_size, word_dim, rng, scale=0.5)
            in_dim += word_dim
        self.layers["lstm"] = LstmCell(in_dim, hidden, rng)
        self.layers["head"] = SigmoidHead(hidden + (N_GLOBAL if eye_features else 0), rng)
        self.drop = Dropout(dropout)

    def forward(self, inputs, train=False, rng=None):
        parts = []
        if self.eye:
            parts += [inputs["x"], self.layers["class_emb"].forward(inputs["cls"])]
        if self.word_dim:
            parts.append(self.layers["word_emb"].forward(inputs["words"]))
        inp = self.drop.forward(np.concatenate(parts, axis=-1), train, rng)
        h = self.layers["lstm"].forward(inp, inputs["mask"])
        feat = np.concatenate([h, inputs["glob"]], axis=1) if self.eye else h
        return self.layers["head"].forward(feat)

    def backward(self, dlogits):
        dfeat = self.layers["head"].backward(dlogits)
        dinp = self.drop.backward(self.layers["lstm"].backward(dfeat[:, :self.hidden]))
        pos = 0
        if self.eye:
            pos = N_CONT + self.class_dim
            self.layers["class_emb"].backward(dinp[..., N_CONT:pos])
        if self.word_dim:
            self.layers["word_emb"].backward(dinp[..., pos:pos + self.word_dim])


def sinusoidal_positions(T, d):
    pos = np.arange(T)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10_000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class TransformerFusion(Module):
    """Input-level fusion: each fixation token concatenates the fixated word's
    embedding, its linguistic properties and the fixation's eye-movement
    features; a classification token is prepended and read out after the
    encoder blocks."""

    def __init__(self, vocab_size, word_dim=16, d_model=32, heads=2, n_layers=2, mlp_hidden=64,
                 dropout=0.1, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.d, self.word_dim, self.n_layers = d_model, word_dim, n_layers
        self.layers["word_emb"] = Embedding(vocab_size, word_dim, rng, scale=0.5)
        n_in = word_dim + len(LING_COLS) + len(EYE_COLS) + N_SACCADE_CLASSES
        self.layers["proj"] = Linear(n_in, d_model, rng)
        for b in range(n_layers):
            self.layers[f"ln1_{b}"] = LayerNorm(d_model)
            self.layers[f"attn_{b}"] = MultiHeadSelfAttention(d_model, heads, rng)
            self.layers[f"ln2_{b}"] = LayerNorm(d_model)
            self.layers[f"mlp_{b}"] = Mlp(d_model, mlp_hidden, rng)
        self.layers["ln_f"] = LayerNorm(d_model)
        self.layers["head"] = SigmoidHead(d_model, rng)
        self.extra["cls_token"] = rng.normal(0.0, 0.1, size=d_model)
        self.drop_in = Dropout(dropout)
        self.drop_attn = [Dropout(dropout) for _ in range(n_layers)]
        self.drop_mlp = [Dropout(dropout) for _ in range(n_layers)]

    def forward(self, inputs, train=False, rng=None):
        x, mask = inputs["x"], inputs["mask"]
        B, T, _ = x.shape
        onehot = np.eye(N_SACCADE_CLASSES)[inputs["cls"]]
        feats = np.concatenate([self.layers["word_emb"].forward(inputs["words"]),
                                x[..., LING_COLS], x[..., EYE_COLS], onehot], axis=-1)
        e = self.layers["proj"].forward(feats) + sinusoidal_positions(T, self.d)
        h = np.concatenate([np.broadcast_to(self.extra["cls_token"], (B, 1, self.d)), e], axis=1)
        full_mask = np.concatenate([np.ones((B, 1), dtype=bool), mask], axis=1)
        h = self.drop_in.forward(h, train, rng)
        for b in range(self.n_layers):
            a = self.layers[f"attn_{b}"].forward(self.layers[f"ln1_{b}"].forward(h), full_mask)
            h = h + self.drop_attn[b].forward(a, train, rng)
            m = self.layers[f"mlp_{b}"].forward(self.layers[f"ln2_{b}"].forward(h))
            h = h + self.drop_mlp[b].forward(m, train, rng)
        z = self.layers["ln_f"].forward(h[:, 0])
        return self.layers["head"].forward(z)

    def backward(self, dlogits):
        dz = self.layers["ln_f"].backward(self.layers["head"].backward(dlogits))
        B = dz.shape[0]
        dh = None
        for b in range(self.n_layers - 1, -1, -1):
            if dh is None:
                cache_T = self.layers[f"attn_{b}"]._cache[0].shape[1]
                dh = np.zeros((B, cache_T, self.d))
                dh[:, 0] = dz
            dm = self.drop_mlp[b].backward(dh)
            dh = dh + self.layers[f"ln2_{b}"].backward(self.layers[f"mlp_{b}"].backward(dm))
            da = self.drop_attn[b].backward(dh)
            dh = dh + self.layers[f"ln1_{b}"].backward(self.layers[f"attn_{b}"].backward(da))
        dh = self.drop_in.backward(dh)
        self.extra_grads["cls_token"] = dh[:, 0].sum(axis=0)
        dfeats = self.layers["proj"].backward(dh[:, 1:])
        self.layers["word_emb"].backward(dfeats[..., :self.word_dim])


class ImageConvnet(Module):
    """Three conv + pool stages over the rendered scanpath, then a small MLP head."""

    def __init__(self, image_size=64, channels=(8, 16, 16), hidden=32, dropout=0.1, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        c1, c2, c3 = channels
        self.layers["conv1"] = Conv2d(3, c1, 3, 2, rng)
        self.layers["conv1"].input_grad = False
        self.layers["pool1"] = MaxPool(2)
        self.layers["conv2"] = Conv2d(c1, c2, 3, 1, rng)
        self.layers["pool2"] = MaxPool(2)
        self.layers["conv3"] = Conv2d(c2, c3, 3, 1, rng)
        self.layers["pool3"] = MaxPool(2)
        s = (image_size - 3) // 2 + 1
        s = s // 2
        s = (s - 2) // 2
        s = (s - 2) // 2
        if s < 1:
            raise ValueError(f"image_size {image_size} too small for three conv+pool stages")
        self.flat = s * s * c3
        self.layers["fc"] = Linear(self.flat, hidden, rng)
        self.layers["head"] = SigmoidHead(hidden, rng)
        self.acts = [Gelu() for _ in range(4)]
        self.drop = Dropout(dropout)
        self.image_size = image_size

    def forward(self, inputs, train=False, rng=None):
        h = inputs["images"]
        for i, (conv, pool) in enumerate((("conv1", "pool1"), ("conv2", "pool2"),
                                          ("conv3", "pool3"))):
            h = self.layers[pool].forward(self.acts[i].forward(self.layers[conv].forward(h)))
        self._pooled_shape = h.shape
        h = self.drop.forward(h.reshape(h.shape[0], -1), train, rng)
        h = self.acts[3].forward(self.layers["fc"].forward(h))
        return self.layers["head"].forward(h)

    def backward(self, dlogits):
        d = self.layers["head"].backward(dlogits)
        d = self.layers["fc"].backward(self.acts[3].backward(d))
        d = self.drop.backward(d).reshape(self._pooled_shape)
        for i, (conv, pool) in reversed(list(enumerate((("conv1", "pool1"), ("conv2", "pool2"),
                                                         ("conv3", "pool3"))))):
            d = self.layers[conv].backward(self.acts[i].backward(self.layers[pool].backward(d)))
