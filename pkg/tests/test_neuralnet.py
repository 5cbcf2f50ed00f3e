import numpy as np
import pytest

from readgoal.errors import DataError, InvalidConfig, ShapeMismatch
from readgoal.neuralnet import (LAYER_TYPES, AdamW, Conv2d, LayerNorm, Linear, LstmCell, MaxPool,
                                Module, MultiHeadSelfAttention, SigmoidHead, TrainConfig,
                                bce_with_logits, layer_grad_check, load_tensors, save_tensors,
                                sigmoid, train)
from readgoal.neuralnet.gradcheck import _layer_cases, relative_error


@pytest.mark.parametrize("name", LAYER_TYPES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_layer_gradients(name, seed):
    assert layer_grad_check(name, seed) < 1e-4


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.full(3, 1e-12)) < 1e-5
    assert relative_error(np.ones(3), np.ones(3)) == 0.0


def test_zero_weight_head_gives_half():
    rng = np.random.default_rng(0)
    head = SigmoidHead(5, rng)
    head.params["W"][...] = 0
    p = sigmoid(head.forward(rng.normal(size=(7, 5))))
    np.testing.assert_array_equal(p, 0.5)


def test_layernorm_identity_on_standardized_input():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 16))
    x = (x - x.mean(-1, keepdims=True)) / x.std(-1, keepdims=True)
    np.testing.assert_allclose(LayerNorm(16).forward(x), x, atol=1e-6)


def test_single_token_attention_is_value_projection():
    rng = np.random.default_rng(1)
    att = MultiHeadSelfAttention(6, 1, rng)
    for k in ("bq", "bk", "bv", "bo"):
        att.params[k] = rng.normal(size=6)
    x = rng.normal(size=(3, 1, 6))
    p = att.params
    expected = (x @ p["Wv"] + p["bv"]) @ p["Wo"] + p["bo"]
    np.testing.assert_allclose(att.forward(x), expected, atol=1e-12)


def test_attention_mask_hides_padding():
    rng = np.random.default_rng(2)
    att = MultiHeadSelfAttention(4, 2, rng)
    x = rng.normal(size=(1, 3, 4))
    mask = np.array([[True, True, False]])
    y1 = att.forward(x, mask)
    x2 = x.copy()
    x2[0, 2] = 100.0
    y2 = att.forward(x2, mask)
    np.testing.assert_allclose(y1[0, :2], y2[0, :2], atol=1e-12)


def test_lstm_mask_freezes_state():
    rng = np.random.default_rng(3)
    lstm = LstmCell(2, 3, rng)
    x = rng.normal(size=(1, 4, 2))
    short = lstm.forward(x[:, :2])
    padded = lstm.forward(x, np.array([[1, 1, 0, 0]], dtype=float))
    np.testing.assert_allclose(short, padded, atol=1e-12)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(4)
    conv = Conv2d(2, 3, 3, 2, rng)
    conv.params["b"] = rng.normal(size=3)
    x = rng.normal(size=(2, 7, 7, 2))
    y = conv.forward(x)
    W = conv.params["W"].reshape(2, 3, 3, 3)   # (in channel, row, col, out)
    ref = np.zeros((2, 3, 3, 3))
    for i in range(3):
        for j in range(3):
            patch = x[:, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
            ref[:, i, j, :] = np.einsum("bhwc,chwo->bo", patch, W) + conv.params["b"]
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_maxpool_values():
    x = np.arange(16, dtype=float).reshape(1, 4, 4, 1)
    np.testing.assert_array_equal(MaxPool(2).forward(x)[0, :, :, 0], [[5, 7], [13, 15]])


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        Linear(3, 2, np.random.default_rng(0)).forward(np.zeros((2, 4)))


# -- backward linearity --------------------------------------------------------------------------

def _harness(name):
    from readgoal.neuralnet.gradcheck import _LayerHarness
    cases, rng = _layer_cases(0)
    layer, x, kw = cases[name]
    h = _LayerHarness(layer, x, rng, kw)
    h.forward(None)
    return h


@pytest.mark.parametrize("name", LAYER_TYPES)
def test_zero_upstream_gives_zero_grads(name):
    h = _harness(name)
    h.zero_grad()
    h.backward(np.zeros(3))
    for g in h.gradients().values():
        assert not np.any(g)


@pytest.mark.parametrize("name", LAYER_TYPES)
def test_doubling_upstream_doubles_grads(name):
    h = _harness(name)
    d = np.array([0.3, -0.2, 0.7])
    h.zero_grad()
    h.backward(d)
    g1 = {k: v.copy() for k, v in h.gradients().items()}
    h.forward(None)
    h.zero_grad()
    h.backward(2 * d)
    for k, v in h.gradients().items():
        np.testing.assert_allclose(v, 2 * g1[k], rtol=1e-12, atol=1e-15)


# -- loss, optimizer, training -------------------------------------------------------------------

def test_bce_gradient():
    z = np.array([-2.0, 0.0, 3.0])
    y = np.array([0.0, 1.0, 1.0])
    loss, g = bce_with_logits(z, y)
    ref = -np.mean(y * np.log(1 / (1 + np.exp(-z))) + (1 - y) * np.log(1 - 1 / (1 + np.exp(-z))))
    assert loss == pytest.approx(ref, rel=1e-12)
    np.testing.assert_allclose(g, (1 / (1 + np.exp(-z)) - y) / 3, rtol=1e-12)


def test_adamw_schedule():
    p = {"w": np.zeros((2, 2))}
    opt = AdamW(p, lr=1.0, total_steps=10, warmup_ratio=0.2)
    lrs = []
    for _ in range(10):
        lrs.append(opt.current_lr())
        opt.step({"w": np.ones((2, 2))})
    np.testing.assert_allclose(lrs, [0.5, 1.0, 1.0, 7 / 8, 6 / 8, 5 / 8, 4 / 8, 3 / 8, 2 / 8, 1 / 8])


def test_adamw_first_step_is_sign_times_lr():
    p = {"b": np.zeros(3)}
    AdamW(p, lr=0.1, weight_decay=0.5).step({"b": np.array([2.0, -3.0, 0.5])})
    np.testing.assert_allclose(p["b"], [-0.1, 0.1, -0.1], rtol=1e-6)


def test_adamw_decays_matrices_only():
    p = {"W": np.ones((2, 2)), "b": np.ones(2)}
    AdamW(p, lr=0.1, weight_decay=0.5).step({"W": np.zeros((2, 2)), "b": np.zeros(2)})
    np.testing.assert_allclose(p["W"], 0.95)
    np.testing.assert_array_equal(p["b"], 1.0)


class _LogReg(Module):
    def __init__(self, seed=0):
        super().__init__()
        self.layers["head"] = SigmoidHead(2, np.random.default_rng(seed))

    def forward(self, inputs, train=False, rng=None):
        return self.layers["head"].forward(inputs)

    def backward(self, dlogits):
        self.layers["head"].backward(dlogits)


class _Points:
    def __init__(self, x, y):
        self.x, self.labels = x, y

    def __len__(self):
        return len(self.labels)

    def batch(self, idx):
        return self.x[idx], self.labels[idx]


def _separable(seed, n=200):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(float)
    x += np.where(y[:, None] == 1, 0.3, -0.3)
    return _Points(x, y)


def test_separable_toy_reaches_perfect_validation():
    model = _LogReg()
    cfg = TrainConfig(learning_rate=0.05, batch_size=16, max_epochs=40, early_stop_patience=39,
                      weight_decay=0.0)
    _, hist = train(model, _separable(0), _separable(1), cfg)
    assert max(h["val_accuracy"] for h in hist) == 1.0


def test_early_stopping_on_flat_validation():
    model = _LogReg()
    data = _separable(0)
    flat = _Points(data.x, np.full(len(data), 0.5))   # accuracy is 0 every epoch
    cfg = TrainConfig(learning_rate=1e-3, max_epochs=40, early_stop_patience=8)
    _, hist = train(model, data, flat, cfg)
    assert len(hist) == 9


def test_training_deterministic():
    runs = []
    for _ in range(2):
        model = _LogReg()
        params, hist = train(model, _separable(0), _separable(1),
                             TrainConfig(max_epochs=3, early_stop_patience=2))
        runs.append((params, hist))
    assert runs[0][1] == runs[1][1]
    for k in runs[0][0]:
        np.testing.assert_array_equal(runs[0][0][k], runs[1][0][k])


def test_train_config_validation():
    with pytest.raises(InvalidConfig):
        TrainConfig(early_stop_patience=40, max_epochs=40).validate()
    with pytest.raises(InvalidConfig):
        TrainConfig(dropout_rate=1.0).validate()


# -- serialization -------------------------------------------------------------------------------

def test_tensor_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a": rng.normal(size=(3, 4)), "b": np.arange(5.0), "c": np.array(2.5)}
    save_tensors(tmp_path / "m.bin", tensors, {"kind": "x", "n": 3})
    back, meta = load_tensors(tmp_path / "m.bin")
    assert meta == {"kind": "x", "n": 3}
    assert list(back) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_bad_magic(tmp_path):
    (tmp_path / "m.bin").write_bytes(b"nope" + b"\0" * 20)
    with pytest.raises(DataError):
        load_tensors(tmp_path / "m.bin")
