"""Mini-batch training with early stopping on validation accuracy."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np

from ..errors import DivergedTraining, InvalidConfig
from .module import Module, bce_with_logits, check_finite_grads
from .optim import AdamW

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    dropout_rate: float = 0.1
    batch_size: int = 16
    max_epochs: int = 40
    early_stop_patience: int = 8
    warmup_ratio: float = 0.06
    weight_decay: float = 0.1
    seed: int = 0

    def validate(self):
        if not self.learning_rate >= 0:
            raise InvalidConfig("learning_rate must be non-negative")
        if not 0 <= self.dropout_rate < 1:
            raise InvalidConfig("dropout_rate must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidConfig("batch_size and max_epochs must be positive")
        if not 0 < self.early_stop_patience < self.max_epochs:
            raise InvalidConfig("early_stop_patience must be positive and below max_epochs")
        if not 0 <= self.warmup_ratio < 1 or self.weight_decay < 0:
            raise InvalidConfig("warmup_ratio must lie in [0, 1) and weight_decay be >= 0")

    def to_dict(self):
        return asdict(self)


class Dataset(Protocol):
    labels: np.ndarray

    def __len__(self) -> int: ...

    def batch(self, idx: np.ndarray): ...


def _lengths(data):
    return getattr(data, "lengths", None)


def make_batches(data, batch_size, rng) -> list[np.ndarray]:
    """Shuffled batches; with per-example lengths, batches group similar lengths."""
    n = len(data)
    perm = rng.permutation(n)
    lengths = _lengths(data)
    if lengths is None:
        return [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    pool = batch_size * 16
    batches = []
    for i in range(0, n, pool):
        chunk = perm[i:i + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[j:j + batch_size] for j in range(0, len(chunk), batch_size))
    order = rng.permutation(len(batches))
    return [batches[k] for k in order]


def predict_logits(model: Module, data, batch_size=128) -> np.ndarray:
    n = len(data)
    lengths = _lengths(data)
    order = np.argsort(lengths, kind="stable") if lengths is not None else np.arange(n)
    out = np.empty(n)
    for i in range(0, n, batch_size):
        idx = order[i:i + batch_size]
        inputs, _ = data.batch(idx)
        out[idx] = model.predict_logits(inputs)
    return out


def accuracy_from_logits(logits, labels) -> float:
    return float(np.mean((logits >= 0).astype(int) == labels))


def train(model: Module, train_set, val_set, config: TrainConfig):
    """Fit ``model`` in place; returns (best parameters, history)."""
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise InvalidConfig("training and validation sets must be nonempty")
    rng = np.random.default_rng(config.seed)
    steps_per_epoch = int(np.ceil(len(train_set) / config.batch_size))
    opt = AdamW(model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay,
                total_steps=steps_per_epoch * config.max_epochs, warmup_ratio=config.warmup_ratio)
    history = []
    best_acc, best_params, since_best = -1.0, model.copy_parameters(), 0
    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for idx in make_batches(train_set, config.batch_size, rng):
            inputs, labels = train_set.batch(idx)
            model.zero_grad()
            logits = model.forward(inputs, train=True, rng=rng)
            loss, dlogits = bce_with_logits(logits, labels)
            if not np.isfinite(loss):
                raise DivergedTraining(f"non-finite training loss at epoch {epoch}")
            model.backward(dlogits)
            grads = model.gradients()
            check_finite_grads(grads)
            opt.step(grads)
            losses.append(loss * len(idx))
        train_loss = float(np.sum(losses) / len(train_set))
        val_acc = accuracy_from_logits(predict_logits(model, val_set), val_set.labels)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_accuracy": val_acc})
        log.debug("epoch %d loss %.4f val_acc %.4f", epoch, train_loss, val_acc)
        if val_acc > best_acc:
            best_acc, best_params, since_best = val_acc, model.copy_parameters(), 0
        else:
            since_best += 1
            if since_best >= config.early_stop_patience:
                break
    model.load_parameters(best_params)
    return best_params, history
