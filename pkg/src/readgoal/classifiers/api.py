"""Uniform fit / predict / save / load across all classifier kinds."""
from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..core import Goal, Trial, TrialKey
from ..errors import DataError, EmptyTrainingSet, InvalidConfig, MissingFeature
from ..features import (GLOBAL_FEATURE_NAMES, Standardizer, fit_standardizer_array, global_matrix,
                        reading_time_per_word)
from ..neuralnet import TrainConfig, load_tensors, predict_logits, save_tensors, sigmoid, train
from ..raster import RasterConfig
from .data import ImageData, ScalarData, SequenceFeaturizer, SequenceData, labels_of
from .logistic import C_GRID, PENALTIES, LogisticModel, fit_logistic, select_logistic
from .models import ImageConvnet, RnnFixation, TransformerFusion

log = logging.getLogger(__name__)


class ClassifierKind(enum.Enum):
    MAJORITY = "majority"
    READING_TIME = "rt"
    LOGISTIC_GLOBAL = "logistic"
    RNN = "rnn"
    TRANSFORMER = "transformer"
    CONVNET = "convnet"

    @property
    def input_representation(self) -> str:
        return _INPUTS[self]

    @property
    def is_neural(self) -> bool:
        return self in (ClassifierKind.RNN, ClassifierKind.TRANSFORMER, ClassifierKind.CONVNET)


_INPUTS = {
    ClassifierKind.MAJORITY: "none",
    ClassifierKind.READING_TIME: "scalar",
    ClassifierKind.LOGISTIC_GLOBAL: "global features",
    ClassifierKind.RNN: "fixation sequence",
    ClassifierKind.TRANSFORMER: "fixation and word sequence",
    ClassifierKind.CONVNET: "image",
}

# architecture hyperparameters; training ones come from TrainConfig
ARCH_DEFAULTS = {
    ClassifierKind.RNN: {"hidden": 64, "class_dim": 4, "word_dim": 0, "eye_features": 1},
    ClassifierKind.TRANSFORMER: {"word_dim": 16, "d_model": 32, "heads": 2, "n_layers": 2,
                                 "mlp_hidden": 64},
    ClassifierKind.CONVNET: {"image_size": 64, "hidden": 32},
}

# full search spaces; the defaults below are single points
FULL_GRIDS = {
    ClassifierKind.RNN: {"learning_rate": [1e-3, 3e-3, 1e-2], "class_dim": [4, 8],
                         "hidden": [64, 128]},
    ClassifierKind.TRANSFORMER: {"learning_rate": [3e-4, 1e-3, 3e-3],
                                 "dropout_rate": [0.1, 0.3, 0.5]},
    ClassifierKind.CONVNET: {"learning_rate": [3e-4, 1e-3, 3e-3],
                             "dropout_rate": [0.1, 0.3, 0.5]},
}
DEFAULT_GRIDS = {
    ClassifierKind.RNN: {"learning_rate": [3e-3]},
    ClassifierKind.TRANSFORMER: {"learning_rate": [1e-3]},
    ClassifierKind.CONVNET: {"learning_rate": [1e-3]},
}

_TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)


@dataclass(frozen=True)
class Prediction:
    key: TrialKey
    probability_is: float
    label: Goal

    @classmethod
    def from_probability(cls, key, p: float) -> "Prediction":
        return cls(key, float(p), Goal.INFORMATION_SEEKING if p >= 0.5 else Goal.ORDINARY_READING)


def raster_for(image_size: int) -> RasterConfig:
    """Canvas and disk sizes scaled down from the 224 px defaults."""
    scale = image_size / 224
    base = RasterConfig()
    return RasterConfig(width=image_size, height=image_size, margin=base.margin,
                        diameter_per_ms=base.diameter_per_ms * scale,
                        min_diameter=max(1, round(base.min_diameter * scale)),
                        max_diameter=max(1, round(base.max_diameter * scale)))


@dataclass
class Classifier:
    """A fitted model: kind, learned tensors and the metadata needed to rebuild it."""
    kind: ClassifierKind
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    # -- inference -----------------------------------------------------------------------------
    def predict_proba(self, trials: Sequence[Trial]) -> np.ndarray:
        trials = list(trials)
        if not trials:
            return np.zeros(0)
        k = self.kind
        if k is ClassifierKind.MAJORITY:
            return np.full(len(trials), float(self.tensors["probability"][0]))
        if k is ClassifierKind.READING_TIME:
            x = self._std("rt").apply(_rt_matrix(trials))
            return self._logistic().predict_proba(x)
        if k is ClassifierKind.LOGISTIC_GLOBAL:
            x = self._std("glob").apply(global_matrix(trials, safe=True))
            return self._logistic().predict_proba(x)
        model = self.build_module()
        model.load_parameters({n[len("param."):]: v for n, v in self.tensors.items()
                               if n.startswith("param.")})
        data = self._dataset(trials, np.zeros(len(trials)))
        return sigmoid(predict_logits(model, data))

    def predict(self, trials: Sequence[Trial]) -> list[Prediction]:
        trials = list(trials)
        return [Prediction.from_probability(t.key, p)
                for t, p in zip(trials, self.predict_proba(trials))]

    # -- internals -----------------------------------------------------------------------------
    def _std(self, prefix) -> Standardizer:
        return Standardizer(self.tensors[f"{prefix}.mean"], self.tensors[f"{prefix}.std"])

    def _logistic(self) -> LogisticModel:
        return LogisticModel(self.tensors["coef"], float(self.tensors["intercept"][0]),
                             self.meta.get("C"), self.meta.get("penalty", "none"))

    def build_module(self):
        return build_module(self.kind, self.meta["arch"], self.meta.get("vocab_size", 0),
                            self.meta["train"]["dropout_rate"], self.meta["train"]["seed"])

    def featurizer(self) -> SequenceFeaturizer:
        return SequenceFeaturizer(self._std("seq"), self._std("glob"), self.meta["vocab"])

    def _dataset(self, trials, labels):
        if self.kind is ClassifierKind.CONVNET:
            return ImageData.from_trials(trials, raster_for(self.meta["arch"]["image_size"]),
                                         labels)
        return self.featurizer().transform(trials, labels)

    # -- persistence ---------------------------------------------------------------------------
    def save(self, path) -> None:
        save_tensors(path, self.tensors, {"kind": self.kind.value, **self.meta})

    @classmethod
    def load(cls, path) -> "Classifier":
        tensors, meta = load_tensors(path)
        try:
            kind = ClassifierKind(meta.pop("kind"))
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: not a classifier file") from exc
        return cls(kind, tensors, meta)


def _rt_matrix(trials):
    return np.array([[reading_time_per_word(t)] for t in trials])


def build_module(kind: ClassifierKind, arch: dict, vocab_size: int, dropout: float, seed: int):
    if kind is ClassifierKind.RNN:
        return RnnFixation(class_dim=int(arch["class_dim"]), hidden=int(arch["hidden"]),
                           vocab_size=vocab_size, word_dim=int(arch["word_dim"]),
                           eye_features=bool(arch["eye_features"]), dropout=dropout, seed=seed)
    if kind is ClassifierKind.TRANSFORMER:
        return TransformerFusion(vocab_size, word_dim=int(arch["word_dim"]),
                                 d_model=int(arch["d_model"]), heads=int(arch["heads"]),
                                 n_layers=int(arch["n_layers"]),
                                 mlp_hidden=int(arch["mlp_hidden"]), dropout=dropout, seed=seed)
    if kind is ClassifierKind.CONVNET:
        return ImageConvnet(image_size=int(arch["image_size"]), hidden=int(arch["hidden"]),
                            dropout=dropout, seed=seed)
    raise InvalidConfig(f"{kind.value} is not a neural classifier")


# -- fitting ---------------------------------------------------------------------------------

def _check_train(trials):
    if not trials:
        raise EmptyTrainingSet("training set is empty")


def fit_majority(train_trials: Sequence[Trial]) -> Classifier:
    """Constant predictor at the training share of information-seeking trials."""
    _check_train(train_trials)
    p = float(labels_of(train_trials).mean())
    return Classifier(ClassifierKind.MAJORITY, {"probability": np.array([p])})


def fit_reading_time(train_trials: Sequence[Trial]) -> Classifier:
    """One-feature unpenalised logistic regression on reading time per word."""
    _check_train(train_trials)
    x = _rt_matrix(train_trials)
    std = fit_standardizer_array(x)
    m = fit_logistic(std.apply(x), labels_of(train_trials), penalty="none")
    return Classifier(ClassifierKind.READING_TIME,
                      {"rt.mean": std.mean, "rt.std": std.std, "coef": m.coef,
                       "intercept": np.array([m.intercept])}, {"penalty": "none", "C": None})


def fit_logistic_global(train_trials, val_trials, C_grid=C_GRID, penalty_options=PENALTIES):
    """Logistic regression on the standardized global measures; grid picked on validation."""
    _check_train(train_trials)
    if not val_trials:
        raise EmptyTrainingSet("validation set is empty")
    g_train = global_matrix(train_trials, safe=True)
    if g_train.shape[1] != len(GLOBAL_FEATURE_NAMES):
        raise MissingFeature("global feature matrix has the wrong width")
    std = fit_standardizer_array(g_train)
    best, table = select_logistic(std.apply(g_train), labels_of(train_trials),
                                  std.apply(global_matrix(val_trials, safe=True)),
                                  labels_of(val_trials), C_grid, penalty_options)
    clf = Classifier(ClassifierKind.LOGISTIC_GLOBAL,
                     {"glob.mean": std.mean, "glob.std": std.std, "coef": best.coef,
                      "intercept": np.array([best.intercept])},
                     {"penalty": best.penalty, "C": best.C})
    return clf, table


def expand_grid(grid: dict[str, list]) -> list[dict]:
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def fit_neural(kind: ClassifierKind, train_trials, val_trials, grid: dict | None = None,
               base: TrainConfig | None = None, arch: dict | None = None):
    """Train one network per grid point; keep the best validation accuracy (first wins ties).

    Returns the classifier and one report row per grid point.
    """
    _check_train(train_trials)
    if not val_trials:
        raise EmptyTrainingSet("validation set is empty")
    base = base or TrainConfig()
    arch = {**ARCH_DEFAULTS[kind], **(arch or {})}
    grid = grid if grid is not None else DEFAULT_GRIDS[kind]
    unknown = set(grid) - _TRAIN_KEYS - set(arch)
    if unknown:
        raise InvalidConfig(f"unknown hyperparameters for {kind.value}: {sorted(unknown)}")
    y_tr, y_va = labels_of(train_trials), labels_of(val_trials)

    featurizer, vocab_size = None, 0
    if kind is ClassifierKind.CONVNET:
        cache = {}
    else:
        featurizer = SequenceFeaturizer.fit(train_trials)
        vocab_size = max(featurizer.vocab.values(), default=2) + 1
        d_tr, d_va = featurizer.transform(train_trials, y_tr), featurizer.transform(val_trials, y_va)

    best, best_acc, table = None, -1.0, []
    for point in expand_grid(grid):
        cfg = replace(base, **{k: v for k, v in point.items() if k in _TRAIN_KEYS})
        a = {**arch, **{k: v for k, v in point.items() if k not in _TRAIN_KEYS}}
        if kind is ClassifierKind.CONVNET:
            size = int(a["image_size"])
            if size not in cache:
                rc = raster_for(size)
                cache[size] = (ImageData.from_trials(train_trials, rc, y_tr),
                               ImageData.from_trials(val_trials, rc, y_va))
            d_tr, d_va = cache[size]
        model = build_module(kind, a, vocab_size, cfg.dropout_rate, cfg.seed)
        params, history = train(model, d_tr, d_va, cfg)
        acc = max(h["val_accuracy"] for h in history)
        log.info("%s %s -> val accuracy %.4f (%d epochs)", kind.value, point, acc, len(history))
        table.append({**point, "val_accuracy": acc, "epochs": len(history)})
        if acc > best_acc:
            best_acc, best = acc, (params, cfg, a, history)

    params, cfg, a, history = best
    tensors = {f"param.{k}": v for k, v in params.items()}
    meta = {"arch": a, "train": cfg.to_dict(), "history": history, "vocab_size": vocab_size}
    if featurizer is not None:
        tensors.update({"seq.mean": featurizer.seq_std.mean, "seq.std": featurizer.seq_std.std,
                        "glob.mean": featurizer.glob_std.mean, "glob.std": featurizer.glob_std.std})
        meta["vocab"] = featurizer.vocab
    return Classifier(kind, tensors, meta), table


def fit(kind: ClassifierKind, train_trials, val_trials, grid=None, base=None, arch=None,
        C_grid=C_GRID, penalty_options=PENALTIES):
    """Dispatch on kind; returns (classifier, selection table)."""
    train_trials, val_trials = list(train_trials), list(val_trials)
    if kind is ClassifierKind.MAJORITY:
        return fit_majority(train_trials), []
    if kind is ClassifierKind.READING_TIME:
        return fit_reading_time(train_trials), []
    if kind is ClassifierKind.LOGISTIC_GLOBAL:
        return fit_logistic_global(train_trials, val_trials, C_grid, penalty_options)
    return fit_neural(kind, train_trials, val_trials, grid, base, arch)
