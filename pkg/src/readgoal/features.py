"""Gaze representations: global trial measures, per-fixation vectors, standardization."""
from __future__ import annotations

from dataclasses import dataclass, fields, astuple
from typing import Sequence

import numpy as np

from .core import N_SACCADE_CLASSES, SaccadeClass, Trial, first_pass_mask, saccade_classes
from .errors import EmptyTrainingSet, InvalidConfig, NoOnTextFixations


@dataclass(frozen=True)
class GlobalFeatures:
    mean_first_fixation_duration: float
    mean_gaze_duration: float
    mean_total_reading_time_per_word: float
    mean_single_fixation_duration: float
    mean_forward_saccade_length: float
    regression_rate: float
    first_pass_skip_rate: float
    refixation_rate: float
    reading_speed: float

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


GLOBAL_FEATURE_NAMES = [f.name for f in fields(GlobalFeatures)]

FIXATION_FEATURE_NAMES = (
    ["duration", "incoming_saccade_length"]
    + [f"class_{c.name.lower()}" for c in SaccadeClass]
    + ["is_first_pass", "word_length", "log_frequency", "surprisal", "relative_word_position"]
)
FIXATION_DIM = len(FIXATION_FEATURE_NAMES)
CLASS_SLICE = slice(2, 2 + N_SACCADE_CLASSES)


def global_features(trial: Trial) -> GlobalFeatures:
    w = trial.word_indices
    d = trial.durations
    on = w >= 0
    if not on.any():
        raise NoOnTextFixations(f"trial {trial.participant_id}/{trial.paragraph_id}")
    n_words = trial.n_words
    fp = first_pass_mask(trial)

    # first fixation / gaze duration over words with a first-pass fixation
    fp_idx = np.flatnonzero(fp)
    fp_words = w[fp_idx]
    gaze = np.bincount(fp_words, weights=d[fp_idx], minlength=n_words)
    fp_count = np.bincount(fp_words, minlength=n_words)
    _, first_pos = np.unique(fp_words, return_index=True)
    ffd = d[fp_idx[first_pos]]
    fixated_fp = fp_count > 0
    single = fp_count == 1

    trt = np.bincount(w[on], weights=d[on], minlength=n_words)
    fixated = np.bincount(w[on], minlength=n_words) > 0

    sac = saccade_classes(trial)
    n_sac = len(sac)
    fwd = (sac == SaccadeClass.FORWARD) | (sac == SaccadeClass.SKIP)
    if fwd.any():
        fsl = float(np.mean((w[1:] - w[:-1])[fwd]))
    else:
        fsl = 0.0

    return GlobalFeatures(
        mean_first_fixation_duration=float(ffd.mean()) if len(ffd) else 0.0,
        mean_gaze_duration=float(gaze[fixated_fp].mean()) if fixated_fp.any() else 0.0,
        mean_total_reading_time_per_word=float(trt[fixated].mean()),
        mean_single_fixation_duration=float(gaze[single].mean()) if single.any() else 0.0,
        mean_forward_saccade_length=fsl,
        regression_rate=float(np.sum(sac == SaccadeClass.REGRESSION) / n_sac) if n_sac else 0.0,
        first_pass_skip_rate=float(np.sum(~fixated_fp) / n_words),
        refixation_rate=float(np.sum(sac == SaccadeClass.REFIXATION) / n_sac) if n_sac else 0.0,
        reading_speed=float(n_words / (d.sum() / 1000.0)),
    )


def reading_time_per_word(trial: Trial) -> float:
    return float(trial.durations.sum() / trial.n_words)


def fixation_features(trial: Trial) -> np.ndarray:
    """(N, FIXATION_DIM) array, one row per fixation in temporal order."""
    w = trial.word_indices
    n = len(w)
    out = np.zeros((n, FIXATION_DIM))
    out[:, 0] = trial.durations
    cls = np.full(n, SaccadeClass.OTHER, dtype=np.int64)
    if n > 1:
        cls[1:] = saccade_classes(trial)
        on_pair = (w[1:] >= 0) & (w[:-1] >= 0)
        out[1:, 1] = np.where(on_pair, w[1:] - w[:-1], 0)
    out[np.arange(n), 2 + cls] = 1.0
    out[:, 8] = first_pass_mask(trial)
    on = w >= 0
    if on.any():
        words = trial.words
        wi = w[on]
        out[on, 9] = [words[i].length for i in wi]
        out[on, 10] = [words[i].log_frequency for i in wi]
        out[on, 11] = [words[i].surprisal for i in wi]
        denom = max(trial.n_words - 1, 1)
        out[on, 12] = wi / denom
    return out


def fixation_classes(features: np.ndarray) -> np.ndarray:
    return np.argmax(features[:, CLASS_SLICE], axis=1)


def global_matrix(trials: Sequence[Trial], safe: bool = False) -> np.ndarray:
    """Stack global features; with ``safe`` a trial without on-text fixations gets zeros."""
    rows = []
    for t in trials:
        try:
            rows.append(global_features(t).to_array())
        except NoOnTextFixations:
            if not safe:
                raise
            rows.append(np.zeros(len(GLOBAL_FEATURE_NAMES)))
    return np.vstack(rows) if rows else np.zeros((0, len(GLOBAL_FEATURE_NAMES)))


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean


def fit_standardizer_array(x: np.ndarray) -> Standardizer:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyTrainingSet("cannot fit a standardizer on an empty training set")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    degenerate = ~(std > 1e-12)
    # zero-variance columns pass through unchanged
    mean = np.where(degenerate, 0.0, mean)
    std = np.where(degenerate, 1.0, std)
    return Standardizer(mean, std)


def fit_standardizer(trials: Sequence[Trial], feature_kind: str) -> Standardizer:
    if not trials:
        raise EmptyTrainingSet("cannot fit a standardizer on an empty training set")
    if feature_kind == "global":
        return fit_standardizer_array(global_matrix(trials, safe=True))
    if feature_kind == "fixation":
        return fit_standardizer_array(np.vstack([fixation_features(t) for t in trials]))
    if feature_kind == "reading_time":
        return fit_standardizer_array(np.array([[reading_time_per_word(t)] for t in trials]))
    raise InvalidConfig(f"unknown feature kind {feature_kind!r}")


def apply(standardizer: Standardizer, features: np.ndarray) -> np.ndarray:
    return standardizer.apply(features)
