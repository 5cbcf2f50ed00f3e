"""Model inputs built from trials.

Everything here reads only fixations and word properties (text, length,
frequency, surprisal, line). Labels are attached separately, and question,
answer and critical-span fields are never touched.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..core import Goal, Trial
from ..features import (FIXATION_FEATURE_NAMES, Standardizer, fit_standardizer_array,
                        fixation_classes, fixation_features, global_matrix)
from ..raster import RasterConfig, render_scanpath

# continuous per-fixation columns fed to the sequence models (class one-hots go separately)
CONTINUOUS = [FIXATION_FEATURE_NAMES.index(n) for n in
              ("duration", "incoming_saccade_length", "is_first_pass", "word_length",
               "log_frequency", "surprisal", "relative_word_position")]
EYE_COLS = [0, 1, 2, 6]          # positions within CONTINUOUS: duration, length, first pass, rel pos
LING_COLS = [3, 4, 5]            # word length, log frequency, surprisal
PAD, UNK, OFFTEXT = 0, 1, 2


def labels_of(trials: Sequence[Trial]) -> np.ndarray:
    return np.array([t.goal is Goal.INFORMATION_SEEKING for t in trials], dtype=np.float64)


def build_vocab(trials: Sequence[Trial]) -> dict[str, int]:
    vocab: dict[str, int] = {}
    for t in sorted({t.paragraph_id: t for t in trials}.values(), key=lambda t: t.paragraph_id):
        for w in t.words:
            key = w.text.lower()
            if key not in vocab:
                vocab[key] = len(vocab) + 3
    return vocab


def word_ids(trial: Trial, vocab: dict[str, int]) -> np.ndarray:
    w = trial.word_indices
    table = np.array([vocab.get(x.text.lower(), UNK) for x in trial.words], dtype=np.int64)
    return np.where(w >= 0, table[np.maximum(w, 0)], OFFTEXT)


class SequenceFeaturizer:
    """Per-fixation arrays plus global features, standardized with training statistics."""

    def __init__(self, seq_std: Standardizer, glob_std: Standardizer, vocab: dict[str, int]):
        self.seq_std, self.glob_std, self.vocab = seq_std, glob_std, vocab

    @classmethod
    def fit(cls, trials: Sequence[Trial]) -> "SequenceFeaturizer":
        raw = np.vstack([fixation_features(t)[:, CONTINUOUS] for t in trials])
        return cls(fit_standardizer_array(raw),
                   fit_standardizer_array(global_matrix(trials, safe=True)),
                   build_vocab(trials))

    def transform(self, trials: Sequence[Trial], labels=None) -> "SequenceData":
        seqs, classes, words = [], [], []
        for t in trials:
            f = fixation_features(t)
            seqs.append(self.seq_std.apply(f[:, CONTINUOUS]))
            classes.append(fixation_classes(f))
            words.append(word_ids(t, self.vocab))
        glob = self.glob_std.apply(global_matrix(trials, safe=True))
        if labels is None:
            labels = np.zeros(len(trials))
        return SequenceData(seqs, classes, words, glob, np.asarray(labels, dtype=np.float64))


class SequenceData:
    def __init__(self, seqs, classes, words, glob, labels):
        self.seqs, self.classes, self.words = seqs, classes, words
        self.glob = glob
        self.labels = labels
        self.lengths = np.array([len(s) for s in seqs])

    def __len__(self):
        return len(self.seqs)

    def batch(self, idx):
        idx = np.asarray(idx)
        T = int(self.lengths[idx].max())
        B = len(idx)
        F = self.seqs[0].shape[1]
        x = np.zeros((B, T, F))
        cls = np.zeros((B, T), dtype=np.int64)
        words = np.zeros((B, T), dtype=np.int64)
        mask = np.zeros((B, T), dtype=bool)
        for r, i in enumerate(idx):
            n = self.lengths[i]
            x[r, :n] = self.seqs[i]
            cls[r, :n] = self.classes[i]
            words[r, :n] = self.words[i]
            mask[r, :n] = True
        inputs = {"x": x, "cls": cls, "words": words, "mask": mask, "glob": self.glob[idx]}
        return inputs, self.labels[idx]


_IMAGE_CACHE: dict = {}
_IMAGE_CACHE_LIMIT = 60_000


def _rendered(trial: Trial, config: RasterConfig) -> np.ndarray:
    """Rendering is deterministic, so images are memoised across folds and grid points."""
    key = (trial.key, trial.fixations, config)
    img = _IMAGE_CACHE.get(key)
    if img is None:
        if len(_IMAGE_CACHE) >= _IMAGE_CACHE_LIMIT:
            _IMAGE_CACHE.clear()
        img = np.rint(render_scanpath(trial, config) * 255).astype(np.uint8)
        _IMAGE_CACHE[key] = img
    return img


class ImageData:
    """Rendered scanpaths kept as uint8 to bound memory; converted per batch."""

    def __init__(self, images: np.ndarray, labels):
        self.images = images
        self.labels = np.asarray(labels, dtype=np.float64)

    @classmethod
    def from_trials(cls, trials: Sequence[Trial], config: RasterConfig, labels=None):
        imgs = np.stack([_rendered(t, config) for t in trials])
        return cls(imgs, np.zeros(len(trials)) if labels is None else labels)

    def __len__(self):
        return len(self.images)

    def batch(self, idx):
        # centre pixel values around zero
        return {"images": self.images[np.asarray(idx)] / 255.0 - 0.5}, self.labels[idx]


class ScalarData:
    def __init__(self, x, labels):
        self.x = np.asarray(x, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.float64)

    def __len__(self):
        return len(self.x)

    def batch(self, idx):
        return {"x": self.x[idx]}, self.labels[idx]
