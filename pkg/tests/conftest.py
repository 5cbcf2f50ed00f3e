"""Shared builders and naive reference implementations used as test oracles."""
from __future__ import annotations

import numpy as np
import pytest

from readgoal.core import Corpus, Fixation, Goal, Level, Trial, Word
from readgoal.synth import SynthConfig, generate


def make_trial(word_indices, durations, lines=None, n_words=None, participant="p0",
               paragraph="par0", article="a0", batch="1", goal=Goal.INFORMATION_SEEKING,
               level=Level.ADVANCED, correct=True, cs=(0, 0), position=1, words=None):
    """Build a trial from word indices and durations; x/y follow word and line."""
    if words is None:
        if n_words is None:
            n_words = max([w for w in word_indices if w >= 0], default=0) + 1
        lines = [0] * n_words if lines is None else list(lines)
        words = tuple(Word(paragraph, i, f"w{i}", 3 + i % 5, -float(i % 7), 1.0 + i % 3,
                           lines[i], cs[0] <= i <= cs[1]) for i in range(n_words))
    fixations = []
    for k, (w, d) in enumerate(zip(word_indices, durations)):
        if w >= 0:
            x, y = 20.0 + 30.0 * w, 40.0 * words[w].line
        else:
            x, y = -50.0, -50.0
        fixations.append(Fixation(k, int(w), x, y, float(d)))
    return Trial(participant, article, paragraph, batch, level, goal, tuple(fixations), words,
                 position, correct, cs[0], cs[1], 0.3)


def random_trial(rng, max_words=30, max_fix=60, offtext=0.05):
    n_words = int(rng.integers(1, max_words + 1))
    breaks = np.sort(rng.choice(np.arange(1, n_words + 1), size=int(rng.integers(0, 4))))
    lines = np.searchsorted(breaks, np.arange(n_words), side="right")
    n_fix = int(rng.integers(1, max_fix + 1))
    w = rng.integers(0, n_words, size=n_fix)
    w[rng.random(n_fix) < offtext] = -1
    d = np.round(rng.uniform(50, 600, size=n_fix))
    return make_trial(w.tolist(), d.tolist(), lines=lines.tolist(), n_words=n_words)


# -- naive references --------------------------------------------------------------------------

def naive_classify(a, b, lines):
    if a < 0 or b < 0:
        return "other"
    if a == b:
        return "refixation"
    if b < a:
        return "regression"
    if lines[a] == lines[b]:
        return "forward" if b == a + 1 else "skip"
    if lines[b] == lines[a] + 1:
        return "return_sweep"
    return "other"


def naive_first_pass(ws):
    out = []
    for i, w in enumerate(ws):
        if w < 0:
            out.append(False)
            continue
        out.append(all(w >= v for v in ws[:i]))
    return out


def naive_globals(ws, ds, lines):
    n_words = len(lines)
    fp = naive_first_pass(ws)
    gaze, ffd, fp_count, trt = {}, {}, {}, {}
    for w, d, f in zip(ws, ds, fp):
        if w >= 0:
            trt[w] = trt.get(w, 0.0) + d
        if f:
            gaze[w] = gaze.get(w, 0.0) + d
            fp_count[w] = fp_count.get(w, 0) + 1
            ffd.setdefault(w, d)
    sacc = [naive_classify(ws[i], ws[i + 1], lines) for i in range(len(ws) - 1)]
    fwd = [ws[i + 1] - ws[i] for i, c in enumerate(sacc) if c in ("forward", "skip")]
    singles = [gaze[w] for w in gaze if fp_count[w] == 1]

    def mean(v):
        return sum(v) / len(v) if v else 0.0

    return [
        mean(list(ffd.values())),
        mean(list(gaze.values())),
        mean(list(trt.values())),
        mean(singles),
        mean(fwd),
        sacc.count("regression") / len(sacc) if sacc else 0.0,
        sum(1 for w in range(n_words) if w not in gaze) / n_words,
        sacc.count("refixation") / len(sacc) if sacc else 0.0,
        n_words / (sum(ds) / 1000.0),
    ]


# -- shared corpora ----------------------------------------------------------------------------

@pytest.fixture(scope="session")
def small_corpus() -> Corpus:
    """One batch, 10 articles x 1 paragraph version pair, 20 participants, strong signal."""
    corpus, _ = generate(SynthConfig(n_batches=1, paragraphs_per_article=1,
                                     participants_per_batch=20, effect_size=1.0, seed=3))
    return corpus


def desk_corpus(effect_size, seed=0):
    """2,000 trials: one batch, 10 articles x 2 paragraph slots, 100 participants."""
    corpus, _ = generate(SynthConfig(n_batches=1, paragraphs_per_article=2,
                                     participants_per_batch=100, effect_size=effect_size,
                                     seed=seed))
    return corpus


@pytest.fixture(scope="session")
def strong_data():
    from readgoal.splits import make_folds
    corpus = desk_corpus(1.0)
    return corpus, make_folds(corpus, seed=0, expected_participants=None)


@pytest.fixture(scope="session")
def null_data():
    from readgoal.splits import make_folds
    corpus = desk_corpus(0.0)
    return corpus, make_folds(corpus, seed=0, expected_participants=None)


# -- acceptance report -------------------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
