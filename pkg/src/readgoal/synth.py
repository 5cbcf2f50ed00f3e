"""Synthetic eye-tracking corpora with a tunable reading-goal effect.

Information-seeking (IS) trials differ from ordinary-reading (OR) trials only
through ``effect_size`` (delta): outside the critical span IS readers fixate
for ``1/(1+delta)`` as long, skip more (skip logit + ``skip_logit_per_delta *
delta``), and with probability ``min(1, termination_per_delta * delta)`` stop
reading a few words after the span. With ``delta = 0`` every gaze quantity has
the same distribution under both goals.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import Corpus, Fixation, Goal, Level, Trial, Word, write_corpus
from .errors import InvalidConfig

CHAR_WIDTH = 11.0
LINE_HEIGHT = 60.0
LEFT_MARGIN = 100.0
TOP_MARGIN = 150.0
LINE_WIDTH = 1100.0
VOCAB_SIZE = 600


@dataclass(frozen=True)
class SynthConfig:
    n_batches: int = 3
    articles_per_batch: int = 10
    paragraphs_per_article: float = 5.4
    participants_per_batch: int = 120
    effect_size: float = 0.0
    seed: int = 0
    duration_mu: float = 5.35          # log-ms; exp(5.35) ~ 210 ms
    duration_sigma: float = 0.35
    skip_base: float = 0.18
    regression_base: float = 0.10
    refixation_base: float = 0.10
    participant_speed_sd: float = 0.1
    trial_speed_sd: float = 0.5
    skip_logit_per_delta: float = 0.8
    termination_per_delta: float = 0.35
    offtext_rate: float = 0.01
    length_mean: float = 109.0
    length_sd: float = 28.0
    length_min: int = 50
    length_max: int = 165

    def validate(self):
        if min(self.n_batches, self.articles_per_batch, self.participants_per_batch) < 1:
            raise InvalidConfig("corpus shape parameters must be positive")
        if not self.paragraphs_per_article >= 1:
            raise InvalidConfig("paragraphs_per_article must be >= 1")
        if self.participants_per_batch % 2:
            raise InvalidConfig("participants_per_batch must be even (half per goal)")
        if self.effect_size < 0:
            raise InvalidConfig("effect_size must be non-negative")
        if self.duration_sigma <= 0 or self.length_sd < 0:
            raise InvalidConfig("duration_sigma must be positive")
        for name in ("skip_base", "regression_base", "refixation_base", "offtext_rate"):
            if not 0 <= getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must lie in [0, 1)")
        if not 0 < self.length_min <= self.length_max:
            raise InvalidConfig("paragraph length bounds must satisfy 0 < min <= max")


@dataclass(frozen=True)
class _Item:
    article_id: str
    paragraph_id: str
    level: Level
    words: tuple
    cs_start: int
    cs_end: int
    difficulty: float
    xs: np.ndarray
    ys: np.ndarray


def _vocabulary(rng):
    ranks = np.arange(1, VOCAB_SIZE + 1)
    letters = np.array(list("etaoinshrdlucmfwypvbgkqjxz"))
    lengths = np.clip(np.rint(2 + 1.1 * np.log(ranks) + rng.normal(0, 0.8, VOCAB_SIZE)), 1, 14)
    texts = []
    seen = set()
    for r, ln in zip(ranks, lengths.astype(int)):
        while True:
            w = "".join(rng.choice(letters, size=ln, p=None))
            if w not in seen:
                break
        seen.add(w)
        texts.append(w)
    return texts, lengths.astype(int)


def _zipf(exponent):
    p = 1.0 / (np.arange(1, VOCAB_SIZE + 1) + 2.7) ** exponent
    return p / p.sum()


def _make_item(rng, article_id, paragraph_id, level, n_words, vocab, vlens):
    texts = vocab
    # elementary texts lean on more frequent words
    p = _zipf(1.15 if level is Level.ELEMENTARY else 0.95)
    ranks = rng.choice(VOCAB_SIZE, size=n_words, p=p)
    log_freq = np.log(p[ranks] * 1e6)
    surprisal = np.clip(-np.log2(p[ranks]) + rng.normal(0, 1.5, n_words), 0.5, None)
    rel_start = rng.uniform(0.1, 0.7)
    rel_len = rng.uniform(0.15, 0.4)
    cs_start = min(int(math.floor(rel_start * n_words)), n_words - 1)
    cs_end = min(n_words - 1, cs_start + max(1, int(round(rel_len * n_words))) - 1)
    words, xs, ys = [], [], []
    x, line = LEFT_MARGIN, 0
    for i, r in enumerate(ranks):
        width = vlens[r] * CHAR_WIDTH
        if x + width > LEFT_MARGIN + LINE_WIDTH and i > 0:
            x, line = LEFT_MARGIN, line + 1
        xs.append(x + width / 2)
        ys.append(TOP_MARGIN + line * LINE_HEIGHT)
        words.append(Word(paragraph_id, i, texts[r], int(vlens[r]), float(log_freq[i]),
                          float(surprisal[i]), line, cs_start <= i <= cs_end))
        x += width + CHAR_WIDTH
    difficulty = float(rng.beta(2, 5))
    return _Item(article_id, paragraph_id, level, tuple(words), cs_start, cs_end, difficulty,
                 np.array(xs), np.array(ys))


def _scanpath(item: _Item, is_trial: bool, cfg: SynthConfig, speed: float, rng):
    """Left-to-right walk with skips, refixations and regressions."""
    words = item.words
    n = len(words)
    delta = cfg.effect_size if is_trial else 0.0
    lengths = np.array([w.length for w in words], dtype=float)
    surpr = np.array([w.surprisal for w in words])
    outside = np.array([not w.in_critical_span for w in words])
    base_skip = np.log(cfg.skip_base / (1 - cfg.skip_base)) - 0.45 * (lengths - 4)
    skip_logit = base_skip + delta * cfg.skip_logit_per_delta * outside
    skip_p = 1.0 / (1.0 + np.exp(-skip_logit))
    dur_scale = np.where(outside, 1.0 / (1.0 + delta), 1.0) * speed
    dur_mu = cfg.duration_mu + 0.025 * (lengths - 5) + 0.02 * (surpr - 8)

    stop_at = n - 1
    if delta > 0 and rng.random() < min(1.0, cfg.termination_per_delta * delta):
        stop_at = min(n - 1, item.cs_end + 1 + int(rng.geometric(0.35)))

    cap = 3 * n
    u = rng.random((cap + 1, 4))
    z = rng.normal(size=(cap + 1, 3))
    seq = []
    pos, frontier = 0, -1
    step = 0
    while len(seq) < cap:
        if step > 0 and u[step, 3] < cfg.offtext_rate:
            seq.append(-1)
        seq.append(pos)
        frontier = max(frontier, pos)
        if frontier >= stop_at and pos == frontier:
            break
        r = u[step, 0]
        step += 1
        if r < cfg.regression_base and pos > 0:
            back = 1 + int(u[step, 1] * 3)
            pos = max(0, pos - back)
        elif r < cfg.regression_base + cfg.refixation_base:
            pass
        else:
            if pos < frontier and u[step, 2] < 0.5:
                pos = frontier
            nxt = pos + 1
            # skipping decisions use fresh draws from the per-trial stream
            while nxt < stop_at and rng.random() < skip_p[nxt]:
                nxt += 1
            pos = min(nxt, n - 1)
    seq = seq[:cap]
    fixes = []
    for order, w in enumerate(seq):
        k = min(order, cap)
        if w < 0:
            ref = seq[order - 1] if order > 0 and seq[order - 1] >= 0 else 0
            x = item.xs[ref] + z[k, 0] * 20
            y = item.ys[ref] + LINE_HEIGHT / 2
            dur = math.exp(cfg.duration_mu - 0.4 + cfg.duration_sigma * z[k, 2]) * speed
        else:
            x = item.xs[w] + z[k, 0] * lengths[w] * CHAR_WIDTH / 4
            y = item.ys[w] + z[k, 1] * 6
            dur = math.exp(dur_mu[w] + cfg.duration_sigma * z[k, 2]) * dur_scale[w]
        fixes.append(Fixation(order, int(w), round(float(x), 2), round(float(y), 2),
                              round(max(float(dur), 1.0), 1)))
    return tuple(fixes)


def _paragraph_counts(cfg, rng):
    total = int(round(cfg.articles_per_batch * cfg.paragraphs_per_article))
    base = total // cfg.articles_per_batch
    extra = total - base * cfg.articles_per_batch
    counts = np.full(cfg.articles_per_batch, base)
    counts[rng.choice(cfg.articles_per_batch, size=extra, replace=False)] += 1
    return counts


def generate(config: SynthConfig):
    """Returns (Corpus, truth record)."""
    cfg = config
    cfg.validate()
    item_rng = np.random.default_rng([cfg.seed, 7_919])
    vocab, vlens = _vocabulary(item_rng)
    trials = []
    for b in range(1, cfg.n_batches + 1):
        counts = _paragraph_counts(cfg, item_rng)
        items = []  # per paragraph slot: (adv item, ele item)
        for a, n_par in enumerate(counts):
            article_id = f"b{b}_a{a:02d}"
            for k in range(n_par):
                base = float(np.clip(item_rng.normal(cfg.length_mean, cfg.length_sd),
                                     cfg.length_min, cfg.length_max))
                pair = []
                for level, factor in ((Level.ADVANCED, 1.1), (Level.ELEMENTARY, 0.9)):
                    n_words = int(np.clip(round(base * factor), cfg.length_min, cfg.length_max))
                    pid = f"{article_id}_p{k}_{level.value}"
                    pair.append(_make_item(item_rng, article_id, pid, level, n_words, vocab, vlens))
                items.append(pair)
        goal_rng = np.random.default_rng([cfg.seed, b, 104_729])
        P = cfg.participants_per_batch
        goals = np.array([Goal.INFORMATION_SEEKING] * (P // 2) + [Goal.ORDINARY_READING] * (P // 2))
        goals = goals[goal_rng.permutation(P)]
        rank_in_goal = {}
        n_articles = len(counts)
        starts = np.concatenate([[0], np.cumsum(counts)])
        for i in range(P):
            goal = goals[i]
            rg = rank_in_goal.setdefault(goal, 0)
            rank_in_goal[goal] = rg + 1
            prng = np.random.default_rng([cfg.seed, b, i])
            speed = math.exp(cfg.participant_speed_sd * prng.normal())
            article_order = prng.permutation(n_articles)
            position = 0
            for a in article_order:
                for slot in range(starts[a], starts[a + 1]):
                    position += 1
                    item = items[slot][(rg + slot) % 2]
                    is_trial = goal is Goal.INFORMATION_SEEKING
                    trial_speed = speed * math.exp(cfg.trial_speed_sd * prng.normal())
                    fixes = _scanpath(item, is_trial, cfg, trial_speed, prng)
                    p_correct = float(np.clip(1.0 - item.difficulty + (0.05 if is_trial else 0.0),
                                              0.02, 0.98))
                    trials.append(Trial(
                        participant_id=f"b{b}_s{i:03d}", article_id=item.article_id,
                        paragraph_id=item.paragraph_id, batch_id=str(b), level=item.level,
                        goal=goal, fixations=fixes, words=item.words, paragraph_position=position,
                        answered_correctly=bool(prng.random() < p_correct),
                        cs_start_word=item.cs_start, cs_end_word=item.cs_end,
                        question_difficulty=round(item.difficulty, 6)))
    corpus = Corpus(tuple(trials))
    return corpus, truth_record(cfg)


def truth_record(cfg: SynthConfig) -> dict:
    d = cfg.effect_size
    return {
        "effect_size": d,
        "is_duration_scale_outside_span": 1.0 / (1.0 + d),
        "is_skip_logit_shift_outside_span": d * cfg.skip_logit_per_delta,
        "is_termination_probability": min(1.0, cfg.termination_per_delta * d),
        # expected coefficient signs for P(correct) in the IS subset
        "planted_signs_is": {"rt_before_cs": -1, "rt_after_cs": -1, "cs_length_relative": -1}
        if d > 0 else {},
        "config": asdict(cfg),
    }


def write_synthetic(corpus: Corpus, truth: dict, directory) -> dict[str, Path]:
    paths = write_corpus(corpus, directory)
    tp = Path(directory) / "truth.json"
    tp.write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths["truth"] = tp
    return paths
