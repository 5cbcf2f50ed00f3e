"""Trials, words, fixations; corpus ingestion and scanpath primitives."""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DanglingReference,
    DataError,
    DuplicateTrial,
    EmptyTrial,
    MissingColumn,
)


class Goal(enum.Enum):
    INFORMATION_SEEKING = "is"
    ORDINARY_READING = "or"


class Level(enum.Enum):
    ADVANCED = "adv"
    ELEMENTARY = "ele"


class SaccadeClass(enum.IntEnum):
    FORWARD = 0
    SKIP = 1
    REFIXATION = 2
    RETURN_SWEEP = 3
    REGRESSION = 4
    OTHER = 5


N_SACCADE_CLASSES = len(SaccadeClass)


class Word(NamedTuple):
    paragraph_id: str
    index: int
    text: str
    length: int
    log_frequency: float
    surprisal: float
    line: int
    in_critical_span: bool


class Fixation(NamedTuple):
    order: int
    word_index: int
    x: float
    y: float
    duration: float


TrialKey = tuple[str, str]


@dataclass(frozen=True)
class Trial:
    participant_id: str
    article_id: str
    paragraph_id: str
    batch_id: str
    level: Level
    goal: Goal
    fixations: tuple[Fixation, ...]
    words: tuple[Word, ...]
    paragraph_position: int
    answered_correctly: bool
    cs_start_word: int
    cs_end_word: int
    question_difficulty: float

    def __post_init__(self):
        validate_trial(self)

    @property
    def key(self) -> TrialKey:
        return (self.participant_id, self.paragraph_id)

    @property
    def n_words(self) -> int:
        return len(self.words)

    @cached_property
    def word_indices(self) -> np.ndarray:
        return np.fromiter((f.word_index for f in self.fixations), dtype=np.int64,
                           count=len(self.fixations))

    @cached_property
    def durations(self) -> np.ndarray:
        return np.fromiter((f.duration for f in self.fixations), dtype=np.float64,
                           count=len(self.fixations))

    @cached_property
    def lines(self) -> np.ndarray:
        return np.fromiter((w.line for w in self.words), dtype=np.int64, count=len(self.words))


def validate_trial(trial: Trial) -> None:
    where = f"trial {trial.participant_id}/{trial.paragraph_id}"
    if not trial.fixations:
        raise EmptyTrial(f"{where}: no fixations")
    if not trial.words:
        raise DataError(f"{where}: no words")
    for i, w in enumerate(trial.words):
        if w.index != i:
            raise DataError(f"{where}: word indices must be contiguous from 0 (got {w.index} at {i})")
        if w.length < 1 or w.line < 0:
            raise DataError(f"{where}: word {i} has invalid length/line")
    n = len(trial.words)
    prev = -1
    for f in trial.fixations:
        if f.order <= prev:
            raise DataError(f"{where}: fixation orders must be strictly increasing")
        prev = f.order
        if not f.duration > 0:
            raise DataError(f"{where}: fixation {f.order} has nonpositive duration")
        if f.word_index != -1 and not 0 <= f.word_index < n:
            raise DanglingReference(
                f"{where}: fixation {f.order} cites word {f.word_index}, paragraph has {n} words")
    if trial.fixations[0].order != 0:
        raise DataError(f"{where}: fixation orders must start at 0")
    if not 0 <= trial.cs_start_word <= trial.cs_end_word < n:
        raise DataError(f"{where}: critical span [{trial.cs_start_word}, {trial.cs_end_word}] "
                        f"outside paragraph of {n} words")


@dataclass(frozen=True)
class Corpus:
    trials: tuple[Trial, ...]
    participants: frozenset = field(init=False)
    articles: frozenset = field(init=False)
    paragraphs: frozenset = field(init=False)

    def __post_init__(self):
        seen = set()
        goals: dict[str, Goal] = {}
        for t in self.trials:
            if t.key in seen:
                raise DuplicateTrial(f"duplicate trial for participant {t.participant_id}, "
                                     f"paragraph {t.paragraph_id}")
            seen.add(t.key)
            g = goals.setdefault(t.participant_id, t.goal)
            if g is not t.goal:
                raise DataError(f"participant {t.participant_id} has trials under both goals")
        object.__setattr__(self, "participants", frozenset(t.participant_id for t in self.trials))
        object.__setattr__(self, "articles", frozenset(t.article_id for t in self.trials))
        object.__setattr__(self, "paragraphs", frozenset(t.paragraph_id for t in self.trials))

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    @cached_property
    def by_key(self) -> dict[TrialKey, Trial]:
        return {t.key: t for t in self.trials}

    def subset(self, keys: Iterable[TrialKey]) -> list[Trial]:
        return [self.by_key[k] for k in keys]


# --- scanpath primitives ----------------------------------------------------


def classify_saccade(prev: Fixation, cur: Fixation, words: Sequence[Word]) -> SaccadeClass:
    a, b = prev.word_index, cur.word_index
    if a < 0 or b < 0:
        return SaccadeClass.OTHER
    if a == b:
        return SaccadeClass.REFIXATION
    if b < a:
        return SaccadeClass.REGRESSION
    la, lb = words[a].line, words[b].line
    if la == lb:
        return SaccadeClass.FORWARD if b - a == 1 else SaccadeClass.SKIP
    if lb == la + 1:
        return SaccadeClass.RETURN_SWEEP
    return SaccadeClass.OTHER


def saccade_classes(trial: Trial) -> np.ndarray:
    """Class of each saccade (length N-1), vectorised equivalent of classify_saccade."""
    w = trial.word_indices
    if len(w) < 2:
        return np.zeros(0, dtype=np.int64)
    a, b = w[:-1], w[1:]
    off = (a < 0) | (b < 0)
    lines = trial.lines
    la = lines[np.where(a < 0, 0, a)]
    lb = lines[np.where(b < 0, 0, b)]
    out = np.full(len(a), SaccadeClass.OTHER, dtype=np.int64)
    fwd = (b > a) & (la == lb)
    out[fwd & (b - a == 1)] = SaccadeClass.FORWARD
    out[fwd & (b - a >= 2)] = SaccadeClass.SKIP
    out[(b > a) & (lb == la + 1)] = SaccadeClass.RETURN_SWEEP
    out[b < a] = SaccadeClass.REGRESSION
    out[a == b] = SaccadeClass.REFIXATION
    out[off] = SaccadeClass.OTHER
    return out


def first_pass_mask(trial: Trial) -> np.ndarray:
    """True where a fixation lands on a word not yet passed to the right."""
    w = trial.word_indices
    # running max of earlier on-text word indices; -1 means none yet
    prior_max = np.maximum.accumulate(np.concatenate(([-1], w[:-1])))
    return (w >= 0) & (w >= prior_max)


# --- CSV ingestion -------------------------------------------------------------

FIXATION_COLUMNS = ["participant_id", "paragraph_id", "order", "word_index", "x", "y", "duration_ms"]
WORD_COLUMNS = ["paragraph_id", "index", "text", "length", "log_frequency", "surprisal", "line",
                "in_critical_span"]
TRIAL_COLUMNS = ["participant_id", "article_id", "paragraph_id", "batch_id", "level", "goal",
                 "paragraph_position", "answered_correctly", "cs_start_word", "cs_end_word",
                 "question_difficulty"]


def _read(path, columns, name) -> pd.DataFrame:
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise MissingColumn(f"{name} ({path}): missing column(s) {', '.join(missing)}")
    return df


def _numeric(df, col, name, kind=float):
    try:
        if kind is float:
            # exact decimal parsing so written corpora round-trip bit for bit
            return np.array([float(v) for v in df[col]], dtype=np.float64)
        return pd.to_numeric(df[col]).to_numpy(dtype=np.int64)
    except (ValueError, TypeError) as exc:
        bad = [i for i, v in enumerate(df[col]) if not _parses(v, kind)]
        row = bad[0] + 2 if bad else "?"
        raise DataError(f"{name} row {row}: column {col!r} is not {kind.__name__}") from exc


def _parses(v, kind):
    try:
        kind(v)
        return True
    except ValueError:
        return False


def parse_corpus(fixations_path, words_path, trials_path) -> Corpus:
    fx = _read(fixations_path, FIXATION_COLUMNS, "fixations.csv")
    wd = _read(words_path, WORD_COLUMNS, "words.csv")
    tr = _read(trials_path, TRIAL_COLUMNS, "trials.csv")

    w_index = _numeric(wd, "index", "words.csv", int)
    w_len = _numeric(wd, "length", "words.csv", int)
    w_freq = _numeric(wd, "log_frequency", "words.csv")
    surprisal_raw = wd["surprisal"].to_numpy()
    w_line = _numeric(wd, "line", "words.csv", int)
    w_cs = _numeric(wd, "in_critical_span", "words.csv", int)
    words_by_par: dict[str, list[Word]] = {}
    for i, pid in enumerate(wd["paragraph_id"].to_numpy()):
        s = surprisal_raw[i]
        # surprisal falls back to -log_frequency when not supplied
        surprisal = float(s) if s != "" else -float(w_freq[i])
        words_by_par.setdefault(pid, []).append(
            Word(pid, int(w_index[i]), wd["text"].iat[i], int(w_len[i]), float(w_freq[i]), surprisal,
                 int(w_line[i]), bool(w_cs[i])))
    for pid, ws in words_by_par.items():
        ws.sort(key=lambda w: w.index)
        for j, w in enumerate(ws):
            if w.index != j:
                raise DataError(f"words.csv: paragraph {pid} word indices not contiguous from 0")

    order = _numeric(fx, "order", "fixations.csv", int)
    widx = _numeric(fx, "word_index", "fixations.csv", int)
    xs = _numeric(fx, "x", "fixations.csv")
    ys = _numeric(fx, "y", "fixations.csv")
    dur = _numeric(fx, "duration_ms", "fixations.csv")
    fix_by_key: dict[TrialKey, list[Fixation]] = {}
    fx_par = fx["paragraph_id"].to_numpy()
    fx_part = fx["participant_id"].to_numpy()
    for i in range(len(fx)):
        pid = fx_par[i]
        ws = words_by_par.get(pid)
        if ws is None:
            raise DanglingReference(f"fixations.csv row {i + 2}: unknown paragraph {pid!r}")
        if widx[i] != -1 and not 0 <= widx[i] < len(ws):
            raise DanglingReference(
                f"fixations.csv row {i + 2}: word_index={widx[i]} but paragraph {pid} has "
                f"{len(ws)} words")
        if not dur[i] > 0:
            raise DataError(f"fixations.csv row {i + 2}: duration_ms must be positive")
        fix_by_key.setdefault((fx_part[i], pid), []).append(
            Fixation(int(order[i]), int(widx[i]), float(xs[i]), float(ys[i]), float(dur[i])))

    pos = _numeric(tr, "paragraph_position", "trials.csv", int)
    correct = _numeric(tr, "answered_correctly", "trials.csv", int)
    cs0 = _numeric(tr, "cs_start_word", "trials.csv", int)
    cs1 = _numeric(tr, "cs_end_word", "trials.csv", int)
    qd = _numeric(tr, "question_difficulty", "trials.csv")
    trials = []
    seen = {}
    for i in range(len(tr)):
        row = tr.iloc[i]
        key = (row["participant_id"], row["paragraph_id"])
        if key in seen:
            raise DuplicateTrial(f"trials.csv row {i + 2}: participant {key[0]} / paragraph {key[1]} "
                                 f"already defined at row {seen[key]}")
        seen[key] = i + 2
        ws = words_by_par.get(key[1])
        if ws is None:
            raise DanglingReference(f"trials.csv row {i + 2}: paragraph {key[1]!r} has no words")
        fixes = fix_by_key.pop(key, None)
        if not fixes:
            raise EmptyTrial(f"trials.csv row {i + 2}: trial {key[0]}/{key[1]} has no fixations")
        fixes.sort(key=lambda f: f.order)
        try:
            level, goal = Level(row["level"]), Goal(row["goal"])
        except ValueError as exc:
            raise DataError(f"trials.csv row {i + 2}: bad level/goal value") from exc
        try:
            trials.append(Trial(key[0], row["article_id"], key[1], row["batch_id"], level, goal,
                                tuple(fixes), tuple(ws), int(pos[i]), bool(correct[i]), int(cs0[i]),
                                int(cs1[i]), float(qd[i])))
        except DataError as exc:
            raise type(exc)(f"trials.csv row {i + 2}: {exc}") from exc
    if fix_by_key:
        key = next(iter(fix_by_key))
        raise DanglingReference(f"fixations.csv: fixations for unknown trial {key[0]}/{key[1]}")
    return Corpus(tuple(trials))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_corpus(corpus: Corpus, directory) -> dict[str, Path]:
    """Write the three-CSV format; returns the file paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {k: d / f"{k}.csv" for k in ("fixations", "words", "trials")}
    with open(paths["fixations"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(FIXATION_COLUMNS)
        for t in corpus.trials:
            for f in t.fixations:
                w.writerow([t.participant_id, t.paragraph_id, f.order, f.word_index, _fmt(f.x),
                            _fmt(f.y), _fmt(f.duration)])
    with open(paths["words"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(WORD_COLUMNS)
        done = set()
        for t in corpus.trials:
            if t.paragraph_id in done:
                continue
            done.add(t.paragraph_id)
            for wd in t.words:
                w.writerow([wd.paragraph_id, wd.index, wd.text, wd.length, _fmt(wd.log_frequency),
                            _fmt(wd.surprisal), wd.line, int(wd.in_critical_span)])
    with open(paths["trials"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRIAL_COLUMNS)
        for t in corpus.trials:
            w.writerow([t.participant_id, t.article_id, t.paragraph_id, t.batch_id, t.level.value,
                        t.goal.value, t.paragraph_position, int(t.answered_correctly),
                        t.cs_start_word, t.cs_end_word, _fmt(t.question_difficulty)])
    return paths


def load_corpus(directory) -> Corpus:
    d = Path(directory)
    return parse_corpus(d / "fixations.csv", d / "words.csv", d / "trials.csv")
