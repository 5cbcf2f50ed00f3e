"""Ten-fold cross-validation with article-level allocation and three test regimes."""
from __future__ import annotations

import csv
import enum
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Corpus, Goal, Trial, TrialKey
from .errors import DataError, MalformedCorpus, UnknownTrial

N_FOLDS = 10
N_VAL_ARTICLES = 2
TARGET_PROPORTIONS = {"Train": 0.64, "Val": 0.17, "NewItem": 0.09, "NewParticipant": 0.09,
                      "NewItemParticipant": 0.01}
N_CANDIDATES = 400


class Regime(enum.Enum):
    TRAIN = "Train"
    VAL = "Val"
    NEW_ITEM = "NewItem"
    NEW_PARTICIPANT = "NewParticipant"
    NEW_ITEM_PARTICIPANT = "NewItemParticipant"


TEST_REGIMES = (Regime.NEW_ITEM, Regime.NEW_PARTICIPANT, Regime.NEW_ITEM_PARTICIPANT)


@dataclass(frozen=True)
class BatchFold:
    train_articles: tuple[str, ...]
    val_articles: tuple[str, ...]
    test_article: str
    train_participants: tuple[str, ...]
    test_participants: tuple[str, ...]


@dataclass
class SplitPlan:
    folds: list[dict[str, BatchFold]]          # fold -> batch_id -> allocation
    regimes: list[dict[TrialKey, Regime]]       # fold -> trial key -> regime

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def keys(self, fold: int, *regimes: Regime) -> list[TrialKey]:
        wanted = set(regimes)
        return [k for k, r in self.regimes[fold].items() if r in wanted]

    def counts(self, fold: int) -> dict[Regime, int]:
        out = {r: 0 for r in Regime}
        for r in self.regimes[fold].values():
            out[r] += 1
        return out


def _batch_structure(corpus: Corpus, expected_articles, expected_participants):
    batches: dict[str, dict] = defaultdict(lambda: {"articles": defaultdict(set),
                                                    "participants": {}})
    for t in corpus.trials:
        b = batches[t.batch_id]
        b["articles"][t.article_id].add(t.paragraph_id)
        b["participants"][t.participant_id] = t.goal
    for bid, b in batches.items():
        n_a, n_p = len(b["articles"]), len(b["participants"])
        if n_a != expected_articles:
            raise MalformedCorpus(f"batch {bid}: {n_a} articles, expected {expected_articles}")
        if expected_participants is not None and n_p != expected_participants:
            raise MalformedCorpus(
                f"batch {bid}: {n_p} participants, expected {expected_participants}")
        if n_p % N_FOLDS:
            raise MalformedCorpus(f"batch {bid}: {n_p} participants is not a multiple of "
                                  f"{N_FOLDS}")
    return dict(sorted(batches.items()))


def _participant_groups(participants: dict[str, Goal], rng) -> list[list[str]]:
    """Ten equal rotation groups, each as goal-balanced as the batch allows."""
    by_goal = defaultdict(list)
    for p, g in sorted(participants.items()):
        by_goal[g].append(p)
    pools = [list(rng.permutation(v)) for _, v in sorted(by_goal.items(), key=lambda kv: kv[0].value)]
    interleaved = []
    while any(pools):
        for pool in pools:
            if pool:
                interleaved.append(pool.pop(0))
    size = len(interleaved) // N_FOLDS
    return [interleaved[f * size:(f + 1) * size] for f in range(N_FOLDS)]


def _article_rotation(order: list[str], fold: int):
    test = order[fold]
    val = tuple(order[(fold + 1 + j) % N_FOLDS] for j in range(N_VAL_ARTICLES))
    train = tuple(a for a in order if a != test and a not in val)
    return train, val, test


def _fold_proportions(batches, article_orders, trials_per_article):
    """Per-fold regime proportions for candidate article orders (complete design assumed)."""
    out = []
    total = sum(sum(trials_per_article[b].values()) for b in batches)
    for f in range(N_FOLDS):
        acc = dict.fromkeys(TARGET_PROPORTIONS, 0.0)
        for bid in batches:
            tr, va, te = _article_rotation(article_orders[bid], f)
            tpa = trials_per_article[bid]
            n_tr, n_va, n_te = (sum(tpa[a] for a in tr), sum(tpa[a] for a in va), tpa[te])
            acc["Train"] += 0.9 * n_tr
            acc["Val"] += 0.9 * n_va
            acc["NewItem"] += 0.9 * n_te
            acc["NewParticipant"] += 0.1 * (n_tr + n_va)
            acc["NewItemParticipant"] += 0.1 * n_te
        out.append({k: v / total for k, v in acc.items()})
    return out


def make_folds(corpus: Corpus, seed: int = 0, expected_articles: int = 10,
               expected_participants: int | None = 120) -> SplitPlan:
    """Build the rotation plan.

    Article orders are drawn from a seeded stream of candidate permutations and
    the candidate whose per-fold proportions sit closest to 64/17/9/9/1 is kept.
    """
    batches = _batch_structure(corpus, expected_articles, expected_participants)
    if expected_articles != N_FOLDS:
        raise MalformedCorpus(f"article rotation needs exactly {N_FOLDS} articles per batch")
    rng = np.random.default_rng(seed)
    trials_per_article = {bid: defaultdict(int) for bid in batches}
    for t in corpus.trials:
        trials_per_article[t.batch_id][t.article_id] += 1

    best, best_score = None, np.inf
    for _ in range(N_CANDIDATES):
        orders = {bid: list(rng.permutation(sorted(b["articles"]))) for bid, b in batches.items()}
        props = _fold_proportions(batches, orders, trials_per_article)
        score = max(abs(p[k] - TARGET_PROPORTIONS[k]) for p in props for k in p)
        if score < best_score - 1e-12:
            best, best_score = orders, score
    groups = {bid: _participant_groups(b["participants"], rng) for bid, b in batches.items()}

    folds, regimes = [], []
    for f in range(N_FOLDS):
        alloc = {}
        for bid in batches:
            tr, va, te = _article_rotation(best[bid], f)
            test_p = tuple(sorted(groups[bid][f]))
            train_p = tuple(sorted(p for g, grp in enumerate(groups[bid]) if g != f for p in grp))
            alloc[bid] = BatchFold(tuple(sorted(tr)), tuple(sorted(va)), te, train_p, test_p)
        folds.append(alloc)
        regimes.append({t.key: _regime(t, alloc[t.batch_id]) for t in corpus.trials})
    return SplitPlan(folds, regimes)


def _regime(t: Trial, bf: BatchFold) -> Regime:
    test_p = t.participant_id in bf.test_participants
    if t.article_id == bf.test_article:
        return Regime.NEW_ITEM_PARTICIPANT if test_p else Regime.NEW_ITEM
    if test_p:
        return Regime.NEW_PARTICIPANT
    return Regime.VAL if t.article_id in bf.val_articles else Regime.TRAIN


def regime_of(trial: Trial, fold: int, plan: SplitPlan) -> Regime:
    try:
        return plan.regimes[fold][trial.key]
    except (KeyError, IndexError) as exc:
        raise UnknownTrial(f"trial {trial.key} / fold {fold} not in plan") from exc


def write_splits(plan: SplitPlan, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["participant_id", "paragraph_id", "fold", "regime"])
        for f, reg in enumerate(plan.regimes):
            for (p, par), r in sorted(reg.items()):
                w.writerow([p, par, f, r.value])


def read_splits(path, corpus: Corpus | None = None) -> SplitPlan:
    regimes: dict[int, dict[TrialKey, Regime]] = defaultdict(dict)
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            try:
                regimes[int(row["fold"])][(row["participant_id"], row["paragraph_id"])] = \
                    Regime(row["regime"])
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path} row {i + 2}: malformed split row") from exc
    plan = SplitPlan([{} for _ in regimes], [regimes[f] for f in sorted(regimes)])
    if corpus is not None:
        keys = {t.key for t in corpus.trials}
        for f, reg in enumerate(plan.regimes):
            if set(reg) != keys:
                raise DataError(f"{path}: fold {f} does not cover the corpus")
    return plan


def aggregated_coverage(plan: SplitPlan) -> dict[Regime, float]:
    """Fraction of trials that land in each test regime in at least one fold."""
    keys = set(plan.regimes[0])
    out = {}
    for r in TEST_REGIMES:
        hit = {k for reg in plan.regimes for k, v in reg.items() if v is r}
        out[r] = len(hit) / len(keys)
    return out
