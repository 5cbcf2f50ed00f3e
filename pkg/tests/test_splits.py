import numpy as np
import pytest

from readgoal.core import Corpus, Goal, Word
from readgoal.errors import DataError, MalformedCorpus, UnknownTrial
from readgoal.splits import (TARGET_PROPORTIONS, TEST_REGIMES, Regime, aggregated_coverage,
                             make_folds, read_splits, regime_of, write_splits)

from conftest import make_trial


def grid_corpus(n_batches=1, paragraphs=(1,) * 10, participants=10):
    """Every participant reads every paragraph once; goals alternate by participant."""
    trials = []
    for b in range(n_batches):
        for p in range(participants):
            goal = Goal.INFORMATION_SEEKING if p % 2 == 0 else Goal.ORDINARY_READING
            for a, n_par in enumerate(paragraphs):
                for k in range(n_par):
                    par = f"b{b}a{a}p{k}"
                    words = (Word(par, 0, "x", 1, 0.0, 0.0, 0, True),)
                    trials.append(make_trial([0], [100], words=words, participant=f"b{b}s{p}",
                                             paragraph=par, article=f"b{b}a{a}", batch=str(b),
                                             goal=goal))
    return Corpus(tuple(trials))


@pytest.fixture(scope="module")
def toy():
    corpus = grid_corpus()
    return corpus, make_folds(corpus, seed=0, expected_participants=None)


def test_toy_regime_counts(toy):
    _, plan = toy
    expected = {Regime.TRAIN: 63, Regime.VAL: 18, Regime.NEW_ITEM: 9,
                Regime.NEW_PARTICIPANT: 9, Regime.NEW_ITEM_PARTICIPANT: 1}
    for f in range(plan.n_folds):
        assert plan.counts(f) == expected


def test_partition(toy):
    corpus, plan = toy
    for f in range(plan.n_folds):
        assert sum(plan.counts(f).values()) == len(corpus)
        assert set(plan.regimes[f]) == {t.key for t in corpus.trials}


def test_rotation_structure(toy):
    corpus, plan = toy
    tests = [plan.folds[f]["0"].test_article for f in range(10)]
    assert sorted(tests) == sorted(corpus.articles)
    test_p = [p for f in range(10) for p in plan.folds[f]["0"].test_participants]
    assert sorted(test_p) == sorted(corpus.participants)
    for f in range(10):
        bf = plan.folds[f]["0"]
        assert len(bf.train_articles) == 7 and len(bf.val_articles) == 2
        assert len(set(bf.train_articles) | set(bf.val_articles) | {bf.test_article}) == 10


def test_article_purity(toy):
    corpus, plan = toy
    by_key = corpus.by_key
    for f in range(plan.n_folds):
        seen = {}
        for key, r in plan.regimes[f].items():
            group = "test" if r in (Regime.NEW_ITEM, Regime.NEW_ITEM_PARTICIPANT) else \
                "val" if r is Regime.VAL else "train"
            if r is Regime.NEW_PARTICIPANT:
                continue
            a = by_key[key].article_id
            assert seen.setdefault(a, group) == group


def test_regime_of(toy):
    corpus, plan = toy
    bf = plan.folds[0]["0"]
    for t in corpus.trials:
        r = regime_of(t, 0, plan)
        if t.participant_id in bf.test_participants and t.article_id == bf.test_article:
            assert r is Regime.NEW_ITEM_PARTICIPANT
        if t.participant_id in bf.train_participants and t.article_id in bf.val_articles:
            assert r is Regime.VAL
    stranger = make_trial([0], [100], participant="nobody")
    with pytest.raises(UnknownTrial):
        regime_of(stranger, 0, plan)


def test_same_seed_same_plan():
    corpus = grid_corpus()
    a = make_folds(corpus, seed=5, expected_participants=None)
    b = make_folds(corpus, seed=5, expected_participants=None)
    assert a.regimes == b.regimes and a.folds == b.folds


def test_goal_balanced_participant_groups():
    big = grid_corpus(participants=40)
    plan40 = make_folds(big, seed=1, expected_participants=None)
    goals = {t.participant_id: t.goal for t in big.trials}
    for f in range(10):
        grp = plan40.folds[f]["0"].test_participants
        assert sum(goals[p] is Goal.INFORMATION_SEEKING for p in grp) == 2


def test_shape_errors():
    with pytest.raises(MalformedCorpus):
        make_folds(grid_corpus(paragraphs=(1,) * 9), expected_participants=None)
    with pytest.raises(MalformedCorpus):
        make_folds(grid_corpus(participants=12), expected_participants=None)
    with pytest.raises(MalformedCorpus):
        make_folds(grid_corpus(), expected_participants=120)


def test_full_size_proportions_and_coverage():
    rng = np.random.default_rng(0)
    paragraphs = [tuple(int(v) for v in rng.permutation([5] * 6 + [6] * 4)) for _ in range(3)]
    corpus = _three_batches(paragraphs)
    plan = make_folds(corpus, seed=0)
    n = len(corpus)
    for f in range(plan.n_folds):
        counts = plan.counts(f)
        for r in Regime:
            assert abs(counts[r] / n - TARGET_PROPORTIONS[r.value]) <= 0.02
    cov = aggregated_coverage(plan)
    assert cov == {Regime.NEW_ITEM: 0.9, Regime.NEW_PARTICIPANT: 0.9,
                   Regime.NEW_ITEM_PARTICIPANT: 0.1}


def _three_batches(paragraphs):
    trials = []
    for b in range(3):
        for p in range(120):
            goal = Goal.INFORMATION_SEEKING if p % 2 == 0 else Goal.ORDINARY_READING
            for a, n_par in enumerate(paragraphs[b]):
                for k in range(n_par):
                    par = f"b{b}a{a}p{k}"
                    words = (Word(par, 0, "x", 1, 0.0, 0.0, 0, True),)
                    trials.append(make_trial([0], [100], words=words, participant=f"b{b}s{p}",
                                             paragraph=par, article=f"b{b}a{a}", batch=str(b),
                                             goal=goal))
    return Corpus(tuple(trials))


def test_splits_roundtrip(tmp_path, toy):
    corpus, plan = toy
    write_splits(plan, tmp_path / "s.csv")
    back = read_splits(tmp_path / "s.csv", corpus)
    assert back.regimes == plan.regimes


def test_read_splits_rejects_partial_cover(tmp_path, toy):
    corpus, plan = toy
    write_splits(plan, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    (tmp_path / "s.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DataError):
        read_splits(tmp_path / "s.csv", corpus)


def test_test_regimes_constant():
    assert TEST_REGIMES == (Regime.NEW_ITEM, Regime.NEW_PARTICIPANT, Regime.NEW_ITEM_PARTICIPANT)
