import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from readgoal.classifiers.api import ClassifierKind
from readgoal.errors import ColumnMismatch, InvalidPercent, SingleClass, TooFewFolds
from readgoal.evalx import (PREDICTION_COLUMNS, accuracy, accuracy_ci, agreement, auroc,
                            cohens_kappa, cross_validate, ensemble_cv, evaluate, fit_ensemble,
                            online_eval, pooled_accuracy, prefix_truncate, roc_curve)
from readgoal.splits import TEST_REGIMES

from conftest import make_trial


def brute_auroc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def kappa_from_table(a, b, c, d):
    """a: both IS, b: A IS / B OR, c: A OR / B IS, d: both OR."""
    n = a + b + c + d
    p_o = (a + d) / n
    p_e = ((a + b) / n) * ((a + c) / n) + ((c + d) / n) * ((b + d) / n)
    return (p_o - p_e) / (1 - p_e)


def table_vectors(a, b, c, d):
    A = [1] * a + [1] * b + [0] * c + [0] * d
    B = [1] * a + [0] * b + [1] * c + [0] * d
    return np.array(A), np.array(B)


# -- accuracy and CI ---------------------------------------------------------------------------

def test_ci_constant_folds():
    assert accuracy_ci([0.6] * 10) == (pytest.approx(0.6), 0.0)


def test_ci_two_folds():
    mean, half = accuracy_ci([0.5, 0.7])
    assert mean == pytest.approx(0.6)
    assert half == pytest.approx(1.96 * 0.1 / np.sqrt(2))
    assert half == pytest.approx(0.1386, abs=1e-4)


def test_ci_needs_two_folds():
    with pytest.raises(TooFewFolds):
        accuracy_ci([0.5])


def test_accuracy_threshold_ties_to_is():
    assert accuracy([0.5, 0.49], [1, 0]) == 1.0


# -- AUROC -------------------------------------------------------------------------------------

def test_auroc_hand_example():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auroc_extremes():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5


def test_auroc_single_class():
    with pytest.raises(SingleClass):
        auroc([0.1, 0.2], [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auroc_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    scores = np.round(rng.random(n), int(rng.integers(1, 3)))   # rounding creates ties
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    assert auroc(scores, labels) == pytest.approx(brute_auroc(scores, labels), abs=1e-12)


def test_roc_curve_area_equals_auroc():
    rng = np.random.default_rng(0)
    s = np.round(rng.random(100), 1)
    y = rng.integers(0, 2, 100)
    fpr, tpr, thr = roc_curve(s, y)
    assert fpr[0] == tpr[0] == 0 and fpr[-1] == tpr[-1] == 1
    assert np.all(np.diff(thr) < 0)
    assert np.trapezoid(tpr, fpr) == pytest.approx(auroc(s, y))


# -- kappa -------------------------------------------------------------------------------------

def test_kappa_identical():
    assert cohens_kappa([1, 0, 1, 1], [1, 0, 1, 1]) == 1.0


def test_kappa_constant_vs_half():
    a = np.ones(100)
    b = np.r_[np.ones(50), np.zeros(50)]
    assert cohens_kappa(a, b) == pytest.approx(0.0)


def test_kappa_table():
    assert cohens_kappa(*table_vectors(40, 10, 10, 40)) == pytest.approx(0.6)


@pytest.mark.parametrize("cells", [(40, 10, 10, 40), (30, 5, 15, 50), (1, 2, 3, 4),
                                   (0, 10, 10, 0), (25, 25, 0, 50)])
def test_kappa_hand_tables(cells):
    assert cohens_kappa(*table_vectors(*cells)) == pytest.approx(kappa_from_table(*cells))


def test_kappa_length_mismatch():
    with pytest.raises(ColumnMismatch):
        cohens_kappa([1, 0], [1])


# -- ensemble ----------------------------------------------------------------------------------

def test_ensemble_perfect_single_model():
    y = np.array([1, 0] * 20)
    P = np.where(y == 1, 0.8, 0.3)[:, None]
    ens = fit_ensemble(P, y)
    assert accuracy(ens.predict_proba(P), y) == 1.0


def test_ensemble_identical_columns_follow_base():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 200)
    p = np.clip(np.where(y == 1, 0.65, 0.35) + rng.normal(0, 0.2, 200), 0.01, 0.99)
    P = np.column_stack([p, p, p])
    ens = fit_ensemble(P, y)
    out = ens.predict_proba(P)
    # a monotone recalibration of the shared column: same ordering, same ranking quality
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(out[order]) >= 0)
    assert auroc(out, y) == auroc(p, y)
    threshold = p[order][np.argmax(out[order] >= 0.5)]
    assert np.array_equal(out >= 0.5, p >= threshold)


def test_ensemble_complementary_models():
    y = np.array([1, 0] * 50)
    half = np.arange(100) < 50
    # A is confident and right on the first half, unsure elsewhere; B the reverse
    a = np.where(half, np.where(y == 1, 0.9, 0.1), np.where(y == 1, 0.45, 0.55))
    b = np.where(~half, np.where(y == 1, 0.9, 0.1), np.where(y == 1, 0.45, 0.55))
    P = np.column_stack([a, b])
    ens = fit_ensemble(P, y)
    acc = accuracy(ens.predict_proba(P), y)
    assert acc > max(accuracy(a, y), accuracy(b, y))


def test_ensemble_column_mismatch():
    ens = fit_ensemble(np.array([[0.2, 0.3], [0.8, 0.6], [0.3, 0.1], [0.9, 0.7]]), [0, 1, 0, 1])
    with pytest.raises(ColumnMismatch):
        ens.predict_proba(np.zeros((2, 3)))


# -- prefix truncation -------------------------------------------------------------------------

def test_prefix_budgets():
    t4 = make_trial([0, 1, 2, 3], [100] * 4)
    assert len(prefix_truncate(t4, 25).fixations) == 1
    assert prefix_truncate(t4, 100) is t4
    t200 = make_trial(list(range(200)), [100] * 200)
    assert len(prefix_truncate(t200, 1).fixations) == 2
    assert len(prefix_truncate(t200, 0.5).fixations) == 1
    short = prefix_truncate(t200, 10)
    assert short.words == t200.words and short.goal == t200.goal


@pytest.mark.parametrize("bad", [0, -5, 101, "abc"])
def test_prefix_invalid(bad):
    with pytest.raises(InvalidPercent):
        prefix_truncate(make_trial([0], [100]), bad)


# -- cross-validation and reports --------------------------------------------------------------

@pytest.fixture(scope="module")
def cv_preds(small_corpus):
    from readgoal.splits import make_folds
    plan = make_folds(small_corpus, seed=0, expected_participants=None)
    frames = [cross_validate(k, small_corpus, plan, folds=[0, 1]) for k in
              (ClassifierKind.MAJORITY, ClassifierKind.READING_TIME,
               ClassifierKind.LOGISTIC_GLOBAL)]
    return small_corpus, plan, pd.concat(frames, ignore_index=True)


def test_cross_validate_layout(cv_preds):
    corpus, plan, preds = cv_preds
    assert list(preds.columns) == PREDICTION_COLUMNS
    one = preds[(preds.model == "rt") & (preds.fold == 0)]
    expected = sum(len(plan.keys(0, r)) for r in plan.counts(0) if r.value != "Train")
    assert len(one) == expected
    assert set(one.regime) == {"Val", "NewItem", "NewParticipant", "NewItemParticipant"}
    assert np.array_equal(one.predicted_is, (one.probability_is >= 0.5).astype(int))


def test_evaluate_summary(cv_preds):
    _, _, preds = cv_preds
    per_fold, summary = evaluate(preds)
    assert set(summary.regime) == {"Val", "NewItem", "NewParticipant", "NewItemParticipant",
                                   "All"}
    row = per_fold[(per_fold.model == "rt") & (per_fold.regime == "All") & (per_fold.fold == 0)]
    sub = preds[(preds.model == "rt") & (preds.fold == 0)
                & preds.regime.isin([r.value for r in TEST_REGIMES])]
    assert row.accuracy.iloc[0] == accuracy(sub.probability_is, sub.true_is)
    assert pooled_accuracy(preds, "majority") == pytest.approx(
        accuracy(preds[(preds.model == "majority") & (preds.regime != "Val")].probability_is,
                 preds[(preds.model == "majority") & (preds.regime != "Val")].true_is))


def test_ensemble_cv_and_agreement(cv_preds):
    _, _, preds = cv_preds
    ens, checks = ensemble_cv(preds, ["majority", "rt", "logistic"])
    assert set(ens.model) == {"ensemble"} and sorted(checks.fold) == [0, 1]
    assert len(ens) == len(preds[preds.model == "rt"])
    kap = agreement(preds, ["rt", "logistic"])
    assert kap.loc["rt", "rt"] == 1.0 and kap.loc["rt", "logistic"] == kap.loc["logistic", "rt"]
    with pytest.raises(ColumnMismatch):
        ensemble_cv(preds, ["rt", "nonexistent"])


def test_order_invariance_of_evaluation(cv_preds):
    _, _, preds = cv_preds
    a = evaluate(preds)[1]
    b = evaluate(preds.sample(frac=1.0, random_state=1))[1]
    pd.testing.assert_frame_equal(a, b)


def test_online_full_budget_equals_standard(cv_preds):
    corpus, plan, preds = cv_preds
    summary, online = online_eval(ClassifierKind.READING_TIME, corpus, plan, budgets=[100],
                                  folds=[0, 1])
    std = preds[(preds.model == "rt") & (preds.regime != "Val")].reset_index(drop=True)
    on = online[online.regime != "Val"].reset_index(drop=True)
    np.testing.assert_array_equal(on.probability_is, std.probability_is)
    assert summary.pooled_accuracy.iloc[0] == pooled_accuracy(preds, "rt")


def test_online_fixed_mode(cv_preds):
    corpus, plan, _ = cv_preds
    summary, _ = online_eval(ClassifierKind.LOGISTIC_GLOBAL, corpus, plan, budgets=[10, 100],
                             folds=[0, 1], retrain=False)
    assert summary.budget.tolist() == [10, 100]
    with pytest.raises(InvalidPercent):
        online_eval(ClassifierKind.MAJORITY, corpus, plan, budgets=[0], folds=[0])
