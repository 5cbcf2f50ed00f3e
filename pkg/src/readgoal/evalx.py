"""Metrics, cross-validated prediction tables, the stacked ensemble and prefix evaluation."""
from __future__ import annotations

import logging
import math
import statistics
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .classifiers.api import ClassifierKind, fit
from .classifiers.logistic import C_GRID, PENALTIES, LogisticModel, select_logistic
from .core import Corpus, Goal, Trial
from .errors import ColumnMismatch, InvalidPercent, SingleClass, TooFewFolds
from .splits import TEST_REGIMES, Regime, SplitPlan

log = logging.getLogger(__name__)

Z95 = 1.96
ALL = "All"
BUDGETS = (1, 5, 10, 25, 50, 100)
PREDICTION_COLUMNS = ["model", "fold", "regime", "participant_id", "paragraph_id",
                      "probability_is", "predicted_is", "true_is"]


# -- metrics -----------------------------------------------------------------------------------

def accuracy_ci(per_fold: Sequence[float]) -> tuple[float, float]:
    """Mean and normal-approximation 95% half-width over folds (population std)."""
    a = np.asarray(per_fold, dtype=np.float64)
    if a.size < 2:
        raise TooFewFolds(f"need at least 2 folds, got {a.size}")
    # exact-rational mean and spread: constant folds give a half-width of exactly 0
    return float(statistics.fmean(a)), float(Z95 * statistics.pstdev(a.tolist()) / math.sqrt(a.size))


def auroc(scores, labels) -> float:
    """Mann-Whitney U / (n_pos * n_neg) with ties counted one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both classes")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels):
    """(fpr, tpr, thresholds), thresholds descending, starting at +inf."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if y.all() or not y.any():
        raise SingleClass("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / y.sum()]
    fpr = np.r_[0.0, fp / (~y).sum()]
    return fpr, tpr, np.r_[np.inf, s[last]]


def cohens_kappa(preds_a, preds_b) -> float:
    """Chance-corrected agreement between two binary prediction vectors.

    When chance agreement is 1 (both raters constant) kappa is 1 for identical
    predictions and 0 otherwise.
    """
    a = np.asarray(preds_a).astype(bool)
    b = np.asarray(preds_b).astype(bool)
    if a.shape != b.shape:
        raise ColumnMismatch("prediction vectors differ in length")
    p_o = float(np.mean(a == b))
    pa, pb = a.mean(), b.mean()
    p_e = float(pa * pb + (1 - pa) * (1 - pb))
    if p_e >= 1.0 - 1e-15:
        return 1.0 if np.array_equal(a, b) else 0.0
    return (p_o - p_e) / (1 - p_e)


def accuracy(probability_is, true_is) -> float:
    return float(np.mean((np.asarray(probability_is) >= 0.5) == np.asarray(true_is).astype(bool)))


# -- ensemble ----------------------------------------------------------------------------------

@dataclass
class Ensemble:
    model: LogisticModel
    n_columns: int
    table: list

    def predict_proba(self, probs) -> np.ndarray:
        P = np.asarray(probs, dtype=np.float64)
        if P.ndim != 2 or P.shape[1] != self.n_columns:
            raise ColumnMismatch(f"expected {self.n_columns} probability columns, got "
                                 f"{P.shape[1] if P.ndim == 2 else P.ndim}")
        return self.model.predict_proba(P)


def fit_ensemble(val_probs, labels, C_grid=C_GRID, penalty_options=PENALTIES) -> Ensemble:
    """Logistic regression over K base-model probability columns.

    Only validation outputs carry labels not used to fit the base models, so the
    grid point is chosen by accuracy on those same rows.
    """
    P = np.asarray(val_probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != len(y):
        raise ColumnMismatch("validation probability matrix and labels disagree in rows")
    best, table = select_logistic(P, y, P, y, C_grid, penalty_options)
    return Ensemble(best, P.shape[1], table)


# -- cross-validation --------------------------------------------------------------------------

def _records(model_name, fold, regime, trials, probs):
    return [{"model": model_name, "fold": fold, "regime": regime.value,
             "participant_id": t.participant_id, "paragraph_id": t.paragraph_id,
             "probability_is": float(p), "predicted_is": int(p >= 0.5),
             "true_is": int(t.goal is Goal.INFORMATION_SEEKING)}
            for t, p in zip(trials, probs)]


def fold_trials(corpus: Corpus, plan: SplitPlan, fold: int, transform=None):
    """Trials per regime for one fold; ``transform`` is applied to every trial."""
    by_key = corpus.by_key
    out = {}
    for r in Regime:
        ts = [by_key[k] for k in sorted(plan.keys(fold, r))]
        out[r] = [transform(t) for t in ts] if transform else ts
    return out


def cross_validate(kind: ClassifierKind, corpus: Corpus, plan: SplitPlan, folds=None,
                   model_name: str | None = None, transform=None, on_fold=None, **fit_kwargs):
    """Fit one classifier per fold and predict Val plus every test regime.

    Returns a prediction DataFrame. ``on_fold(fold, classifier, table)`` is
    called after each fit (used to persist models).
    """
    name = model_name or kind.value
    rows = []
    for f in (range(plan.n_folds) if folds is None else folds):
        parts = fold_trials(corpus, plan, f, transform)
        clf, table = fit(kind, parts[Regime.TRAIN], parts[Regime.VAL], **fit_kwargs)
        if on_fold is not None:
            on_fold(f, clf, table)
        for r in (Regime.VAL, *TEST_REGIMES):
            if parts[r]:
                rows.extend(_records(name, f, r, parts[r], clf.predict_proba(parts[r])))
        log.info("%s fold %d done", name, f)
    return pd.DataFrame(rows, columns=PREDICTION_COLUMNS)


def evaluate(predictions: pd.DataFrame):
    """Per (model, regime, fold) accuracy and AUROC plus the fold summary.

    ``All`` pools the three test regimes of a fold.
    """
    test = predictions[predictions["regime"].isin([r.value for r in TEST_REGIMES])]
    pooled = test.assign(regime=ALL)
    frame = pd.concat([predictions, pooled], ignore_index=True)
    per_fold = []
    for (m, r, f), g in frame.groupby(["model", "regime", "fold"], sort=True):
        y = g["true_is"].to_numpy()
        au = auroc(g["probability_is"], y) if 0 < y.sum() < len(y) else float("nan")
        per_fold.append({"model": m, "regime": r, "fold": int(f), "n": len(g),
                         "accuracy": accuracy(g["probability_is"], y), "auroc": au})
    per_fold = pd.DataFrame(per_fold)
    summary = []
    for (m, r), g in per_fold.groupby(["model", "regime"], sort=True):
        if len(g) >= 2:
            mean, half = accuracy_ci(g["accuracy"])
        else:
            mean, half = float(g["accuracy"].iloc[0]), float("nan")
        summary.append({"model": m, "regime": r, "folds": len(g), "accuracy_mean": mean,
                        "accuracy_ci": half, "auroc_mean": float(np.nanmean(g["auroc"]))
                        if g["auroc"].notna().any() else float("nan"),
                        "auroc_std": float(np.nanstd(g["auroc"]))
                        if g["auroc"].notna().any() else float("nan")})
    return per_fold, pd.DataFrame(summary)


def pooled_accuracy(predictions: pd.DataFrame, model: str | None = None) -> float:
    """Accuracy over every test-regime prediction (all folds pooled)."""
    p = predictions[predictions["regime"].isin([r.value for r in TEST_REGIMES])]
    if model is not None:
        p = p[p["model"] == model]
    return accuracy(p["probability_is"], p["true_is"])


def _wide(predictions, regime, models):
    p = predictions[predictions["regime"] == regime]
    w = p.pivot_table(index=["fold", "participant_id", "paragraph_id"], columns="model",
                      values="probability_is")
    missing = [m for m in models if m not in w.columns]
    if missing:
        raise ColumnMismatch(f"no {regime} predictions for models {missing}")
    w = w[list(models)]
    if w.isna().any().any():
        raise ColumnMismatch(f"{regime} predictions are not aligned across models")
    truth = p.drop_duplicates(["fold", "participant_id", "paragraph_id"]).set_index(
        ["fold", "participant_id", "paragraph_id"])["true_is"]
    return w, truth.loc[w.index]


def ensemble_cv(predictions: pd.DataFrame, models: Sequence[str], name: str = "ensemble",
                C_grid=C_GRID, penalty_options=PENALTIES):
    """Per fold: fit the ensemble on validation outputs, apply it to every test regime.

    Returns (ensemble predictions, per-fold validation table comparing the
    ensemble with each base model).
    """
    val, val_y = _wide(predictions, Regime.VAL.value, models)
    rows, checks = [], []
    for f in sorted(val.index.get_level_values("fold").unique()):
        v = val.xs(f, level="fold")
        vy = val_y.xs(f, level="fold").to_numpy()
        ens = fit_ensemble(v.to_numpy(), vy, C_grid, penalty_options)
        ens_val = ens.predict_proba(v.to_numpy())
        check = {"fold": int(f), "ensemble": accuracy(ens_val, vy)}
        check.update({m: accuracy(v[m].to_numpy(), vy) for m in models})
        checks.append(check)
        for r in (Regime.VAL, *TEST_REGIMES):
            sub = predictions[(predictions["regime"] == r.value) & (predictions["fold"] == f)]
            if sub.empty:
                continue
            w, y = _wide(sub, r.value, models)
            probs = ens.predict_proba(w.to_numpy())
            for (fo, pid, par), p, t in zip(w.index, probs, y.to_numpy()):
                rows.append({"model": name, "fold": int(fo), "regime": r.value,
                             "participant_id": pid, "paragraph_id": par,
                             "probability_is": float(p), "predicted_is": int(p >= 0.5),
                             "true_is": int(t)})
    return pd.DataFrame(rows, columns=PREDICTION_COLUMNS), pd.DataFrame(checks)


def agreement(predictions: pd.DataFrame, models: Sequence[str] | None = None) -> pd.DataFrame:
    """Pairwise kappa between models' validation predictions (all folds pooled)."""
    models = list(models or sorted(predictions["model"].unique()))
    w, _ = _wide(predictions, Regime.VAL.value, models)
    labels = (w.to_numpy() >= 0.5)
    out = pd.DataFrame(np.eye(len(models)), index=models, columns=models)
    for i in range(len(models)):
        for j in range(i + 1, len(models)):
            k = cohens_kappa(labels[:, i], labels[:, j])
            out.iloc[i, j] = out.iloc[j, i] = k
    return out


# -- online (prefix) evaluation ----------------------------------------------------------------

def prefix_truncate(trial: Trial, percent) -> Trial:
    """Keep the first ceil(percent/100 * N) fixations; words and labels untouched."""
    try:
        frac = Fraction(str(percent))
    except (ValueError, ZeroDivisionError) as exc:
        raise InvalidPercent(f"invalid percent {percent!r}") from exc
    if not 0 < frac <= 100:
        raise InvalidPercent(f"percent must lie in (0, 100], got {percent}")
    n = len(trial.fixations)
    keep = math.ceil(frac * n / 100)
    if keep >= n:
        return trial
    return replace(trial, fixations=trial.fixations[:keep])


def online_eval(kind: ClassifierKind, corpus: Corpus, plan: SplitPlan, budgets=BUDGETS,
                folds=None, retrain: bool = True, **fit_kwargs):
    """Accuracy per fixation budget.

    With ``retrain`` a model is fit per budget on truncated train/val trials;
    otherwise the full-data model of each fold is evaluated on truncated test
    trials. Returns (summary DataFrame, prediction DataFrame).
    """
    for b in budgets:
        prefix_truncate(corpus.trials[0], b)  # validates the budget
    folds = list(range(plan.n_folds) if folds is None else folds)
    frames = []
    if retrain:
        for b in budgets:
            frames.append(cross_validate(kind, corpus, plan, folds, model_name=f"{b}",
                                         transform=lambda t, b=b: prefix_truncate(t, b),
                                         **fit_kwargs))
    else:
        for f in folds:
            parts = fold_trials(corpus, plan, f)
            clf, _ = fit(kind, parts[Regime.TRAIN], parts[Regime.VAL], **fit_kwargs)
            for b in budgets:
                rows = []
                for r in TEST_REGIMES:
                    ts = [prefix_truncate(t, b) for t in parts[r]]
                    if ts:
                        rows.extend(_records(f"{b}", f, r, ts, clf.predict_proba(ts)))
                frames.append(pd.DataFrame(rows, columns=PREDICTION_COLUMNS))
    preds = pd.concat(frames, ignore_index=True)
    summary = []
    for b in budgets:
        p = preds[(preds["model"] == f"{b}")
                  & preds["regime"].isin([r.value for r in TEST_REGIMES])]
        accs = [accuracy(g["probability_is"], g["true_is"]) for _, g in p.groupby("fold")]
        mean, half = accuracy_ci(accs) if len(accs) >= 2 else (accs[0], float("nan"))
        summary.append({"budget": b, "folds": len(accs), "accuracy_mean": mean,
                        "accuracy_ci": half, "pooled_accuracy": pooled_accuracy(p)})
    return pd.DataFrame(summary), preds
