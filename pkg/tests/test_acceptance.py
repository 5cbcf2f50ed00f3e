"""End-to-end acceptance criteria; each test prints one PASS/FAIL line.

Run alone with ``pytest -m acceptance -s``; the lines are also collected in the
terminal summary.
"""
import time

import numpy as np
import pandas as pd
import pytest

from readgoal.classifiers.api import ClassifierKind
from readgoal.cli import main
from readgoal.core import Goal, SaccadeClass, first_pass_mask, saccade_classes
from readgoal.evalx import (auroc, cohens_kappa, cross_validate, ensemble_cv, online_eval,
                            pooled_accuracy)
from readgoal.features import GLOBAL_FEATURE_NAMES, global_features
from readgoal.lmm import LmmSpec, error_analysis, lmm_fit, profiled_loglik
from readgoal.neuralnet import LAYER_TYPES, TrainConfig, layer_grad_check
from readgoal.splits import (TARGET_PROPORTIONS, TEST_REGIMES, Regime, aggregated_coverage,
                             make_folds)
from readgoal.synth import SynthConfig, generate

from conftest import (ACCEPTANCE_LINES, desk_corpus, naive_classify, naive_first_pass,
                      naive_globals, random_trial)
from test_evalx import brute_auroc, kappa_from_table, table_vectors
from test_lmm import crossed_instance, dense_profiled_loglik, planted_replicate

pytestmark = pytest.mark.acceptance

# Shortened schedule for the neural models; the learning-rate grid is unchanged.
QUICK = TrainConfig(batch_size=32, max_epochs=3, early_stop_patience=2)
SEQUENCE = TrainConfig(batch_size=32, max_epochs=6, early_stop_patience=3)


def report(number, title, ok, detail, started):
    line = (f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail} "
            f"[{time.perf_counter() - started:.0f}s]")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# -- shared expensive fixtures -----------------------------------------------------------------

@pytest.fixture(scope="module")
def strong_rnn(strong_data):
    corpus, plan = strong_data
    started = time.perf_counter()
    preds = {
        "majority": cross_validate(ClassifierKind.MAJORITY, corpus, plan),
        "rt": cross_validate(ClassifierKind.READING_TIME, corpus, plan),
        "logistic": cross_validate(ClassifierKind.LOGISTIC_GLOBAL, corpus, plan),
        "rnn": cross_validate(ClassifierKind.RNN, corpus, plan, base=SEQUENCE),
    }
    return pd.concat(preds.values(), ignore_index=True), time.perf_counter() - started


# -- criteria ----------------------------------------------------------------------------------

def test_1_gradient_correctness():
    t0 = time.perf_counter()
    errs = {(name, s): layer_grad_check(name, s) for name in LAYER_TYPES for s in (0, 1, 2)}
    worst = max(errs, key=errs.get)
    ok = all(e < 1e-4 for e in errs.values())
    report(1, "layer gradients", ok,
           f"{len(errs)} checks over {len(LAYER_TYPES)} layer types, worst {worst[0]} seed "
           f"{worst[1]} relative error {errs[worst]:.2e} (< 1e-4)", t0)


def test_2_feature_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    bad = {"globals": 0, "first_pass": 0, "saccades": 0}
    for _ in range(1000):
        t = random_trial(rng)
        ws = t.word_indices.tolist()
        ds = t.durations.tolist()
        lines = [w.line for w in t.words]
        fp = first_pass_mask(t).tolist()
        sac = [SaccadeClass(c).name.lower() for c in saccade_classes(t)]
        if fp != naive_first_pass(ws):
            bad["first_pass"] += 1
        if sac != [naive_classify(ws[i], ws[i + 1], lines) for i in range(len(ws) - 1)]:
            bad["saccades"] += 1
        if any(w >= 0 for w in ws):
            g = global_features(t)
            if [getattr(g, n) for n in GLOBAL_FEATURE_NAMES] != naive_globals(ws, ds, lines):
                bad["globals"] += 1
    report(2, "feature oracles", not any(bad.values()),
           f"mismatching trials out of 1000 (exact equality): {bad}", t0)


def test_3_split_protocol():
    t0 = time.perf_counter()
    corpus, _ = generate(SynthConfig(seed=0))
    plan = make_folds(corpus, seed=0)
    n = len(corpus)
    worst = 0.0
    for f in range(plan.n_folds):
        counts = plan.counts(f)
        for r in Regime:
            worst = max(worst, abs(counts[r] / n - TARGET_PROPORTIONS[r.value]))
    cov = aggregated_coverage(plan)
    target = {Regime.NEW_ITEM: 0.9, Regime.NEW_PARTICIPANT: 0.9,
              Regime.NEW_ITEM_PARTICIPANT: 0.1}
    cov_ok = all(cov[r] == target[r] for r in TEST_REGIMES)
    by_key = corpus.by_key
    violations = 0
    for f in range(plan.n_folds):
        test_articles = {by_key[k].article_id for k in plan.keys(f, Regime.NEW_ITEM,
                                                                   Regime.NEW_ITEM_PARTICIPANT)}
        val_articles = {by_key[k].article_id for k in plan.keys(f, Regime.VAL)}
        train_articles = {by_key[k].article_id for k in plan.keys(f, Regime.TRAIN)}
        violations += len((test_articles | val_articles) & train_articles)
        violations += len(test_articles & val_articles)
    ok = worst <= 0.02 and cov_ok and violations == 0
    report(3, "split protocol", ok,
           f"{n} trials; max proportion gap {100 * worst:.2f} pp (<= 2); coverage "
           + "/".join(f"{100 * cov[r]:g}" for r in TEST_REGIMES)
           + f" (exactly 90/90/10); purity violations {violations}", t0)


def test_4_null_calibration(null_data):
    t0 = time.perf_counter()
    corpus, plan = null_data
    accs = {}
    for kind in ClassifierKind:
        kw = {"base": QUICK} if kind.is_neural else {}
        preds = cross_validate(kind, corpus, plan, **kw)
        accs[kind.value] = pooled_accuracy(preds)
    ok = all(0.47 <= a <= 0.53 for a in accs.values())
    report(4, "null calibration", ok,
           f"{len(corpus)} trials at delta 0, pooled held-out accuracy "
           + ", ".join(f"{k} {100 * a:.1f}%" for k, a in accs.items()) + " (each in [47, 53])",
           t0)


def test_5_signal_ordering(strong_rnn):
    t0 = time.perf_counter()
    preds, spent = strong_rnn
    rt = pooled_accuracy(preds, "rt")
    rnn = pooled_accuracy(preds, "rnn")
    ok = rt >= 0.55 and rnn >= rt + 0.05
    report(5, "signal ordering", ok,
           f"delta 1: reading time {100 * rt:.1f}% (>= 55), rnn {100 * rnn:.1f}% "
           f"(>= reading time + 5)", t0 - spent)


def test_6_online_curve(strong_data, strong_rnn):
    t0 = time.perf_counter()
    corpus, plan = strong_data
    preds, _ = strong_rnn
    full = pooled_accuracy(preds, "rnn")
    summary, _ = online_eval(ClassifierKind.RNN, corpus, plan, budgets=[5], base=SEQUENCE)
    early = float(summary.pooled_accuracy.iloc[0])
    ok = full >= early - 0.02 and early > 0.55
    report(6, "online curve", ok,
           f"rnn at 5% of fixations {100 * early:.1f}% (> 55), at 100% {100 * full:.1f}% "
           f"(>= 5% budget - 2)", t0)


def test_7_ensemble_dominance(strong_rnn):
    t0 = time.perf_counter()
    preds, _ = strong_rnn
    models = ["majority", "rt", "logistic", "rnn"]
    _, checks = ensemble_cv(preds, models)
    gaps = checks["ensemble"] - checks[models].max(axis=1)
    ok = bool((gaps >= -0.01).all())
    report(7, "ensemble dominance", ok,
           f"ensemble minus best single validation accuracy per fold: min "
           f"{100 * gaps.min():+.2f} pp, max {100 * gaps.max():+.2f} pp (>= -1)", t0)


def test_8_lmm_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    dense_gap = 0.0
    for _ in range(200):
        y, X, factors = crossed_instance(rng, int(rng.integers(2, 6)), int(rng.integers(2, 5)),
                                         int(rng.integers(1, 3)), int(rng.integers(1, 4)))
        theta = rng.uniform(0, 2, size=2)
        spec = LmmSpec(y, X, factors)
        dense_gap = max(dense_gap, abs(profiled_loglik(spec, theta)
                                       - dense_profiled_loglik(y, X, factors, theta)[0]))
        fit = lmm_fit(spec)
        th = [fit.theta["a"], fit.theta["b"]]
        dense_gap = max(dense_gap, abs(fit.loglik - dense_profiled_loglik(y, X, factors, th)[0]))
    ols_gap = 0.0
    for _ in range(50):
        y, X, factors = crossed_instance(rng, 5, 4, 2, 3)
        fit = lmm_fit(LmmSpec(y, X, factors), theta=[0.0, 0.0])
        ols_gap = max(ols_gap, np.max(np.abs(fit.beta - np.linalg.lstsq(X, y, rcond=None)[0])))
    rec = [planted_replicate(100 + s) for s in range(50)]
    coverage = np.mean([c for c, _ in rec])
    ratios = np.array([r for _, r in rec])
    median = float(np.median(ratios))
    band_rate = float(np.mean((ratios >= 0.5) & (ratios <= 2)))
    ok = dense_gap <= 1e-6 and ols_gap <= 1e-8 and coverage >= 0.95 and 0.5 <= median <= 2
    report(8, "LMM correctness", ok,
           f"dense oracle gap {dense_gap:.1e} (<= 1e-6); OLS gap {ols_gap:.1e} (<= 1e-8); "
           f"3-SE coverage {100 * coverage:.0f}% (>= 95); median variance ratio / truth "
           f"{median:.2f} (in [0.5, 2]; {100 * band_rate:.0f}% of replicates in band)", t0)


def test_9_error_analysis_sign_recovery():
    t0 = time.perf_counter()
    hits = []
    for s in range(20):
        corpus = desk_corpus(1.0, seed=100 + s)
        plan = make_folds(corpus, seed=s, expected_participants=None)
        preds = cross_validate(ClassifierKind.LOGISTIC_GLOBAL, corpus, plan)
        fit = error_analysis(preds, corpus, Goal.INFORMATION_SEEKING)
        row = fit.wald.set_index("feature").loc["cs_length_relative"]
        hits.append(bool(row.beta < 0 and row.p_corrected < 0.05))
    report(9, "error-analysis sign", sum(hits) >= 18,
           f"negative and Bonferroni-significant cs_length_relative in {sum(hits)}/20 "
           f"replicates (>= 18)", t0)


def _full_pipeline(out):
    small = ["--n-batches", "1", "--paragraphs-per-article", "1", "--participants", "20"]
    cheap = ["--epochs", "2", "--patience", "1"]
    kinds = [k.value for k in ClassifierKind]
    steps = [["synth", "--delta", "1.0", *small],
             ["split", "--expected-participants", "0"],
             ["train", "--model", "all", *cheap],
             ["evaluate", "--model", "all"],
             ["ensemble", "--models", ",".join(kinds)],
             ["online", "--model", "rt", "--budgets", "5,100"],
             ["analyze", "--model", "logistic"]]
    for step in steps:
        assert main([*step, "--out", str(out), "--seed", "11"]) == 0, step


def test_10_metric_oracles_and_determinism(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    auroc_bad = 0
    for _ in range(500):
        n = int(rng.integers(2, 80))
        s = np.round(rng.random(n), int(rng.integers(1, 4)))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        auroc_bad += auroc(s, y) != pytest.approx(brute_auroc(s, y), abs=1e-12)
    tables = [(40, 10, 10, 40), (30, 5, 15, 50), (1, 2, 3, 4), (0, 10, 10, 0), (25, 25, 0, 50),
              (7, 0, 0, 9)]
    kappa_bad = sum(cohens_kappa(*table_vectors(*c)) != pytest.approx(kappa_from_table(*c))
                    for c in tables)
    _full_pipeline(tmp_path / "a")
    _full_pipeline(tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    differ = [str(r) for r in files
              if (tmp_path / "a" / r).read_bytes() != (tmp_path / "b" / r).read_bytes()]
    ok = auroc_bad == 0 and kappa_bad == 0 and not differ and len(files) > 10
    report(10, "metrics and determinism", ok,
           f"AUROC mismatches {auroc_bad}/500; kappa mismatches {kappa_bad}/{len(tables)}; "
           f"{len(files)} pipeline CSVs, {len(differ)} differ between identical-seed runs", t0)
