"""Command-line entry point: ``readgoal <subcommand> [options]``.

Every artifact-producing command writes its outputs under ``--out`` and a JSON
run manifest to ``<out>/manifests/<command>.json``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .classifiers.api import Classifier, ClassifierKind, fit
from .core import Goal, load_corpus
from .errors import ComputeError, DataError, InvalidConfig, ReadGoalError
from .features import (FIXATION_FEATURE_NAMES, GLOBAL_FEATURE_NAMES, fixation_features,
                       global_matrix, reading_time_per_word)
from .neuralnet import LAYER_TYPES, TrainConfig, layer_grad_check
from .raster import RasterConfig, export_png, render_scanpath
from .splits import TEST_REGIMES, Regime, make_folds, read_splits, write_splits
from .synth import SynthConfig, generate, write_synthetic

log = logging.getLogger("readgoal")

GRADCHECK_TOL = 1e-4
MODEL_CHOICES = [k.value for k in ClassifierKind]


# -- small helpers -------------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: Path, hint: str) -> Path:
    if not Path(path).exists():
        raise DataError(f"missing {path} ({hint})")
    return Path(path)


def _corpus_dir(args) -> Path:
    return Path(args.corpus) if getattr(args, "corpus", None) else Path(args.out) / "corpus"


def _load_corpus(args):
    d = _corpus_dir(args)
    for name in ("fixations.csv", "words.csv", "trials.csv"):
        _require(d / name, "run `readgoal synth` or pass --corpus")
    return load_corpus(d)


def _splits_path(args) -> Path:
    return Path(args.out) / "splits.csv"


def _load_plan(args, corpus):
    return read_splits(_require(_splits_path(args), "run `readgoal split` first"), corpus)


def _model_path(out, name, fold) -> Path:
    return Path(out) / "models" / name / f"fold{fold}.bin"


def _predictions_path(out, name) -> Path:
    return Path(out) / "predictions" / f"{name}.csv"


def _reports(out) -> Path:
    p = Path(out) / "reports"
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_csv(df: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
    return path


def _csv_list(text, cast=str):
    return [cast(x) for x in str(text).split(",") if x.strip()]


class Run:
    """Collects inputs and outputs for the manifest."""

    def __init__(self, args, command):
        self.args, self.command = args, command
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    def read(self, *paths):
        self.inputs.extend(Path(p) for p in paths)

    def wrote(self, *paths):
        self.outputs.extend(Path(p) for p in paths)

    def finish(self):
        snapshot = {k: v for k, v in sorted(vars(self.args).items())
                    if k not in ("func", "config") and not callable(v)}
        manifest = {
            "command": self.command,
            "argv": self.args.argv,
            "config": snapshot,
            "seed": self.args.seed,
            "tool_version": __version__,
            "inputs": {str(p): _sha256(p) for p in sorted(set(self.inputs)) if p.is_file()},
            "outputs": sorted(str(p) for p in set(self.outputs)),
        }
        path = Path(self.args.out) / "manifests" / f"{self.command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                        encoding="utf-8")


def _corpus_inputs(run, args):
    d = _corpus_dir(args)
    run.read(d / "fixations.csv", d / "words.csv", d / "trials.csv")


def _folds(args, plan) -> list[int]:
    if args.fold is None:
        return list(range(plan.n_folds))
    if not 0 <= args.fold < plan.n_folds:
        raise InvalidConfig(f"fold {args.fold} outside 0..{plan.n_folds - 1}")
    return [args.fold]


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(learning_rate=args.lr or TrainConfig.learning_rate, dropout_rate=args.dropout,
                      batch_size=args.batch_size, max_epochs=args.epochs,
                      early_stop_patience=args.patience, warmup_ratio=args.warmup_ratio,
                      weight_decay=args.weight_decay, seed=args.seed)
    cfg.validate()
    return cfg


def _parse_number(text):
    try:
        v = float(text)
    except ValueError as exc:
        raise InvalidConfig(f"not a number: {text!r}") from exc
    return int(v) if v.is_integer() and "." not in text and "e" not in text.lower() else v


def read_grid(path) -> dict[str, list]:
    """``name=v1,v2,...`` per line; ``#`` starts a comment."""
    grid = {}
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{path} line {i}: expected name=value[,value...]")
        k, v = (s.strip() for s in line.split("=", 1))
        grid[k] = [_parse_number(x) for x in _csv_list(v)]
    return grid


def _fit_kwargs(args, kind: ClassifierKind) -> dict:
    kw = {}
    if kind.is_neural:
        kw["base"] = _train_config(args)
        arch = {}
        if kind is ClassifierKind.RNN:
            if args.word_dim is not None:
                arch["word_dim"] = args.word_dim
            if args.no_eye_features:
                arch["eye_features"] = 0
                arch.setdefault("word_dim", 16)
        if args.image_size is not None and kind is ClassifierKind.CONVNET:
            arch["image_size"] = args.image_size
        kw["arch"] = arch
        if args.grid_file:
            kw["grid"] = read_grid(_require(Path(args.grid_file), "grid file"))
        elif args.lr is not None:
            kw["grid"] = {"learning_rate": [args.lr]}
    return kw


def _model_name(args, kind: ClassifierKind) -> str:
    if getattr(args, "name", None):
        return args.name
    if kind is ClassifierKind.RNN and args.no_eye_features:
        return "rnn-noeye"
    return kind.value


def _savefig(fig, path: Path):
    import matplotlib
    matplotlib.rcParams["svg.hashsalt"] = "readgoal"
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt
    plt.close(fig)


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


# -- subcommands ---------------------------------------------------------------------------------

def cmd_synth(args, run):
    overrides = {"effect_size": args.delta, "seed": args.seed, "n_batches": args.n_batches,
                 "articles_per_batch": args.articles, "paragraphs_per_article":
                 args.paragraphs_per_article, "participants_per_batch": args.participants}
    cfg = SynthConfig(**{k: v for k, v in overrides.items() if v is not None})
    corpus, truth = generate(cfg)
    paths = write_synthetic(corpus, truth, _corpus_dir(args))
    run.wrote(*paths.values())
    print(f"wrote {len(corpus.trials)} trials to {_corpus_dir(args)}")


def cmd_split(args, run):
    corpus = _load_corpus(args)
    _corpus_inputs(run, args)
    expected = None if args.expected_participants in (None, 0) else args.expected_participants
    plan = make_folds(corpus, seed=args.seed, expected_articles=args.expected_articles,
                      expected_participants=expected)
    path = _splits_path(args)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_splits(plan, path)
    rows = [{"fold": f, **{r.value: c for r, c in plan.counts(f).items()}}
            for f in range(plan.n_folds)]
    rep = _write_csv(pd.DataFrame(rows), _reports(args.out) / "split_counts.csv")
    run.wrote(path, rep)
    print(f"wrote {path}")


def cmd_featurize(args, run):
    corpus = _load_corpus(args)
    _corpus_inputs(run, args)
    trials = corpus.trials
    g = pd.DataFrame(global_matrix(trials, safe=True), columns=GLOBAL_FEATURE_NAMES)
    g.insert(0, "paragraph_id", [t.paragraph_id for t in trials])
    g.insert(0, "participant_id", [t.participant_id for t in trials])
    g["reading_time_per_word"] = [reading_time_per_word(t) for t in trials]
    rows = []
    for t in trials:
        f = fixation_features(t)
        for i, vec in enumerate(f):
            rows.append([t.participant_id, t.paragraph_id, i, *vec])
    fx = pd.DataFrame(rows, columns=["participant_id", "paragraph_id", "order",
                                     *FIXATION_FEATURE_NAMES])
    out = Path(args.out) / "features"
    run.wrote(_write_csv(g, out / "global.csv"), _write_csv(fx, out / "fixations.csv"))
    print(f"wrote features for {len(trials)} trials to {out}")


def cmd_render(args, run):
    corpus = _load_corpus(args)
    _corpus_inputs(run, args)
    cfg = RasterConfig(width=args.size, height=args.size)
    cfg.validate()
    out = Path(args.out) / "images"
    out.mkdir(parents=True, exist_ok=True)
    trials = corpus.trials[:args.limit] if args.limit else corpus.trials
    for t in trials:
        p = out / f"{t.participant_id}_{t.paragraph_id}.png"
        export_png(render_scanpath(t, cfg), p)
        run.wrote(p)
    print(f"rendered {len(trials)} scanpaths to {out}")


def cmd_gradcheck(args, run):
    rows = []
    for name in LAYER_TYPES:
        for s in _csv_list(args.seeds, int):
            err = layer_grad_check(name, s, args.epsilon)
            rows.append({"layer": name, "seed": s, "max_relative_error": err,
                         "passed": int(err < GRADCHECK_TOL)})
    df = pd.DataFrame(rows)
    run.wrote(_write_csv(df, _reports(args.out) / "gradcheck.csv"))
    print(df.to_string(index=False))
    if not df["passed"].all():
        raise ComputeError("gradient check failed for "
                           + ", ".join(sorted(set(df.loc[df.passed == 0, "layer"]))))


def _kinds(args) -> list[ClassifierKind]:
    if args.model == "all":
        return list(ClassifierKind)
    return [ClassifierKind(args.model)]


def cmd_train(args, run):
    corpus = _load_corpus(args)
    plan = _load_plan(args, corpus)
    _corpus_inputs(run, args)
    run.read(_splits_path(args))
    by_key = corpus.by_key
    for kind in _kinds(args):
        name = _model_name(args, kind)
        kw = _fit_kwargs(args, kind)
        tables = []
        for f in _folds(args, plan):
            tr = [by_key[k] for k in sorted(plan.keys(f, Regime.TRAIN))]
            va = [by_key[k] for k in sorted(plan.keys(f, Regime.VAL))]
            clf, table = fit(kind, tr, va, **kw)
            path = _model_path(args.out, name, f)
            path.parent.mkdir(parents=True, exist_ok=True)
            clf.save(path)
            run.wrote(path)
            va_acc = float(np.mean((clf.predict_proba(va) >= 0.5)
                                   == np.array([t.goal is Goal.INFORMATION_SEEKING for t in va])))
            rows = table or [{}]
            for r in rows:
                tables.append({"model": name, "fold": f, **r, "selected_val_accuracy": va_acc})
            print(f"{name} fold {f}: validation accuracy {va_acc:.4f}")
        rep = _write_csv(pd.DataFrame(tables), Path(args.out) / "models" / name / "validation.csv")
        run.wrote(rep)


def _predict_model(args, corpus, plan, name) -> pd.DataFrame:
    from .evalx import PREDICTION_COLUMNS, _records, fold_trials
    rows = []
    folds = list(range(plan.n_folds)) if getattr(args, "fold", None) is None else [args.fold]
    for f in folds:
        path = _require(_model_path(args.out, name, f), f"run `readgoal train --model ...` "
                        f"for fold {f} first")
        clf = Classifier.load(path)
        parts = fold_trials(corpus, plan, f)
        for r in (Regime.VAL, *TEST_REGIMES):
            if parts[r]:
                rows.extend(_records(name, f, r, parts[r], clf.predict_proba(parts[r])))
    return pd.DataFrame(rows, columns=PREDICTION_COLUMNS)


def _model_names(args) -> list[str]:
    if args.model == "all":
        return [k.value for k in ClassifierKind]
    return _csv_list(args.model)


def cmd_predict(args, run):
    corpus = _load_corpus(args)
    plan = _load_plan(args, corpus)
    for name in _model_names(args):
        preds = _predict_model(args, corpus, plan, name)
        run.wrote(_write_csv(preds, _predictions_path(args.out, name)))
        print(f"wrote {len(preds)} predictions for {name}")


def _write_eval(args, run, preds, name):
    from .evalx import evaluate
    per_fold, summary = evaluate(preds)
    rep = _reports(args.out)
    run.wrote(_write_csv(per_fold, rep / f"eval_{name}_per_fold.csv"),
              _write_csv(summary, rep / f"eval_{name}.csv"))
    print(summary.to_string(index=False))


def cmd_evaluate(args, run):
    corpus = _load_corpus(args)
    plan = _load_plan(args, corpus)
    _corpus_inputs(run, args)
    for name in _model_names(args):
        preds = _predict_model(args, corpus, plan, name)
        run.wrote(_write_csv(preds, _predictions_path(args.out, name)))
        _write_eval(args, run, preds, name)


def _load_predictions(args, names, run) -> pd.DataFrame:
    frames = []
    for n in names:
        p = _require(_predictions_path(args.out, n), f"run `readgoal evaluate --model {n}` first")
        run.read(p)
        frames.append(pd.read_csv(p, dtype={"participant_id": str, "paragraph_id": str}))
    return pd.concat(frames, ignore_index=True)


def cmd_ensemble(args, run):
    from .evalx import ensemble_cv
    names = _csv_list(args.models)
    preds = _load_predictions(args, names, run)
    ens, checks = ensemble_cv(preds, names, name=args.name or "ensemble")
    name = args.name or "ensemble"
    run.wrote(_write_csv(ens, _predictions_path(args.out, name)),
              _write_csv(checks, _reports(args.out) / f"{name}_validation.csv"))
    _write_eval(args, run, ens, name)


def cmd_online(args, run):
    from .evalx import online_eval
    corpus = _load_corpus(args)
    plan = _load_plan(args, corpus)
    _corpus_inputs(run, args)
    kind = ClassifierKind(args.model)
    folds = None if args.fold is None else [args.fold]
    summary, preds = online_eval(kind, corpus, plan, _csv_list(args.budgets, _parse_number),
                                 folds=folds, retrain=args.mode == "retrain",
                                 **_fit_kwargs(args, kind))
    name = _model_name(args, kind)
    rep = _reports(args.out)
    run.wrote(_write_csv(summary, rep / f"online_{name}.csv"),
              _write_csv(preds, Path(args.out) / "predictions" / f"online_{name}.csv"))
    print(summary.to_string(index=False))


def cmd_agreement(args, run):
    from .evalx import agreement
    names = _csv_list(args.models)
    kappa = agreement(_load_predictions(args, names, run), names)
    kappa.index.name = "model"
    run.wrote(_write_csv(kappa.reset_index(), _reports(args.out) / "agreement.csv"))
    print(kappa.round(4).to_string())


def cmd_roc(args, run):
    from .evalx import ALL, roc_curve
    names = _csv_list(args.models)
    preds = _load_predictions(args, names, run)
    plt = _pyplot()
    test = [r.value for r in TEST_REGIMES]
    for name in names:
        p = preds[preds["model"] == name]
        for regime in [*test, ALL]:
            sub = p[p["regime"].isin(test)] if regime == ALL else p[p["regime"] == regime]
            if sub.empty or sub["true_is"].nunique() < 2:
                continue
            fpr, tpr, thr = roc_curve(sub["probability_is"], sub["true_is"])
            df = pd.DataFrame({"fpr": fpr, "tpr": tpr, "threshold": thr})
            base = Path(args.out) / "reports" / "roc" / f"{name}_{regime}"
            run.wrote(_write_csv(df, base.with_suffix(".csv")))
            fig, ax = plt.subplots(figsize=(4, 4))
            ax.plot(fpr, tpr, lw=1.5)
            ax.plot([0, 1], [0, 1], ls="--", c="grey", lw=0.8)
            ax.set_xlabel("false positive rate")
            ax.set_ylabel("true positive rate")
            ax.set_title(f"{name} / {regime}")
            _savefig(fig, base.with_suffix(".svg"))
            run.wrote(base.with_suffix(".svg"))
    print(f"wrote ROC curves for {', '.join(names)}")


def cmd_analyze(args, run):
    from .lmm import error_analysis
    corpus = _load_corpus(args)
    _corpus_inputs(run, args)
    preds = _load_predictions(args, [args.model], run)
    frames = []
    for goal in (Goal.INFORMATION_SEEKING, Goal.ORDINARY_READING):
        fit_ = error_analysis(preds, corpus, goal, response=args.response)
        w = fit_.wald.assign(goal_subset=goal.value)
        frames.append(w[w["feature"] != "intercept"])
    coef = pd.concat(frames, ignore_index=True)[["feature", "beta", "se", "z", "p_raw",
                                                 "p_corrected", "goal_subset"]]
    rep = _reports(args.out)
    path = rep / f"coefficients_{args.model}.csv"
    # estimation details travel in comment lines ahead of the table
    path.write_text(f"# random intercepts only; ML estimation; response={args.response}\n"
                    + coef.to_csv(index=False, lineterminator="\n", float_format="%.10g"),
                    encoding="utf-8")
    run.wrote(path)
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharey=True)
    for ax, goal in zip(axes, ("is", "or")):
        c = coef[coef["goal_subset"] == goal]
        y = np.arange(len(c))
        sig = c["p_corrected"] < 0.05
        ax.errorbar(c["beta"], y, xerr=1.96 * c["se"], fmt="none", ecolor="grey")
        ax.scatter(c["beta"], y, c=np.where(sig, "tab:red", "tab:blue"), zorder=3)
        ax.axvline(0, c="k", lw=0.6)
        ax.set_yticks(y, c["feature"])
        ax.set_title({"is": "information seeking", "or": "ordinary reading"}[goal])
        ax.set_xlabel("coefficient")
    fig.tight_layout()
    _savefig(fig, rep / f"coefficients_{args.model}.svg")
    run.wrote(rep / f"coefficients_{args.model}.svg")
    print(coef.to_string(index=False))


def cmd_compare(args, run):
    from .evalx import TEST_REGIMES as TR
    from .lmm import compare_models
    corpus = _load_corpus(args)
    preds = _load_predictions(args, [args.model_a, args.model_b], run)
    preds = preds[preds["regime"].isin([r.value for r in TR])]
    res = compare_models(preds[preds["model"] == args.model_a],
                         preds[preds["model"] == args.model_b], corpus)
    res.pop("fit")
    df = pd.DataFrame([{"model_a": args.model_a, "model_b": args.model_b, **res}])
    run.wrote(_write_csv(df, _reports(args.out) / f"compare_{args.model_a}_vs_{args.model_b}.csv"))
    print(df.to_string(index=False))


# -- parser ----------------------------------------------------------------------------------------

def _add_train_flags(p):
    d = TrainConfig()
    p.add_argument("--lr", type=float, default=None,
                   help="single learning rate (default: the per-model default grid)")
    p.add_argument("--dropout", type=float, default=d.dropout_rate)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--epochs", type=int, default=d.max_epochs)
    p.add_argument("--patience", type=int, default=d.early_stop_patience)
    p.add_argument("--warmup-ratio", type=float, default=d.warmup_ratio)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--grid-file", default=None, help="name=v1,v2 lines; overrides --lr")
    p.add_argument("--word-dim", type=int, default=None)
    p.add_argument("--no-eye-features", action="store_true",
                   help="rnn only: word embeddings in fixation order, no gaze features")
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--name", default=None, help="model directory name (default: the kind)")
    p.add_argument("--fold", type=int, default=None, help="single fold (default: all)")


COMMON_FLAGS = ("out", "seed", "threads", "config", "corpus", "verbose")


def _common(suppress: bool) -> argparse.ArgumentParser:
    # subcommand copies suppress their defaults so flags given before the
    # subcommand name are not overwritten
    def d(v):
        return argparse.SUPPRESS if suppress else v
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=d("out"), help="output directory")
    common.add_argument("--seed", type=int, default=d(0))
    common.add_argument("--threads", type=int, default=d(None), help="BLAS thread limit")
    common.add_argument("--config", default=d(None), help="key=value file; flags win")
    common.add_argument("--corpus", default=d(None),
                        help="corpus directory (default <out>/corpus)")
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common(suppress=True)
    parser = argparse.ArgumentParser(prog="readgoal", parents=[_common(suppress=False)],
                                     description="Decode reading goals from eye movements.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic corpus")
    p.add_argument("--delta", type=float, default=None, help="effect size")
    p.add_argument("--n-batches", type=int, default=None)
    p.add_argument("--articles", type=int, default=None)
    p.add_argument("--paragraphs-per-article", type=float, default=None)
    p.add_argument("--participants", type=int, default=None)

    p = add("split", cmd_split, "build the 10-fold regime plan")
    p.add_argument("--expected-articles", type=int, default=10)
    p.add_argument("--expected-participants", type=int, default=120,
                   help="participants per batch; 0 accepts any multiple of 10")

    add("featurize", cmd_featurize, "write global and per-fixation features")
    p = add("render", cmd_render, "render scanpath PNGs")
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--limit", type=int, default=None)

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every layer type")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--epsilon", type=float, default=1e-4)

    p = add("train", cmd_train, "fit a classifier per fold")
    p.add_argument("--model", required=True, choices=MODEL_CHOICES + ["all"])
    _add_train_flags(p)

    for name, func, help_ in (("predict", cmd_predict, "predict Val and test regimes"),
                              ("evaluate", cmd_evaluate, "predict and score per regime")):
        p = add(name, func, help_)
        p.add_argument("--model", required=True, help="model name(s), comma separated, or all")
        p.add_argument("--fold", type=int, default=None)

    p = add("ensemble", cmd_ensemble, "stack base-model probabilities")
    p.add_argument("--models", required=True)
    p.add_argument("--name", default=None)

    p = add("online", cmd_online, "accuracy as a function of the fixation budget")
    p.add_argument("--model", required=True, choices=MODEL_CHOICES)
    p.add_argument("--budgets", default="1,5,10,25,50,100")
    p.add_argument("--mode", choices=["retrain", "fixed"], default="retrain")
    _add_train_flags(p)

    p = add("agreement", cmd_agreement, "pairwise kappa on validation predictions")
    p.add_argument("--models", required=True)
    p = add("roc", cmd_roc, "ROC curves per model and regime")
    p.add_argument("--models", required=True)

    p = add("analyze", cmd_analyze, "mixed-effects error analysis")
    p.add_argument("--model", required=True)
    p.add_argument("--response", choices=["probability", "logit"], default="probability")

    p = add("compare", cmd_compare, "mixed-effects comparison of two models")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    return parser


def _apply_config(parser, argv):
    """Re-parse with key=value defaults from --config; explicit flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    path = Path(args.config)
    if not path.exists():
        raise DataError(f"missing config file {path}")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            parser.error(f"{path} line {i}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        dest = k.replace("-", "_")
        if dest not in actions or dest in ("config", "help", "func"):
            parser.error(f"{path} line {i}: unknown option {k!r} for {args.command}")
        a = actions[dest]
        if isinstance(a, argparse._StoreTrueAction):
            defaults[dest] = v.lower() in ("1", "true", "yes")
        else:
            defaults[dest] = a.type(v) if a.type else v
    parser.set_defaults(**{k: v for k, v in defaults.items() if k in COMMON_FLAGS})
    sub.set_defaults(**{k: v for k, v in defaults.items() if k not in COMMON_FLAGS})
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(args.threads)
    else:
        limiter = nullcontext()
    run = Run(args, args.command)
    try:
        with limiter:
            args.func(args, run)
        run.finish()
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ComputeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ReadGoalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
