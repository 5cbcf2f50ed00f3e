"""Linear mixed models with crossed random intercepts, fit by profiled maximum likelihood.

The model is ``y = X beta + sum_k Z_k u_k + e`` with ``u_k ~ N(0, sigma^2 theta_k^2 I)``
and ``e ~ N(0, sigma^2 I)``. For fixed ``theta`` the fixed effects and
``sigma^2`` come from the penalised normal equations, so only ``theta`` is
searched (Nelder-Mead over ``log theta``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.stats import norm

from .core import Corpus, Goal, Level, Trial
from .errors import InvalidConfig, MissingFeature, NonConvergence, SingularDesign
from .splits import TEST_REGIMES

log = logging.getLogger(__name__)

STARTS = (0.01, 0.3, 1.0)
LOG_THETA_MIN, LOG_THETA_MAX = -15.0, 10.0
MAX_ITER = 10_000
TOL = 1e-8
FEATURES = ("rt_before_cs", "rt_within_cs", "rt_after_cs", "paragraph_position",
            "answered_correctly", "paragraph_length", "paragraph_level", "cs_start_relative",
            "cs_length_relative", "question_difficulty")


@dataclass
class LmmSpec:
    response: np.ndarray
    fixed_design: np.ndarray
    factors: dict[str, np.ndarray]
    fixed_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.response = np.asarray(self.response, dtype=np.float64)
        self.fixed_design = np.asarray(self.fixed_design, dtype=np.float64)
        n = len(self.response)
        if self.fixed_design.ndim != 2 or self.fixed_design.shape[0] != n:
            raise InvalidConfig("fixed design must be a matrix with one row per response")
        if not self.fixed_names:
            self.fixed_names = [f"x{j}" for j in range(self.fixed_design.shape[1])]
        for name, f in self.factors.items():
            if len(f) != n:
                raise InvalidConfig(f"factor {name} has {len(f)} rows, expected {n}")
            if len(np.unique(f)) < 2:
                raise InvalidConfig(f"factor {name} needs at least 2 levels")


@dataclass
class LmmFit:
    names: list[str]
    beta: np.ndarray
    se: np.ndarray
    sigma2: float
    theta: dict[str, float]
    loglik: float
    n: int
    wald: pd.DataFrame | None = None
    starts: list = field(default_factory=list)   # (start theta, loglik at start)

    def coefficients(self) -> pd.DataFrame:
        return self.wald.copy()


class _Problem:
    """Cross-products cached once; each deviance evaluation is a q x q Cholesky."""

    def __init__(self, spec: LmmSpec):
        y, X = spec.response, spec.fixed_design
        self.n, self.p = X.shape
        if self.n <= self.p:
            raise SingularDesign(f"{self.n} rows for {self.p} fixed effects")
        if np.linalg.matrix_rank(X) < self.p:
            raise SingularDesign("fixed-effect design is rank deficient")
        self.y, self.X = y, X
        self.names = list(spec.factors)
        self.codes, self.sizes = [], []
        for name in self.names:
            _, codes = np.unique(np.asarray(spec.factors[name]).astype(str), return_inverse=True)
            self.codes.append(codes)
            self.sizes.append(int(codes.max()) + 1)
        self.offsets = np.r_[0, np.cumsum(self.sizes)].astype(int)
        q = int(self.offsets[-1])
        self.q = q
        cols = [c + o for c, o in zip(self.codes, self.offsets[:-1])]
        ZtZ = np.zeros((q, q))
        for a in cols:
            for b in cols:
                np.add.at(ZtZ, (a, b), 1.0)
        self.ZtZ = ZtZ
        self.ZtX = np.zeros((q, self.p))
        self.Zty = np.zeros(q)
        for a in cols:
            np.add.at(self.ZtX, a, X)
            np.add.at(self.Zty, a, y)
        self.XtX = X.T @ X
        self.Xty = X.T @ y
        self.cols = cols
        self.floor = self.n * 1e-20 * max(1.0, float(np.mean(y ** 2)))

    def lam(self, theta):
        return np.repeat(np.asarray(theta, dtype=np.float64), self.sizes)

    def solve(self, theta):
        """Returns (deviance, beta, u, r2, schur) at ``theta``."""
        lam = self.lam(theta)
        A = lam[:, None] * self.ZtZ * lam[None, :] + np.eye(self.q)
        B = lam[:, None] * self.ZtX
        cu = lam * self.Zty
        cf = cho_factor(A, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        AiB = cho_solve(cf, B)
        Aic = cho_solve(cf, cu)
        schur = self.XtX - B.T @ AiB
        try:
            beta = np.linalg.solve(schur, self.Xty - B.T @ Aic)
        except LinAlgError as exc:
            raise SingularDesign("fixed effects not identifiable given the random effects") from exc
        u = Aic - AiB @ beta
        fitted = self.X @ beta
        for k, c in enumerate(self.cols):
            fitted = fitted + (lam * u)[c]
        r2 = float(np.sum((self.y - fitted) ** 2) + u @ u)
        r2 = max(r2, self.floor)
        dev = logdet + self.n * (1.0 + np.log(2.0 * np.pi * r2 / self.n))
        return dev, beta, u, r2, schur

    def deviance_log(self, log_theta):
        lt = np.clip(log_theta, LOG_THETA_MIN, LOG_THETA_MAX)
        return self.solve(np.exp(lt))[0]


def profiled_loglik(spec: LmmSpec, theta) -> float:
    """Maximised log-likelihood over beta and sigma^2 at fixed ``theta``."""
    return -0.5 * _Problem(spec).solve(np.asarray(theta, dtype=np.float64))[0]


def lmm_fit(spec: LmmSpec, starts: Sequence[float] = STARTS, theta: Sequence[float] | None = None,
            bonferroni_k: int | None = None) -> LmmFit:
    """Profiled ML fit. Pass ``theta`` to skip the search and evaluate at that point."""
    prob = _Problem(spec)
    K = len(prob.names)
    start_log = []
    if theta is not None:
        best_theta = np.asarray(theta, dtype=np.float64)
    elif K == 0:
        best_theta = np.zeros(0)
    else:
        best_val, best_theta = np.inf, None
        for s in starts:
            x0 = np.full(K, np.log(s))
            start_log.append((float(s), -0.5 * prob.deviance_log(x0)))
            res = minimize(prob.deviance_log, x0, method="Nelder-Mead",
                           options={"xatol": TOL, "fatol": 1e-10, "maxiter": MAX_ITER,
                                    "maxfev": 4 * MAX_ITER})
            if not res.success and res.nit >= MAX_ITER:
                raise NonConvergence(f"Nelder-Mead hit {MAX_ITER} iterations from start {s}")
            if res.fun < best_val - 1e-12:
                best_val = res.fun
                best_theta = np.exp(np.clip(res.x, LOG_THETA_MIN, LOG_THETA_MAX))
        # components pinned at the lower clip are exactly zero at the optimum
        dev = prob.solve(best_theta)[0]
        for k in range(K):
            if best_theta[k] <= np.exp(LOG_THETA_MIN) * 1.0001:
                trial = best_theta.copy()
                trial[k] = 0.0
                d0 = prob.solve(trial)[0]
                if d0 <= dev + 1e-10:
                    best_theta, dev = trial, d0
    dev, beta, _, r2, schur = prob.solve(best_theta)
    sigma2 = r2 / prob.n
    cov = sigma2 * np.linalg.inv(schur)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    fit = LmmFit(list(spec.fixed_names), beta, se, float(sigma2),
                 dict(zip(prob.names, map(float, best_theta))), float(-0.5 * dev), prob.n,
                 starts=start_log)
    wald_tests(fit, bonferroni_k if bonferroni_k is not None else 1)
    return fit


def wald_tests(fit: LmmFit, bonferroni_k: int = 1) -> pd.DataFrame:
    """Two-sided normal Wald tests; corrected p = min(1, k * p)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(fit.se > 0, fit.beta / fit.se, 0.0)
    p_raw = np.clip(2.0 * norm.sf(np.abs(z)), 0.0, 1.0)
    p_corr = np.minimum(1.0, bonferroni_k * p_raw)
    fit.wald = pd.DataFrame({"feature": fit.names, "beta": fit.beta, "se": fit.se, "z": z,
                             "p_raw": p_raw, "p_corrected": p_corr})
    return fit.wald


# -- analyses ------------------------------------------------------------------------------------

_KEY = ["fold", "regime", "participant_id", "paragraph_id"]


def _correct(df: pd.DataFrame) -> np.ndarray:
    return (df["predicted_is"].to_numpy() == df["true_is"].to_numpy()).astype(np.float64)


def compare_models(predictions_a: pd.DataFrame, predictions_b: pd.DataFrame,
                   corpus: Corpus | None = None) -> dict:
    """Does model A's correctness differ from model B's on the same trials?

    Correctness indicators are stacked with a model indicator (1 = A) as the
    fixed effect and random intercepts for participant and paragraph.
    """
    a = predictions_a.sort_values(_KEY).reset_index(drop=True)
    b = predictions_b.sort_values(_KEY).reset_index(drop=True)
    if len(a) != len(b) or not (a[_KEY].to_numpy() == b[_KEY].to_numpy()).all():
        raise InvalidConfig("the two prediction sets cover different trials")
    if corpus is not None:
        keys = {t.key for t in corpus.trials}
        missing = [k for k in zip(a["participant_id"], a["paragraph_id"]) if k not in keys]
        if missing:
            raise MissingFeature(f"{len(missing)} predicted trials are not in the corpus")
    y = np.r_[_correct(a), _correct(b)]
    n = len(a)
    X = np.column_stack([np.ones(2 * n), np.r_[np.ones(n), np.zeros(n)]])
    factors = {"participant": np.r_[a["participant_id"], b["participant_id"]],
               "paragraph": np.r_[a["paragraph_id"], b["paragraph_id"]]}
    fit = lmm_fit(LmmSpec(y, X, factors, ["intercept", "model_a"]))
    row = fit.wald.iloc[1]
    return {"coefficient": float(row["beta"]), "se": float(row["se"]), "z": float(row["z"]),
            "p": float(row["p_raw"]), "accuracy_a": float(y[:n].mean()),
            "accuracy_b": float(y[n:].mean()), "n_trials": n, "fit": fit}


def trial_feature_row(t: Trial) -> dict:
    w = t.word_indices
    d = t.durations
    on = w >= 0
    before = on & (w < t.cs_start_word)
    within = on & (w >= t.cs_start_word) & (w <= t.cs_end_word)
    after = on & (w > t.cs_end_word)
    n_words = len(t.words)
    return {"rt_before_cs": float(d[before].sum()), "rt_within_cs": float(d[within].sum()),
            "rt_after_cs": float(d[after].sum()),
            "paragraph_position": float(t.paragraph_position),
            "answered_correctly": float(t.answered_correctly),
            "paragraph_length": float(n_words),
            "paragraph_level": float(t.level is Level.ADVANCED),
            "cs_start_relative": t.cs_start_word / n_words,
            "cs_length_relative": (t.cs_end_word - t.cs_start_word + 1) / n_words,
            "question_difficulty": float(t.question_difficulty)}


def error_analysis(predictions: pd.DataFrame, corpus: Corpus, goal_subset: Goal,
                   response: str = "probability", bonferroni_k: int = len(FEATURES),
                   regimes=TEST_REGIMES) -> LmmFit:
    """P(correct label) ~ 10 z-scored trial features + (1|item) + (1|participant) + (1|regime).

    ``response="logit"`` models the log-odds of the correct label instead.
    """
    if response not in ("probability", "logit"):
        raise InvalidConfig(f"unknown response {response!r}")
    p = predictions[predictions["regime"].isin([r.value for r in regimes])]
    want = int(goal_subset is Goal.INFORMATION_SEEKING)
    p = p[p["true_is"] == want].sort_values(_KEY).reset_index(drop=True)
    if p.empty:
        raise MissingFeature(f"no predictions for goal {goal_subset.value}")
    by_key = corpus.by_key
    rows = []
    for pid, par in zip(p["participant_id"], p["paragraph_id"]):
        t = by_key.get((pid, par))
        if t is None:
            raise MissingFeature(f"trial ({pid}, {par}) missing from corpus")
        rows.append(trial_feature_row(t))
    F = pd.DataFrame(rows, columns=list(FEATURES)).to_numpy(dtype=np.float64)
    mu, sd = F.mean(axis=0), F.std(axis=0)
    if np.any(sd == 0):
        const = [FEATURES[j] for j in np.flatnonzero(sd == 0)]
        raise SingularDesign(f"features without variance in this subset: {const}")
    Z = (F - mu) / sd
    prob = p["probability_is"].to_numpy()
    pc = prob if want else 1.0 - prob
    if response == "logit":
        pc = np.clip(pc, 1e-6, 1 - 1e-6)
        pc = np.log(pc / (1 - pc))
    X = np.column_stack([np.ones(len(pc)), Z])
    factors = {"item": p["paragraph_id"].to_numpy(), "participant": p["participant_id"].to_numpy()}
    if p["regime"].nunique() >= 2:
        factors["regime"] = p["regime"].to_numpy()
    return lmm_fit(LmmSpec(pc, X, factors, ["intercept", *FEATURES]), bonferroni_k=bonferroni_k)
