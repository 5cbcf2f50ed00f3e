"""Binary logistic regression with optional L2 penalty and validation-set grid search."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from ..errors import EmptyTrainingSet, NonConvergence

C_GRID = (0.1, 5.0, 10.0, 50.0, 100.0)
PENALTIES = ("l2", "none")


@dataclass
class LogisticModel:
    coef: np.ndarray
    intercept: float
    C: float | None
    penalty: str
    grad_norm: float = 0.0

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision(X)
        return np.exp(-np.logaddexp(0.0, -z))


def _objective(params, X, y, lam):
    """Mean log-loss + lam/2 ||w||^2 (intercept unpenalised), with gradient."""
    w, b = params[:-1], params[-1]
    z = X @ w + b
    n = len(y)
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * lam * (w @ w)
    r = (np.exp(-np.logaddexp(0.0, -z)) - y) / n
    g = np.empty_like(params)
    g[:-1] = X.T @ r + lam * w
    g[-1] = r.sum()
    return loss, g


def fit_logistic(X, y, C: float | None = None, penalty: str = "l2", tol: float = 1e-8,
                 max_iter: int = 10_000) -> LogisticModel:
    """Quasi-Newton (L-BFGS) fit until the gradient norm of the mean objective < ``tol``.

    ``C`` follows the usual inverse-regularisation convention: the summed-loss
    objective carries ``||w||^2 / (2C)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(y) == 0:
        raise EmptyTrainingSet("logistic regression needs a nonempty 2-D design")
    n, p = X.shape
    lam = 0.0 if penalty == "none" or C is None else 1.0 / (C * n)
    x0 = np.zeros(p + 1)
    res = minimize(_objective, x0, args=(X, y, lam), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol * 1e-2, "ftol": 0.0,
                            "maxcor": 30})
    params = res.x
    gnorm = float(np.linalg.norm(_objective(params, X, y, lam)[1]))
    if gnorm >= tol:
        params, gnorm = _newton_polish(params, X, y, lam, tol)
    if gnorm >= tol:
        raise NonConvergence(f"logistic regression gradient norm {gnorm:.3g} after iteration cap")
    return LogisticModel(params[:-1].copy(), float(params[-1]), C if penalty == "l2" else None,
                         penalty, gnorm)


def _newton_polish(params, X, y, lam, tol, max_steps=50):
    """Damped Newton steps on the exact Hessian; used when L-BFGS stalls
    (badly conditioned problems such as a huge L2 penalty)."""
    n = len(y)
    Xa = np.column_stack([X, np.ones(n)])
    reg = np.full(Xa.shape[1], lam)
    reg[-1] = 0.0
    f, g = _objective(params, X, y, lam)
    for _ in range(max_steps):
        if np.linalg.norm(g) < tol:
            break
        p = np.exp(-np.logaddexp(0.0, -(Xa @ params)))
        H = (Xa * (p * (1 - p) / n)[:, None]).T @ Xa + np.diag(reg)
        step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            cand = params - t * step
            fc, gc = _objective(cand, X, y, lam)
            if fc <= f + 1e-4 * t * (g @ -step) or np.linalg.norm(gc) < np.linalg.norm(g):
                break
            t *= 0.5
        params, f, g = cand, fc, gc
    return params, float(np.linalg.norm(g))


def grid_candidates(C_grid: Sequence[float] = C_GRID, penalty_options: Sequence[str] = PENALTIES):
    out = []
    for pen in penalty_options:
        if pen == "l2":
            out.extend(("l2", float(c)) for c in C_grid)
        else:
            out.append(("none", None))
    return out


def accuracy(proba, y) -> float:
    return float(np.mean((np.asarray(proba) >= 0.5).astype(int) == np.asarray(y)))


def select_logistic(X_train, y_train, X_val, y_val, C_grid=C_GRID, penalty_options=PENALTIES):
    """Fit every grid point on train, keep the best validation accuracy (first wins ties)."""
    best, best_acc, table = None, -1.0, []
    for pen, C in grid_candidates(C_grid, penalty_options):
        m = fit_logistic(X_train, y_train, C=C, penalty=pen)
        acc = accuracy(m.predict_proba(X_val), y_val)
        table.append({"penalty": pen, "C": C, "val_accuracy": acc})
        if acc > best_acc:
            best, best_acc = m, acc
    return best, table
