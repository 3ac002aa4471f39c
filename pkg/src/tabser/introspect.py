"""Which inputs drive zero-shot predictions.

Two tools:

* a surrogate L2-regularized logistic regression fit to the model's
  predicted labels, with the regularization strength chosen by k-fold
  cross-validated log-loss; its weights rank the features;
* relative risk with a Katz (log-method) 95% confidence interval, for
  binary exposures such as "patient has concept X".
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from tabser.dataset import CATEGORICAL, NUMERIC
from tabser.errors import DataError, NonConvergence, SingleClass

log = logging.getLogger(__name__)

C_GRID = (100.0, 10.0, 1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
MAX_ITER = 10_000
GRAD_TOL = 1e-8
Z_95 = 1.96


@dataclass(frozen=True)
class DesignMatrix:
    feature_names: tuple
    rows: np.ndarray
    groups: tuple = ()


@dataclass(frozen=True)
class LogisticFit:
    weights: np.ndarray
    intercept: float
    C: float
    n_iter: int
    grad_norm: float


@dataclass(frozen=True)
class SurrogateResult:
    feature_names: tuple
    weights: tuple
    ranks: tuple
    intercept: float
    C: float
    folds: int
    cv_loss: dict

    def ranked(self):
        order = sorted(range(len(self.ranks)), key=lambda i: self.ranks[i])
        return [(self.feature_names[i], self.weights[i], self.ranks[i]) for i in order]

    def to_dict(self):
        return {
            "C": self.C,
            "folds": self.folds,
            "intercept": self.intercept,
            "cv_loss": {repr(c): v for c, v in self.cv_loss.items()},
            "features": [{"feature": f, "weight": w, "rank": r} for f, w, r in self.ranked()],
        }


@dataclass(frozen=True)
class RelativeRisk:
    rr: float
    ci_low: Optional[float]
    ci_high: Optional[float]
    ratio: Optional[Fraction]

    @property
    def ci_defined(self):
        return self.ci_low is not None

    def to_dict(self):
        return {"rr": self.rr, "ci_low": self.ci_low, "ci_high": self.ci_high, "ci_defined": self.ci_defined}


def build_design_matrix(ds, standardize=True) -> DesignMatrix:
    """One-hot categoricals (``raw_name_value``, sorted values) and numerics.

    Numerics are z-scored when ``standardize`` is set; missing numerics
    become the column mean (0 after scaling) and missing categoricals have
    no active indicator.
    """
    names, cols, groups = [], [], []
    for j, col in enumerate(ds.columns):
        values = [row[j] for row in ds.rows]
        if col.kind == NUMERIC:
            present = np.array([v for v in values if v is not None], dtype=float)
            mean = present.mean() if present.size else 0.0
            x = np.array([mean if v is None else v for v in values], dtype=float)
            if standardize:
                sd = x.std()
                x = (x - mean) / sd if sd > 0 else x - mean
            names.append(col.raw_name)
            cols.append(x)
        elif col.kind == CATEGORICAL:
            start = len(names)
            for level in sorted({v for v in values if v is not None}):
                names.append(f"{col.raw_name}_{level}")
                cols.append(np.array([1.0 if v == level else 0.0 for v in values]))
            groups.append((start, len(names)))
    X = np.column_stack(cols) if cols else np.zeros((ds.n, 0))
    return DesignMatrix(tuple(names), X, tuple(groups))


def _sigmoid(z):
    return np.where(z >= 0, 1 / (1 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))))


def logistic_objective(w, b, X, y, C):
    """Mean logistic loss plus ||w||^2 / (2C); the intercept is not penalized."""
    z = X @ w + b
    # log(1 + e^z) - y z, computed stably
    loss = np.logaddexp(0.0, z) - y * z
    return float(loss.mean() + w @ w / (2 * C))


def logistic_gradient(w, b, X, y, C):
    r = _sigmoid(X @ w + b) - y
    n = len(y)
    return X.T @ r / n + w / C, float(r.sum() / n)


def fit_logistic(X, y, C=1.0, max_iter=MAX_ITER, tol=GRAD_TOL, fit_intercept=True) -> LogisticFit:
    """Newton's method with backtracking on the regularized mean log-loss.

    ``y`` may hold hard 0/1 labels or probabilities in [0, 1]. Converged
    when the full gradient norm (weights and intercept) is below ``tol``.
    With ``fit_intercept=False`` the intercept is pinned at 0.
    """
    X = np.asarray(X.rows if isinstance(X, DesignMatrix) else X, dtype=float)
    y = np.asarray(y, dtype=float)
    if C <= 0:
        raise DataError("C must be positive")
    if np.any((y < 0) | (y > 1)):
        raise DataError("targets must lie in [0, 1]")
    if y.min() == y.max() and y[0] in (0.0, 1.0):
        raise SingleClass("logistic fit needs both classes")
    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))]) if fit_intercept else X
    m = A.shape[1]
    theta = np.zeros(m)
    penalty = np.full(m, 1 / C)
    if fit_intercept:
        base = np.clip(y.mean(), 1e-12, 1 - 1e-12)
        theta[-1] = math.log(base / (1 - base))
        penalty[-1] = 0.0

    def split_theta(t):
        return (t[:-1], float(t[-1])) if fit_intercept else (t, 0.0)

    def f(t):
        w, b = split_theta(t)
        return logistic_objective(w, b, X, y, C)

    def done(t, it, g):
        w, b = split_theta(t)
        return LogisticFit(w.copy(), b, C, it, g)

    obj = f(theta)
    gnorm = math.inf
    for it in range(max_iter + 1):
        p = _sigmoid(A @ theta)
        grad = A.T @ (p - y) / n + penalty * theta
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return done(theta, it, gnorm)
        if it == max_iter:
            break
        H = (A * (p * (1 - p))[:, None]).T @ A / n + np.diag(penalty)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = theta - t * step
            new = f(cand)
            if new <= obj - 1e-4 * t * float(grad @ step) or t < 1e-10:
                break
            t *= 0.5
        if t < 1e-10 and new >= obj:
            # no further decrease available in floating point
            if gnorm <= 1e-6:
                return done(theta, it, gnorm)
            break
        theta, obj = cand, new
    raise NonConvergence(f"logistic fit did not converge (gradient norm {gnorm:.3g})")


def log_loss(y, p):
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def fold_assignment(y, folds, seed=0):
    """Stratified folds: shuffle within each class, deal round-robin."""
    rng = np.random.default_rng(seed)
    assign = np.empty(len(y), dtype=int)
    offset = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        assign[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return assign


def surrogate_importance(
    ds, zero_shot_probs, folds=4, target="hard", C_grid=C_GRID, seed=0, standardize=True, fit_intercept=True
):
    """Rank features by the weights of a logistic surrogate of the model's predictions.

    ``target="hard"`` regresses on ``prob >= 0.5``; ``"soft"`` on the
    probabilities themselves. When the hard target has one class only, the
    soft target is used instead (there is nothing to separate).
    """
    design = build_design_matrix(ds, standardize=standardize)
    X = design.rows
    probs = np.asarray(zero_shot_probs, dtype=float)
    if probs.shape != (ds.n,):
        raise DataError(f"expected {ds.n} probabilities, got shape {probs.shape}")
    if target == "hard":
        y = (probs >= 0.5).astype(float)
        if y.min() == y.max():
            log.warning("hard surrogate target is constant; fitting the probabilities instead")
            y = probs
            target = "soft"
    elif target == "soft":
        y = probs
    else:
        raise DataError(f"unknown surrogate target {target!r}")

    strata = y if target == "hard" else np.zeros(len(y))
    assign = fold_assignment(strata, folds, seed)
    cv_loss = {}
    for C in C_grid:
        losses = []
        for k in range(folds):
            tr, te = assign != k, assign == k
            if not te.any():
                continue
            try:
                fit = fit_logistic(X[tr], y[tr], C, fit_intercept=fit_intercept)
            except SingleClass:
                continue
            losses.append(log_loss(y[te], _sigmoid(X[te] @ fit.weights + fit.intercept)))
        cv_loss[C] = float(np.mean(losses)) if losses else math.inf
    # first grid entry wins ties, as in the grid order
    best_C = min(C_grid, key=lambda c: cv_loss[c])
    fit = fit_logistic(X, y, best_C, fit_intercept=fit_intercept)
    w = fit.weights
    order = sorted(range(len(w)), key=lambda i: (-w[i], i))
    ranks = [0] * len(w)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return SurrogateResult(
        feature_names=design.feature_names,
        weights=tuple(float(x) for x in w),
        ranks=tuple(ranks),
        intercept=fit.intercept,
        C=best_C,
        folds=folds,
        cv_loss=cv_loss,
    )


def relative_risk(a, b, c, d) -> RelativeRisk:
    """Risk ratio of exposed ``a/(a+b)`` over unexposed ``c/(c+d)`` with Katz 95% CI.

    ``a``/``b`` are exposed positives/negatives, ``c``/``d`` unexposed.
    A zero ``a`` or ``c`` leaves the interval undefined (``None`` bounds).
    """
    if min(a, b, c, d) < 0:
        raise DataError("counts must be non-negative")
    if a + b == 0 or c + d == 0:
        raise DataError("both groups need at least one member")
    if c == 0:
        return RelativeRisk(math.nan if a == 0 else math.inf, None, None, None)
    ratio = Fraction(a * (c + d), c * (a + b))
    rr = float(ratio)
    if a == 0:
        return RelativeRisk(rr, None, None, ratio)
    se = math.sqrt(1 / a - 1 / (a + b) + 1 / c - 1 / (c + d))
    log_rr = math.log(rr)
    low, high = math.exp(log_rr - Z_95 * se), math.exp(log_rr + Z_95 * se)
    return RelativeRisk(rr, min(low, rr), max(high, rr), ratio)
