"""Scoring: reconstruction MSE, baseline normalization, geometric-mean
aggregation and downstream prediction from embeddings."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

L2 = 1e-4
HIGHER_IS_BETTER = {"accuracy": True, "f1": True, "precision": True, "recall": True,
                    "mae": False, "rmse": False}


def reconstruction_score(reconstruct: Callable[[np.ndarray], np.ndarray], X_test) -> float:
    """Mean squared error between ``X_test`` and its round trip."""
    X_test = np.asarray(X_test, dtype=np.float64)
    R = np.asarray(reconstruct(X_test), dtype=np.float64)
    if R.shape != X_test.shape:
        raise ValueError(f"reconstruction shape {R.shape} differs from input {X_test.shape}")
    if not np.all(np.isfinite(R)):
        raise ValueError("reconstruction contains non-finite values")
    d = R - X_test
    return float(np.mean(d * d))


def geometric_mean(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or np.any(v <= 0) or not np.all(np.isfinite(v)):
        raise ValueError("geometric mean needs a non-empty set of positive finite values")
    return float(np.exp(np.mean(np.log(v))))


def bootstrap_ci(values, n_resamples: int = 1000, seed: int = 0, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval for the geometric mean of ``values``."""
    logs = np.log(np.asarray(values, dtype=np.float64))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, logs.size, size=(n_resamples, logs.size))
    stats = np.exp(logs[idx].mean(axis=1))
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(stats, [tail, 100.0 - tail])
    return float(lo), float(hi)


@dataclass(frozen=True)
class Aggregate:
    model: str
    geomean: float
    ci_low: float
    ci_high: float
    per_dataset: dict[str, float]
    n_runs: int


def normalize_scores(raw: Mapping[tuple[str, str, int], float], baseline: str) -> dict[tuple[str, str, int], float]:
    """Divide each (dataset, model, seed) score by the same-seed baseline score."""
    out = {}
    for (ds, model, seed), score in raw.items():
        key = (ds, baseline, seed)
        if key not in raw:
            raise ValueError(f"no baseline score for dataset {ds!r}, seed {seed}")
        base = raw[key]
        if not base > 0:
            raise ValueError(f"baseline score for {ds!r} (seed {seed}) must be positive, got {base}")
        out[(ds, model, seed)] = 1.0 if model == baseline else score / base
    return out


def normalize_and_aggregate(raw: Mapping[tuple[str, str, int], float], baseline: str,
                            n_resamples: int = 1000, seed: int = 0) -> dict[str, Aggregate]:
    """Per model: geometric mean over seeds within a dataset, then over datasets,
    with a bootstrap interval over datasets."""
    norm = normalize_scores(raw, baseline)
    runs: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for (ds, model, _), v in sorted(norm.items()):
        runs[model][ds].append(v)
    out = {}
    for model, by_ds in sorted(runs.items()):
        per_ds = {ds: geometric_mean(v) for ds, v in sorted(by_ds.items())}
        vals = list(per_ds.values())
        lo, hi = bootstrap_ci(vals, n_resamples, seed)
        out[model] = Aggregate(model, geometric_mean(vals), lo, hi, per_ds,
                               sum(len(v) for v in by_ds.values()))
    return out


# --- downstream predictors ------------------------------------------------

def _design(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def ridge_fit(X, y, l2: float = L2) -> np.ndarray:
    """Minimize ``mean((y - Xw - b)^2) + l2 * ||w||^2``; returns ``[w, b]``."""
    X, y = np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)
    n, d = X.shape
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    w = np.linalg.solve(Xc.T @ Xc / n + l2 * np.eye(d), Xc.T @ (y - ym) / n)
    return np.append(w, ym - xm @ w)


def ridge_predict(coef: np.ndarray, X) -> np.ndarray:
    return _design(np.asarray(X, dtype=np.float64)) @ coef


def _softmax_loss(flat: np.ndarray, Xd: np.ndarray, Y: np.ndarray, l2: float):
    n, d1 = Xd.shape
    W = flat.reshape(d1, Y.shape[1])
    Z = Xd @ W
    Z -= Z.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    reg = W[:-1]
    loss = -np.sum(Y * logp) / n + 0.5 * l2 * np.sum(reg * reg)
    grad = Xd.T @ (np.exp(logp) - Y) / n
    grad[:-1] += l2 * reg
    return loss, grad.ravel()


@dataclass
class LogisticModel:
    classes: list
    W: np.ndarray

    def predict(self, X) -> list:
        scores = _design(np.asarray(X, dtype=np.float64)) @ self.W
        return [self.classes[i] for i in np.argmax(scores, axis=1)]


def logistic_fit(X, y: Sequence, l2: float = L2, tol: float = 1e-6, max_iter: int = 2000) -> LogisticModel:
    """Multinomial logistic regression (intercept unpenalized), L-BFGS to ``tol``."""
    classes = sorted(set(y))
    if len(classes) < 2:
        raise ValueError("classification needs at least two classes in the training target")
    Xd = _design(np.asarray(X, dtype=np.float64))
    lookup = {c: i for i, c in enumerate(classes)}
    Y = np.zeros((Xd.shape[0], len(classes)))
    Y[np.arange(Xd.shape[0]), [lookup[c] for c in y]] = 1.0
    w0 = np.zeros(Xd.shape[1] * len(classes))
    res = minimize(_softmax_loss, w0, args=(Xd, Y, l2), jac=True, method="L-BFGS-B",
                   options={"gtol": tol, "maxiter": max_iter})
    return LogisticModel(classes, res.x.reshape(Xd.shape[1], len(classes)))


def classification_metrics(y_true: Sequence, y_pred: Sequence) -> dict[str, float]:
    """Accuracy plus support-weighted precision, recall and F1 (0 for empty denominators)."""
    y_true, y_pred = list(y_true), list(y_pred)
    n = len(y_true)
    acc = sum(a == b for a, b in zip(y_true, y_pred)) / n
    prec = rec = f1 = 0.0
    for c in sorted(set(y_true)):
        tp = sum(a == c and b == c for a, b in zip(y_true, y_pred))
        n_pred = sum(b == c for b in y_pred)
        support = sum(a == c for a in y_true)
        p = tp / n_pred if n_pred else 0.0
        r = tp / support
        f = 2 * p * r / (p + r) if p + r else 0.0
        w = support / n
        prec, rec, f1 = prec + w * p, rec + w * r, f1 + w * f
    return {"accuracy": acc, "f1": f1, "precision": prec, "recall": rec}


def regression_metrics(y_true, y_pred) -> dict[str, float]:
    d = np.asarray(y_pred, dtype=np.float64) - np.asarray(y_true, dtype=np.float64)
    a = np.abs(d)
    scale = float(a.max()) if a.size else 0.0
    # scaling before squaring keeps tiny residuals from underflowing to zero
    rmse = scale * float(np.sqrt(np.mean((a / scale) ** 2))) if scale > 0 else 0.0
    return {"mae": float(np.mean(a)), "rmse": rmse}


def _predict_metrics(X_train, y_train, X_test, y_test, task: str) -> dict[str, float]:
    if task == "classification":
        model = logistic_fit(X_train, y_train)
        return classification_metrics(y_test, model.predict(X_test))
    if task == "regression":
        coef = ridge_fit(X_train, np.asarray(y_train, dtype=np.float64))
        return regression_metrics(y_test, ridge_predict(coef, X_test))
    raise ValueError(f"unknown task {task!r}")


def _ratio(a: float, b: float) -> float:
    if b == 0.0:
        return 1.0 if a == 0.0 else math.inf
    return a / b


def downstream_eval(emb_train, y_train, emb_test, y_test, task: str,
                    raw_train=None, raw_test=None) -> dict[str, float]:
    """Predictor metrics on embeddings; with raw features given, also each
    metric divided by the same predictor's metric on the raw features
    (keys suffixed ``_norm``)."""
    metrics = _predict_metrics(emb_train, y_train, emb_test, y_test, task)
    if raw_train is not None and raw_test is not None:
        base = _predict_metrics(raw_train, y_train, raw_test, y_test, task)
        metrics.update({f"{k}_norm": _ratio(v, base[k]) for k, v in list(metrics.items())})
    return metrics
