"""Evaluation metrics and their aggregation over repetitions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


def rmse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or a.shape != b.shape:
        raise ValueError("rmse needs two nonempty vectors of equal length")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rmse_imputation(X_imputed, X_true, R) -> float:
    """RMSE over the masked cells only."""
    miss = np.asarray(R) == 0
    if not miss.any():
        raise UndefinedMetricError("no missing cells")
    return rmse(np.asarray(X_imputed)[miss], np.asarray(X_true)[miss])


def frobenius_diff(A, B) -> float:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    return float(np.sqrt(np.sum((A - B) ** 2)))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: (concordant + tied / 2) / (n1 n0), via mid-ranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


@dataclass
class Confusion:
    accuracy: float
    precision: float
    recall: float
    f1: float
    flags: list[str] = field(default_factory=list)

    def as_tuple(self):
        return self.accuracy, self.precision, self.recall, self.f1


def confusion_metrics(preds, labels) -> Confusion:
    """Zero denominators give 0 and a flag naming the metric."""
    p = np.asarray(preds).astype(bool)
    y = np.asarray(labels).astype(bool)
    if p.size == 0 or p.shape != y.shape:
        raise ValueError("need nonempty prediction and label vectors of equal length")
    tp = int(np.sum(p & y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))
    flags = []
    if tp + fp == 0:
        precision = 0.0
        flags.append("precision")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append("recall")
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        f1 = 0.0
        flags.append("f1")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Confusion(float(np.mean(p == y)), precision, recall, f1, flags)


def brier(probs, labels) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    return float(np.mean((p - np.asarray(labels, dtype=np.float64)) ** 2))


# --- aggregation ------------------------------------------------------------

class RunningStats:
    """Welford accumulator; ``std`` is the sample (R - 1) standard deviation."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, x: float):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self._m2 += delta * (x - self.mean)

    @property
    def std(self) -> float:
        return math.sqrt(self._m2 / (self.n - 1)) if self.n > 1 else 0.0


def aggregate(values) -> tuple[float, float]:
    """(mean, sample std) ignoring NaN entries (failed repetitions)."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


METRIC_KEYS = ("rmse_imp", "rmse_mu", "rmse_beta", "frobenius_cov", "auc", "accuracy",
               "precision", "recall", "f1", "brier", "train_seconds", "test_seconds")


def evaluate_predictions(probs, labels, threshold: float = 0.5) -> dict:
    from .predictor import classify
    conf = confusion_metrics(classify(probs, threshold), labels)
    try:
        a = auc(probs, labels)
    except UndefinedMetricError:
        a = math.nan
    return {"auc": a, "accuracy": conf.accuracy, "precision": conf.precision,
            "recall": conf.recall, "f1": conf.f1, "brier": brier(probs, labels),
            "flags": conf.flags}


def parameter_errors(beta, mu, Sigma, beta_true, mu_true, Sigma_true) -> dict:
    return {"rmse_beta": rmse(beta, beta_true), "rmse_mu": rmse(mu, mu_true),
            "frobenius_cov": frobenius_diff(Sigma, Sigma_true)}
