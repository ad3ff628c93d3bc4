"""Regression, ranking and classification metrics."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import kendalltau, rankdata

log = logging.getLogger(__name__)


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} vs {yhat.size}")
    if y.size < 2:
        raise ValueError("need at least 2 values")
    return y, yhat


def pearson(y, yhat):
    """Pearson correlation; constant input is an error."""
    y, yhat = _pair(y, yhat)
    dy, dp = y - y.mean(), yhat - yhat.mean()
    sy, sp = np.sqrt(dy @ dy), np.sqrt(dp @ dp)
    if sy == 0 or sp == 0:
        raise ValueError("pearson undefined for constant input")
    return float(np.clip((dy @ dp) / (sy * sp), -1.0, 1.0))


def rmse(y, yhat):
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def kendall_tau_b(y, yhat):
    """Kendall tau-b (tie corrected); NaN if either input is constant."""
    y, yhat = _pair(y, yhat)
    return float(kendalltau(y, yhat, variant="b").statistic)


def auroc(labels, scores):
    """Area under the ROC curve via the rank-sum statistic (ties count half)."""
    labels = np.asarray(labels).ravel().astype(bool)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if labels.shape != scores.shape:
        raise ValueError(f"length mismatch: {labels.size} vs {scores.size}")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def two_class_labels(labels):
    """Indices of label columns with both classes present."""
    labels = np.asarray(labels)
    pos = labels.sum(axis=0)
    return np.flatnonzero((pos > 0) & (pos < labels.shape[0]))


def macro_auroc(labels, scores, columns=None, warn=True):
    """Mean AUROC over label columns; single-class columns are skipped."""
    labels = np.asarray(labels)
    scores = np.asarray(scores)
    if labels.shape != scores.shape:
        raise ValueError(f"shape mismatch: {labels.shape} vs {scores.shape}")
    keep = two_class_labels(labels) if columns is None else np.asarray(columns)
    skipped = labels.shape[1] - len(keep)
    if skipped and warn:
        log.warning("macro_auroc: skipping %d single-class label(s)", skipped)
    if len(keep) == 0:
        raise ValueError("no label has both classes")
    return float(np.mean([auroc(labels[:, j], scores[:, j]) for j in keep]))


@dataclass
class MetricReport:
    pearson: float
    rmse: float
    kendall: float
    auroc: float | None = None

    def to_json(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def regression_report(y, yhat):
    return MetricReport(pearson(y, yhat), rmse(y, yhat), kendall_tau_b(y, yhat))


def summarize(reports):
    """Per-fold values plus mean and sample std for each metric."""
    out = {}
    for key in ("pearson", "rmse", "kendall", "auroc"):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        if not vals:
            continue
        arr = np.array(vals, dtype=np.float64)
        out[key] = {"folds": [float(v) for v in arr], "mean": float(arr.mean()),
                    "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0}
    return out
