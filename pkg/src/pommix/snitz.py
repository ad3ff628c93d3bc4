"""Descriptor-selection baseline: angle distance between mean descriptor vectors.

A mixture is the mean of its components' normalized descriptors. The
predicted distance of two mixtures is the angle between their vectors,
restricted to a selected descriptor subset, divided by pi.

Selection runs on training pairs only, in three steps:

1. for every subset size n in [2, 200], sample random subsets and pick the n
   minimizing mean(RMSE) - std(RMSE);
2. sample base sets of n - 1 descriptors; each descriptor's RMSE_i is the
   mean RMSE over base sets (not containing it) with the descriptor added;
3. score(i) = max(0, -(RMSE_i - mean) / std); sample n-subsets of the
   positively scored descriptors and keep the one with the lowest RMSE.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricReport, regression_report

log = logging.getLogger(__name__)


@dataclass
class SnitzConfig:
    step1_samples: int = 20000
    step2_samples: int = 2000
    step3_samples: int = 4000
    n_range: tuple = (2, 200)
    block: int = 2000


@dataclass
class SnitzState:
    n: int
    selected: list
    scores: np.ndarray
    rmse_by_n: dict = field(default_factory=dict)  # n -> (mean, std)
    feature_rmse: np.ndarray | None = None
    train_rmse: float = float("nan")

    def to_json(self):
        return {"n": self.n, "selected": [int(i) for i in self.selected],
                "scores": [float(s) for s in self.scores], "train_rmse": self.train_rmse,
                "step1": {str(k): {"mean": m, "std": s} for k, (m, s) in sorted(self.rmse_by_n.items())},
                "prediction": "arccos(clamp(cos, -1, 1)) / pi"}


def mixture_vectors(table, mixtures):
    """Mean normalized descriptor vector per mixture (list of SMILES tuples)."""
    return np.stack([np.mean([table.normalized(s).astype(np.float64) for s in m], axis=0)
                     for m in mixtures])


def angle_distance(dot, na, nb):
    """arccos of the clamped cosine, over pi; NaN where a norm is zero."""
    denom = np.sqrt(na * nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, dot / np.where(denom > 0, denom, 1), np.nan)
    return np.arccos(np.clip(cos, -1.0, 1.0)) / np.pi


def predict(a, b, features):
    """Angle distances [P] for paired mixture vectors on a descriptor subset."""
    f = np.asarray(features)
    A, B = a[:, f], b[:, f]
    return angle_distance((A * B).sum(1), (A * A).sum(1), (B * B).sum(1))


def _rmse_columns(pred, y):
    """RMSE per column of ``pred`` [P, S], ignoring undefined predictions."""
    err = (pred - y[:, None]) ** 2
    with np.errstate(invalid="ignore"):
        return np.sqrt(np.nanmean(err, axis=0))


def _subset_rmse(a, b, y, subsets):
    """RMSE for each row of ``subsets`` (index arrays of equal length)."""
    ab, aa, bb = a * b, a * a, b * b
    dot = ab[:, subsets].sum(-1)
    return _rmse_columns(angle_distance(dot, aa[:, subsets].sum(-1), bb[:, subsets].sum(-1)), y)


def _random_orders(rng, k, d):
    return np.argsort(rng.random((k, d)), axis=1)


def step1_sizes(a, b, y, cfg: SnitzConfig, rng):
    """(mean, std) of RMSE over random subsets for every n in the range.

    Each sample is one random permutation; its length-n prefix is the
    n-subset, so sums are updated incrementally as n grows.
    """
    d = a.shape[1]
    lo, hi = cfg.n_range
    hi = min(hi, d)
    ab, aa, bb = a * b, a * a, b * b
    s1 = np.zeros(hi + 1)
    s2 = np.zeros(hi + 1)
    done = 0
    while done < cfg.step1_samples:
        k = min(cfg.block, cfg.step1_samples - done)
        order = _random_orders(rng, k, d)
        dot = np.zeros((len(y), k))
        na = np.zeros_like(dot)
        nb = np.zeros_like(dot)
        for n in range(1, hi + 1):
            col = order[:, n - 1]
            dot += ab[:, col]
            na += aa[:, col]
            nb += bb[:, col]
            if n >= lo:
                r = _rmse_columns(angle_distance(dot, na, nb), y)
                s1[n] += np.nansum(r)
                s2[n] += np.nansum(r * r)
        done += k
    out = {}
    for n in range(lo, hi + 1):
        mu = s1[n] / cfg.step1_samples
        out[n] = (float(mu), float(np.sqrt(max(s2[n] / cfg.step1_samples - mu * mu, 0.0))))
    return out


def step2_feature_rmse(a, b, y, n, cfg: SnitzConfig, rng):
    """Mean RMSE of each descriptor appended to random (n-1)-subsets."""
    d = a.shape[1]
    ab, aa, bb = a * b, a * a, b * b
    base = _random_orders(rng, cfg.step2_samples, d)[:, :n - 1]
    dot, na, nb = (m[:, base].sum(-1) for m in (ab, aa, bb))
    member = np.zeros((cfg.step2_samples, d), dtype=bool)
    np.put_along_axis(member, base, True, axis=1)
    out = np.full(d, np.nan)
    for i in range(d):
        keep = ~member[:, i]
        if not keep.any():
            continue
        pred = angle_distance(dot[:, keep] + ab[:, i:i + 1], na[:, keep] + aa[:, i:i + 1],
                              nb[:, keep] + bb[:, i:i + 1])
        out[i] = float(np.nanmean(_rmse_columns(pred, y)))
    return out


def feature_scores(feature_rmse):
    """max(0, -(RMSE_i - mean) / std); 0 for features without an estimate."""
    r = np.asarray(feature_rmse, dtype=np.float64)
    mu, sd = np.nanmean(r), np.nanstd(r)
    if not sd > 0:
        return np.zeros_like(r)
    return np.nan_to_num(np.maximum(0.0, -(r - mu) / sd), nan=0.0)


def select_features(a, b, y, cfg: SnitzConfig = SnitzConfig(), seed=0) -> SnitzState:
    """Run the three selection steps on training pairs only."""
    rng = np.random.default_rng(seed)
    y = np.asarray(y, dtype=np.float64)
    by_n = step1_sizes(a, b, y, cfg, rng)
    n = min(by_n, key=lambda k: (by_n[k][0] - by_n[k][1], k))
    feat_rmse = step2_feature_rmse(a, b, y, n, cfg, rng)
    scores = feature_scores(feat_rmse)
    pool = np.flatnonzero(scores > 0)
    if len(pool) < n:
        log.warning("only %d positively scored descriptors for n=%d; using the %d best", len(pool), n, n)
        pool = np.argsort(np.nan_to_num(feat_rmse, nan=np.inf), kind="stable")[:n]
    if len(pool) == n:
        cands = pool[None, :]
    else:
        cands = pool[_random_orders(rng, cfg.step3_samples, len(pool))[:, :n]]
    rmse = _subset_rmse(a, b, y, cands)
    best = int(np.nanargmin(rmse))
    return SnitzState(n, sorted(int(i) for i in cands[best]), scores, by_n, feat_rmse, float(rmse[best]))


def pair_vectors(corpus, table, idx):
    idx = np.asarray(idx, dtype=np.int64)
    vecs = mixture_vectors(table, [m.smiles for m in corpus.mixtures])
    pairs = corpus.pair_index(idx)
    return vecs[pairs[:, 0]], vecs[pairs[:, 1]], corpus.distances(idx)


def snitz_baseline(corpus, table, train_idx, test_idx, seed=0, cfg: SnitzConfig = SnitzConfig()):
    """Select on ``train_idx`` and score on ``test_idx``.

    Returns (MetricReport, SnitzState, test predictions). Test pairs with an
    all-zero mixture vector on the selected descriptors are skipped.
    """
    a, b, y = pair_vectors(corpus, table, train_idx)
    state = select_features(a, b, y, cfg, seed)
    ta, tb, ty = pair_vectors(corpus, table, test_idx)
    pred = predict(ta, tb, state.selected)
    ok = np.isfinite(pred)
    if not ok.all():
        log.warning("skipping %d test pair(s) with a zero mixture vector", int((~ok).sum()))
    report: MetricReport = regression_report(ty[ok], pred[ok])
    return report, state, pred
