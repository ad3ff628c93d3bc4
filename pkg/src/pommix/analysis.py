"""Post-hoc analyses: size trend of predicted distances, identical-pair bias and
attention interactions."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .datasets import pair_size_statistic
from .metrics import pearson

CUTOFFS = (0.3, 0.4, 0.5)
STRONG = 0.5


def white_noise_analysis(corpus, predictions):
    """Table of (geometric-mean size, predicted distance) and the trend statistic.

    The trend is the Pearson correlation between log geometric-mean size and
    the prediction; it is None (with a reason) when undefined.
    """
    preds = np.asarray(predictions, dtype=np.float64)
    sizes = np.array([pair_size_statistic(a, b) for a, b in corpus.pair_sizes()])
    if len(sizes) != len(preds):
        raise ValueError("one prediction per pair is required")
    rows = [{"pair": i, "geometric_mean_size": float(s), "predicted_distance": float(p),
             "label": corpus.pairs[i].distance} for i, (s, p) in enumerate(zip(sizes, preds))]
    try:
        trend, reason = pearson(np.log(sizes), preds), None
    except ValueError as exc:
        trend, reason = None, f"undefined: {exc}"
    return {"rows": rows, "trend": trend, "trend_note": reason}


def identical_pair_bias(corpus, learned_bias, identical_predictions=None):
    """Label statistics of identical-composition pairs next to the learned head bias.

    ``learned_bias`` is one value per fold. ``identical_predictions``, if
    given, maps fold index to the model's predictions on the identical pairs,
    which must equal hardtanh(b) exactly.
    """
    idx = corpus.identical_pairs()
    labels = np.array([corpus.pairs[i].distance for i in idx], dtype=np.float64)
    out = {"identical_pairs": len(idx), "nonzero_labels": int(np.count_nonzero(labels)),
           "label_mean": float(labels.mean()) if len(idx) else None,
           "label_std": float(labels.std()) if len(idx) else None,
           "learned_bias": [float(b) for b in learned_bias],
           "clamped_bias": [float(min(max(b, 0.0), 1.0)) for b in learned_bias],
           "pairs": [{"pair": i, "mixture": corpus.mixtures[corpus.pairs[i].a].mixture_id,
                      "source": corpus.pairs[i].source, "label": corpus.pairs[i].distance} for i in idx]}
    if identical_predictions is not None:
        out["prediction_equals_clamped_bias"] = [
            bool(np.all(np.asarray(p, dtype=np.float32) == np.float32(c)))
            for p, c in zip(identical_predictions, out["clamped_bias"])]
    return out


def interactions_per_compound(weights, cutoff):
    """Entries of an attention map at or above ``cutoff``, divided by its size.

    The diagonal (a molecule attending to itself) is counted like any entry.
    """
    w = np.asarray(weights)
    return float((w >= cutoff).sum() / w.shape[0])


def interaction_analysis(maps, cutoffs=CUTOFFS, strong=STRONG):
    """Per-mixture interaction counts and strong/weak key molecules.

    ``maps`` is a list of {mixture_id, smiles, weights}. For each query row
    whose largest weight exceeds ``strong``, its arg-max key is a candidate
    strong key and its arg-min key a candidate weak key; keys found only in
    one role are reported.
    """
    rows, as_max, as_min = [], defaultdict(int), defaultdict(int)
    for rec in maps:
        w = np.asarray(rec["weights"], dtype=np.float64)
        n = w.shape[0]
        for c in cutoffs:
            rows.append({"mixture_id": rec["mixture_id"], "size": n, "cutoff": c,
                         "interactions_per_compound": interactions_per_compound(w, c)})
        for q in range(n):
            if w[q].max() > strong:
                as_max[rec["smiles"][int(np.argmax(w[q]))]] += 1
                as_min[rec["smiles"][int(np.argmin(w[q]))]] += 1
    strong_keys = sorted(set(as_max) - set(as_min))
    weak_keys = sorted(set(as_min) - set(as_max))
    return {"rows": rows, "strong_keys": strong_keys, "weak_keys": weak_keys,
            "mixed_keys": sorted(set(as_max) & set(as_min))}


def interaction_curve(rows):
    """Mean interactions per compound by (cutoff, mixture size)."""
    acc = defaultdict(list)
    for r in rows:
        acc[(r["cutoff"], r["size"])].append(r["interactions_per_compound"])
    return [{"cutoff": c, "size": s, "mean_interactions": float(np.mean(v)), "mixtures": len(v)}
            for (c, s), v in sorted(acc.items())]
