import numpy as np
import pytest

from pommix.analysis import (
    identical_pair_bias, interaction_analysis, interaction_curve, interactions_per_compound,
    white_noise_analysis,
)
from pommix.datasets import Mixture, MixtureCorpus, MixturePair


def _corpus(sizes, identical=()):
    mixtures, pairs = [], []
    k = 0
    for i, (na, nb) in enumerate(sizes):
        for n in (na, nb):
            mixtures.append(Mixture(f"m{k}", "snitz", tuple(f"C{'C' * j}" for j in range(n)), ()))
            k += 1
        same = i in identical
        pairs.append(MixturePair(2 * i, 2 * i if same else 2 * i + 1, 0.1 * (i % 5), "explicit", "snitz", same))
    return MixtureCorpus(mixtures, pairs)


def test_white_noise_simulation_oracle():
    # averaging i.i.d. embeddings over larger sets concentrates them: distances shrink
    rng = np.random.default_rng(0)
    sizes = [1, 2, 4, 8, 16, 32]
    dist = []
    for n in sizes:
        d = [np.linalg.norm(rng.normal(size=(n, 16)).mean(0) - rng.normal(size=(n, 16)).mean(0))
             for _ in range(200)]
        dist.append(np.mean(d))
    corpus = _corpus([(n, n) for n in sizes])
    rep = white_noise_analysis(corpus, dist)
    assert rep["trend"] < -0.9
    assert [r["geometric_mean_size"] for r in rep["rows"]] == [float(n) for n in sizes]


def test_white_noise_single_size_undefined():
    rep = white_noise_analysis(_corpus([(3, 3)] * 4), [0.1, 0.2, 0.3, 0.4])
    assert rep["trend"] is None and rep["trend_note"].startswith("undefined")
    with pytest.raises(ValueError):
        white_noise_analysis(_corpus([(3, 3)]), [0.1, 0.2])


def test_identical_pair_bias_report():
    corpus = _corpus([(2, 2), (3, 3), (4, 4)], identical={0, 1})
    rep = identical_pair_bias(corpus, [0.3, 1.4, -0.2], identical_predictions=[[0.3, 0.3], [1.0], [0.1]])
    assert rep["identical_pairs"] == 2 and rep["nonzero_labels"] == 1
    assert rep["label_mean"] == pytest.approx(0.05)
    assert rep["clamped_bias"] == [0.3, 1.0, 0.0]
    assert rep["prediction_equals_clamped_bias"] == [True, True, False]


def test_interactions_counting():
    z = np.zeros((4, 4))
    assert all(interactions_per_compound(z, c) == 0 for c in (0.3, 0.4, 0.5))
    w = np.zeros((3, 3))
    w[0, 2] = 0.6
    assert interactions_per_compound(w, 0.5) == pytest.approx(1 / 3)
    assert interactions_per_compound(w, 0.6) == pytest.approx(1 / 3)  # at the cutoff counts


def test_strong_weak_keys():
    maps = [
        {"mixture_id": "a", "smiles": ["X", "Y", "Z"],
         "weights": [[0.1, 0.9, 0.0], [0.2, 0.3, 0.4], [0.05, 0.7, 0.2]]},
        {"mixture_id": "b", "smiles": ["Y", "W"], "weights": [[0.6, 0.1], [0.2, 0.2]]},
    ]
    rep = interaction_analysis(maps)
    # strong queries: a/0 (max Y, min Z), a/2 (max Y, min X), b/0 (max Y, min W)
    assert rep["strong_keys"] == ["Y"]
    assert rep["weak_keys"] == ["W", "X", "Z"]
    assert rep["mixed_keys"] == []
    curve = interaction_curve(rep["rows"])
    assert {(c["cutoff"], c["size"]) for c in curve} == {(c, s) for c in (0.3, 0.4, 0.5) for s in (2, 3)}
    half = [c for c in curve if c["cutoff"] == 0.5 and c["size"] == 3][0]
    assert half["mean_interactions"] == pytest.approx(2 / 3)
