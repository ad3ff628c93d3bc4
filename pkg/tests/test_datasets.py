import csv
import logging

import numpy as np
import pytest

from pommix.canon import canonical_smiles
from pommix.datasets import (
    FILTERS, Mixture, MixtureCorpus, MixturePair, MonoDataset, SplitSpec,
    aggregate_explicit_ratings, aggregate_triangle_trials, augment_with_jaccard,
    check_descriptor_coverage, compile_mixture_pairs, filter_gslf, jaccard_distance,
    load_corpus, make_cv_splits, make_lmo_splits, make_size_threshold_splits,
    make_synthetic_data, pair_size_statistic, read_molecules_csv, write_corpus,
    write_molecules_csv,
)


@pytest.fixture(scope="module")
def synthetic():
    return make_synthetic_data(0)


@pytest.fixture(scope="module")
def corpus(synthetic):
    return compile_mixture_pairs(synthetic.mixture_rows, synthetic.pair_rows)


# ---------------------------------------------------------------- filters


def _mono(smiles, labels=None, n=2):
    labels = np.ones((len(smiles), n), np.uint8) if labels is None else labels
    return MonoDataset(list(smiles), labels, [f"l{i}" for i in range(n)])


def test_filter_order_credits_first_applicable():
    smiles = ["[Na+].[Cl-]", "CCO", "OCC", "CC[N+](C)(C)C", "CCO.CC", "C", "N#N", "C" * 45, "CCCC"]
    out, rep = filter_gslf(_mono(smiles), min_label_count=1)
    assert rep.counts == {"inorganic": 1, "duplicate": 1, "charged": 1, "multi_fragment": 1,
                          "molecular_weight": 2, "no_carbon": 1}
    assert list(rep.counts) == list(FILTERS)
    assert out.smiles == [canonical_smiles("CCO"), canonical_smiles("CCCC")]


def test_empty_input():
    out, rep = filter_gslf(_mono([]))
    assert len(out) == 0
    assert all(v == 0 for v in rep.counts.values())
    assert rep.final_molecules == 0


def test_label_filters_and_idempotence():
    rng = np.random.default_rng(0)
    smiles = [("C" * k) + "O" for k in range(1, 41)]
    labels = np.zeros((40, 4), np.uint8)
    labels[:25, 0] = 1         # kept label
    labels[20:39, 1] = 1       # 19 uses: dropped
    labels[:, 2] = rng.integers(0, 2, 40)
    labels[39, 3] = 1          # rare label, only molecule 39 has it
    labels[39, 2] = 0
    out, rep = filter_gslf(_mono(smiles, labels, 4), min_label_count=20)
    assert "l1" in rep.dropped_labels and "l3" in rep.dropped_labels
    assert all(row.sum() > 0 for row in out.labels)
    assert canonical_smiles(smiles[39]) not in out.smiles
    again, rep2 = filter_gslf(out, min_label_count=20)
    assert again.smiles == out.smiles
    assert np.array_equal(again.labels, out.labels)
    assert sum(rep2.counts.values()) == 0 and not rep2.dropped_labels


def test_synthetic_filter_idempotent(synthetic):
    out, rep = filter_gslf(synthetic.raw_molecules)
    assert rep.final_molecules == len(out) > 150
    again, rep2 = filter_gslf(out)
    assert again.smiles == out.smiles and sum(rep2.counts.values()) == 0


def test_malformed_rows_reported_with_lines(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("smiles,a,b\nCCO,1,0\nCCC,1\nC1CC,0,1\nCCN,2,0\nCCCl,1,1\n")
    raw, bad = read_molecules_csv(p)
    out, rep = filter_gslf(raw, min_label_count=1, malformed=bad)
    lines = [ln for ln, _ in rep.malformed]
    assert lines == [3, 4, 5]
    assert rep.input_rows == 5
    assert len(out) == 2
    write_molecules_csv(out, tmp_path / "o.csv")
    back, bad2 = read_molecules_csv(tmp_path / "o.csv")
    assert back.smiles == out.smiles and not bad2


# --------------------------------------------------------------- mixtures


def test_compile_dedups_by_component_set():
    rows = [{"dataset": "snitz", "mixture_id": "1", "smiles": ["CCO", "c1ccccc1"]},
            {"dataset": "ravia", "mixture_id": "x", "smiles": ["C1=CC=CC=C1", "OCC"]},
            {"dataset": "ravia", "mixture_id": "y", "smiles": ["CCCC"]}]
    pairs = [{"dataset": "snitz", "a": "1", "b": "1", "distance": 0.2, "experiment_type": "explicit"},
             {"dataset": "ravia", "a": "x", "b": "y", "distance": 0.9, "experiment_type": "explicit"}]
    c = compile_mixture_pairs(rows, pairs)
    assert len(c.mixtures) == 2
    assert c.mixtures[0].aliases == (("snitz", "1"), ("ravia", "x"))
    assert [p.is_identical for p in c.pairs] == [True, False]
    assert c.pairs[1].a == 0


def test_compile_errors():
    rows = [{"dataset": "s", "mixture_id": "1", "smiles": ["CCO"]}]
    bad = {"dataset": "s", "a": "1", "b": "2", "distance": 0.5, "experiment_type": "explicit"}
    with pytest.raises(ValueError, match="unknown mixture"):
        compile_mixture_pairs(rows, [bad])
    with pytest.raises(ValueError, match="outside"):
        compile_mixture_pairs(rows, [dict(bad, b="1", distance=1.2)])
    with pytest.raises(ValueError, match="empty mixture"):
        compile_mixture_pairs([dict(rows[0], smiles=[])], [])


def test_corpus_round_trip(tmp_path, synthetic, corpus):
    write_corpus(corpus, tmp_path)
    back = load_corpus(tmp_path)
    assert [m.smiles for m in back.mixtures] == [m.smiles for m in corpus.mixtures]
    assert [(p.a, p.b, p.distance, p.source, p.is_identical) for p in back.pairs] == \
        [(p.a, p.b, p.distance, p.source, p.is_identical) for p in corpus.pairs]
    synthetic.write(tmp_path / "raw")
    again = load_corpus(tmp_path / "raw")
    assert len(again.pairs) == len(corpus.pairs)
    check_descriptor_coverage(again, synthetic.descriptors)


def test_descriptor_coverage_error(corpus):
    from pommix.featurize import DescriptorTable

    with pytest.raises(ValueError, match="missing from the descriptor"):
        check_descriptor_coverage(corpus, DescriptorTable({"C": np.zeros(200)}))


def test_converters():
    rec = [("snitz", "1", "2", 0.2), ("snitz", "1", "2", 0.6), ("snitz", "2", "3", 1.0)]
    rows = aggregate_explicit_ratings(rec)
    assert rows[0]["distance"] == pytest.approx(0.4)
    sim = aggregate_explicit_ratings([("r", "a", "b", 80)], scale=(0, 100), similarity=True)
    assert sim[0]["distance"] == pytest.approx(0.2)
    tri = aggregate_triangle_trials([("b", "1", "2", True), ("b", "1", "2", False), ("b", "1", "2", 1)])
    assert tri[0]["distance"] == pytest.approx(2 / 3)
    assert tri[0]["experiment_type"] == "triangle"


# ----------------------------------------------------------------- splits


def _source_corpus(counts):
    mixtures = [Mixture(f"m{i}", "x", (f"C{'C' * i}",)) for i in range(4)]
    pairs = []
    for src, n in counts.items():
        pairs += [MixturePair(i % 4, (i + 1) % 4, 0.5, "explicit", src, False) for i in range(n)]
    return MixtureCorpus(mixtures, pairs)


def test_cv_split_sizes_and_stratification():
    counts = {"snitz": 360, "ravia": 300, "bushdid": 205}
    c = _source_corpus(counts)
    spec = make_cv_splits(c, k=5, seed=1)
    spec.validate(865)
    tests = [set(f.test) for f in spec.folds]
    assert all(abs(len(t) - 173) <= 1 for t in tests)
    assert set().union(*tests) == set(range(865)) and sum(map(len, tests)) == 865
    src = c.sources()
    for t in tests:
        for s, n in counts.items():
            assert abs(sum(src[i] == s for i in t) - n * len(t) / 865) <= 2
    for f in spec.folds:
        assert len(f.train) + len(f.val) + len(f.test) == 865
        assert abs(len(f.train) / len(f.val) - 7) < 0.3


def test_cv_errors_and_small_source(caplog):
    c = _source_corpus({"snitz": 20, "tiny": 3})
    with pytest.raises(ValueError):
        make_cv_splits(c, k=1)
    with caplog.at_level(logging.WARNING):
        spec = make_cv_splits(c, k=5)
    assert "tiny" in caplog.text
    for f in spec.folds:
        assert {20, 21, 22} <= set(f.train)


def test_split_determinism(tmp_path, corpus):
    for make in (make_cv_splits, make_lmo_splits, make_size_threshold_splits):
        a, b = make(corpus, seed=3), make(corpus, seed=3)
        a.save(tmp_path / "a.json")
        b.save(tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        back = SplitSpec.load(tmp_path / "a.json")
        assert back.to_json() == a.to_json()


def test_lmo(corpus):
    spec = make_lmo_splits(corpus, seed=0)
    assert len(spec.folds) == 5
    spec.validate(len(corpus.pairs))
    for f, held in zip(spec.folds, spec.params["held_out_molecules"]):
        held = set(held)
        comps = lambda i: set(corpus.mixtures[corpus.pairs[i].a].smiles) | set(corpus.mixtures[corpus.pairs[i].b].smiles)  # noqa: E731,E501
        assert all(comps(i) & held for i in f.test)
        assert not any(comps(i) & held for i in f.train + f.val)
        assert len(f.test) >= 0.2 * len(corpus.pairs)
    trains = [set(f.train) for f in spec.folds]
    assert any(a & b for i, a in enumerate(trains) for b in trains[i + 1:])


def test_size_threshold():
    assert pair_size_statistic(4, 9) == 6.0
    assert pair_size_statistic(1, 43) == pytest.approx(6.557, abs=1e-3)
    mixtures = [Mixture(f"m{n}", "x", tuple(f"C{'C' * k}" for k in range(n))) for n in (1, 4, 9, 43)]
    pairs = [MixturePair(a, b, 0.5, "explicit", "snitz", a == b) for a in range(4) for b in range(4)]
    c = MixtureCorpus(mixtures, pairs)
    with pytest.raises(ValueError, match="ascending"):
        make_size_threshold_splits(c, [10, 5])
    spec = make_size_threshold_splits(c, [0.5, 5, 10])
    assert spec.params["used"] == [5, 10]
    stat = [pair_size_statistic(mixtures[p.a].size, mixtures[p.b].size) for p in pairs]
    for t, f in zip([5, 10], spec.folds):
        assert all(stat[i] < t for i in f.train + f.val)
        assert all(stat[i] >= t for i in f.test)


# ------------------------------------------------------------ augmentation


def test_jaccard_examples():
    assert jaccard_distance({1, 2}, {1, 2}) == 0
    assert jaccard_distance({1}, {2}) == 1
    assert jaccard_distance({"a", "b"}, {"b", "c"}) == pytest.approx(2 / 3)


def test_augment(corpus, synthetic):
    mono, _ = filter_gslf(synthetic.raw_molecules)
    labels = mono.labels.copy()
    labels[0] = 0  # unlabeled molecules are excluded
    mono = MonoDataset(mono.smiles, labels, mono.label_names)
    aug = augment_with_jaccard(mono, corpus)
    eligible = [s for s in corpus.molecules() if s in set(mono.smiles[1:])]
    assert len(aug.mixtures) == len(eligible)
    assert len(aug.pairs) == len(eligible) * (len(eligible) - 1) // 2
    assert all(0 <= p.distance <= 1 for p in aug.pairs)
    merged = corpus.extended(aug)
    assert merged.pairs[:len(corpus.pairs)] == corpus.pairs
    assert len(merged.pairs) == len(corpus.pairs) + len(aug.pairs)
    for p in merged.pairs[len(corpus.pairs):]:
        assert merged.mixtures[p.a].size == 1 and merged.mixtures[p.b].size == 1


def test_pairs_csv_schema(tmp_path, synthetic):
    synthetic.write(tmp_path)
    with open(tmp_path / "pairs.csv") as fh:
        assert next(csv.reader(fh)) == ["dataset", "mixture_id_a", "mixture_id_b", "distance",
                                        "experiment_type"]
    with open(tmp_path / "mixtures.csv") as fh:
        assert next(csv.reader(fh)) == ["dataset", "mixture_id", "smiles_list"]
