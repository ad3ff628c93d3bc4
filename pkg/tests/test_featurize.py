import numpy as np
import pytest

from pommix.canon import canonicalize, permute_atoms
from pommix.featurize import (
    ATOMIC_NUMS, DEGREES, EDGE_BLOCKS, EDGE_DIM, EDGE_SLICES, H_COUNTS, HYBRIDIZATION,
    NODE_BLOCKS, NODE_DIM, NODE_SLICES, BOND_STEREO, BOND_TYPES, DescriptorTable,
    build_graph_tensors, collate, edge_feature_vector, load_descriptors,
    node_feature_vector, normalize_descriptors, write_descriptors,
)
from pommix.smiles import Atom, MolecularGraph, parse_smiles


def _table(smiles, seed=0):
    rng = np.random.default_rng(seed)
    raw = {canonicalize(s): rng.normal(size=200) for s in smiles}
    return normalize_descriptors(DescriptorTable(raw), raw)


def _one_hot_ok(row, blocks, slices):
    for name, n in blocks:
        if n > 1:
            assert row[slices[name]].sum() == 1, name


def test_dims():
    assert NODE_DIM == 90
    assert EDGE_DIM == 14


def test_methane_node():
    g = parse_smiles("C")
    v = node_feature_vector(g, 0)
    assert v[NODE_SLICES["atomic_num"]][ATOMIC_NUMS.index(6)] == 1
    assert v[NODE_SLICES["degree"]][DEGREES.index(0)] == 1
    assert v[NODE_SLICES["num_h"]][H_COUNTS.index(4)] == 1
    assert v[NODE_SLICES["hybridization"]][HYBRIDIZATION.index("sp3")] == 1
    assert v[NODE_SLICES["aromatic"]][0] == 0


def test_benzene_node_and_edge():
    g = parse_smiles("c1ccccc1")
    v = node_feature_vector(g, 0)
    assert v[NODE_SLICES["aromatic"]][0] == 1
    assert v[NODE_SLICES["hybridization"]][HYBRIDIZATION.index("sp2")] == 1
    e = edge_feature_vector(g, 0)
    assert e[EDGE_SLICES["bond_type"]][BOND_TYPES.index("aromatic")] == 1
    assert e[EDGE_SLICES["in_ring"]][0] == 1
    assert e[EDGE_SLICES["conjugated"]][0] == 1


def test_ethane_edge():
    e = edge_feature_vector(parse_smiles("CC"), 0)
    assert e[EDGE_SLICES["bond_type"]][BOND_TYPES.index("single")] == 1
    assert e[EDGE_SLICES["in_ring"]][0] == 0
    assert e[EDGE_SLICES["conjugated"]][0] == 0
    assert e[EDGE_SLICES["stereo"]][BOND_STEREO.index("none")] == 1


def test_trans_butene_edge():
    g = parse_smiles("C/C=C/C")
    e = edge_feature_vector(g, 1)
    assert e[EDGE_SLICES["stereo"]][BOND_STEREO.index("E")] == 1


def test_unknown_element_goes_to_unk():
    g = MolecularGraph([Atom("Xx", 92)], [], 1)
    v = node_feature_vector(g, 0)
    assert v[NODE_SLICES["atomic_num"]][-1] == 1
    assert v[NODE_SLICES["atomic_num"]][:-1].sum() == 0


def test_one_hot_blocks(odorants):
    for s in odorants:
        g = parse_smiles(s)
        for i in range(g.num_atoms):
            _one_hot_ok(node_feature_vector(g, i), NODE_BLOCKS, NODE_SLICES)
        for k in range(g.num_bonds):
            _one_hot_ok(edge_feature_vector(g, k), EDGE_BLOCKS, EDGE_SLICES)


def test_constant_feature_is_half():
    raw = {s: np.full(200, 3.0) for s in ["C", "CC", "CCC"]}
    t = normalize_descriptors(DescriptorTable(raw), raw)
    assert np.all(t.normalized("CC") == 0.5)


def test_minimum_maps_to_first_rank():
    raw = {s: np.arange(200.0) * (i + 1) for i, s in enumerate(["C", "CC", "CCC", "CCCC"])}
    t = normalize_descriptors(DescriptorTable(raw), raw)
    np.testing.assert_allclose(t.normalized("C")[1:], 1 / 5, rtol=1e-6)
    np.testing.assert_allclose(t.normalized("CCCC")[1:], 4 / 5, rtol=1e-6)


def _rank_oracle(fit, v):
    """Midrank CDF by direct counting, with linear interpolation between
    neighbouring fit values and clamping outside their range."""
    n = len(fit)

    def pos(x):
        less = sum(1 for f in fit if f < x)
        equal = sum(1 for f in fit if f == x)
        return (less + (equal + 1) / 2) / (n + 1)

    vals = sorted(set(fit))
    if len(vals) == 1:
        return 0.5
    if v <= vals[0]:
        return pos(vals[0])
    if v >= vals[-1]:
        return pos(vals[-1])
    for lo, hi in zip(vals, vals[1:]):
        if lo <= v <= hi:
            w = (v - lo) / (hi - lo)
            return (1 - w) * pos(lo) + w * pos(hi)


def test_cdf_matches_rank_oracle():
    rng = np.random.default_rng(3)
    keys = ["C", "CC", "CCC", "CCCC", "CCCCC"]
    raw = {k: rng.integers(0, 4, size=200).astype(float) for k in keys}
    raw["O"] = rng.normal(size=200) * 3
    t = normalize_descriptors(DescriptorTable(raw), keys)
    for k in raw:
        got = t.normalized(k)
        for j in range(200):
            want = _rank_oracle([raw[f][j] for f in keys], raw[k][j])
            assert abs(got[j] - want) < 1e-6


def test_cdf_monotone_and_idempotent():
    rng = np.random.default_rng(5)
    keys = [f"C{'C' * i}" for i in range(30)]
    raw = {k: rng.normal(size=200) for k in keys}
    t = normalize_descriptors(DescriptorTable(raw), keys)
    grid = np.sort(rng.normal(size=(50, 1)) * 2, axis=0) * np.ones((1, 200))
    out = t.transform(grid)
    assert np.all(np.diff(out, axis=0) >= 0)
    assert out.min() >= 0 and out.max() <= 1
    once = {k: t.transform(v) for k, v in raw.items()}
    twice = normalize_descriptors(DescriptorTable(once), keys)
    for k in keys:
        np.testing.assert_allclose(twice.transform(once[k]), once[k], atol=1e-12)


def test_missing_molecule_named():
    t = DescriptorTable({"C": np.zeros(200)})
    with pytest.raises(KeyError, match="CCO"):
        normalize_descriptors(t, ["C", "CCO"])


def test_descriptor_csv_round_trip(tmp_path):
    t = DescriptorTable({canonicalize("OCC"): np.linspace(0, 1, 200)})
    path = tmp_path / "d.csv"
    write_descriptors(t, path)
    back = load_descriptors(path)
    np.testing.assert_array_equal(back.row("CCO"), t.row("CCO"))
    path.write_text("smiles,d000\nC,1\n")
    with pytest.raises(ValueError):
        load_descriptors(path)


def test_ethanol_tensors():
    gt = build_graph_tensors(parse_smiles("CCO"), _table(["CCO"]))
    assert gt.node_features.shape == (3, NODE_DIM)
    assert gt.edge_features.shape == (4, EDGE_DIM)
    assert gt.global_features.shape == (200,)
    assert np.all(gt.edge_index[:, 0] != gt.edge_index[:, 1])
    pairs = {tuple(p) for p in gt.edge_index.tolist()}
    assert pairs == {(0, 1), (1, 0), (1, 2), (2, 1)}
    assert 0 <= gt.global_features.min() and gt.global_features.max() <= 1


def test_single_atom_tensors():
    gt = build_graph_tensors(parse_smiles("C"), _table(["C"]))
    assert gt.edge_features.shape == (0, EDGE_DIM)
    assert gt.edge_index.shape == (0, 2)


def test_permuted_atoms():
    g = parse_smiles("CC(=O)Oc1ccccc1")
    t = _table(["CC(=O)Oc1ccccc1"])
    perm = np.random.default_rng(1).permutation(g.num_atoms)
    a = build_graph_tensors(g, t)
    b = build_graph_tensors(permute_atoms(g, perm.tolist()), t)
    np.testing.assert_array_equal(b.node_features[perm], a.node_features)
    rows_a = sorted(map(tuple, a.edge_features.tolist()))
    rows_b = sorted(map(tuple, b.edge_features.tolist()))
    assert rows_a == rows_b


def test_collate_slots():
    t = _table(["CCO", "C"])
    batch = collate([build_graph_tensors(s, t) for s in ["CCO", "C"]])
    n, b = batch.num_nodes, batch.num_graphs
    assert (n, b) == (4, 2)
    # Middle carbon of ethanol: self, global 0, two incoming edges.
    assert batch.slot_mask[1].sum() == 4
    assert batch.slots[1, 0] == 1 and batch.slots[1, 1] == n
    # Lone methane: self and its own global only.
    assert batch.slot_mask[3].sum() == 2
    assert batch.slots[3, 1] == n + 1
    assert batch.node_pad_mask.tolist() == [[1, 1, 1], [1, 0, 0]]
