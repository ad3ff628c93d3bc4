"""Numeric graph tensors: one-hot atom/bond features and normalized descriptors."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .canon import canonicalize
from .smiles import MolecularGraph, lone_pairs, parse_smiles

ATOMIC_NUMS = tuple(range(1, 55))
DEGREES = (0, 1, 2, 3, 4, 5)
CHARGES = (-2, -1, 0, 1, 2)
CHIRALITY = ("unspecified", "CW", "CCW", "other")
H_COUNTS = tuple(range(9))
HYBRIDIZATION = ("sp", "sp2", "sp3", "sp3d", "sp3d2")
BOND_TYPES = ("single", "double", "triple", "aromatic")
BOND_STEREO = ("none", "Z", "E", "cis", "trans", "any")

# (name, vocabulary size) for each block; categorical blocks carry a
# trailing UNK bit, flags are a single bit.
NODE_BLOCKS = (
    ("atomic_num", len(ATOMIC_NUMS) + 1),
    ("degree", len(DEGREES) + 1),
    ("charge", len(CHARGES) + 1),
    ("chirality", len(CHIRALITY) + 1),
    ("num_h", len(H_COUNTS) + 1),
    ("hybridization", len(HYBRIDIZATION) + 1),
    ("aromatic", 1),
)
EDGE_BLOCKS = (
    ("bond_type", len(BOND_TYPES) + 1),
    ("conjugated", 1),
    ("in_ring", 1),
    ("stereo", len(BOND_STEREO) + 1),
)
NODE_DIM = sum(n for _, n in NODE_BLOCKS)
EDGE_DIM = sum(n for _, n in EDGE_BLOCKS)
N_DESCRIPTORS = 200

assert NODE_DIM == 90, NODE_DIM
assert EDGE_DIM == 14, EDGE_DIM


def block_slices(blocks):
    """Map block name to its column slice."""
    out, start = {}, 0
    for name, n in blocks:
        out[name] = slice(start, start + n)
        start += n
    return out


NODE_SLICES = block_slices(NODE_BLOCKS)
EDGE_SLICES = block_slices(EDGE_BLOCKS)


def _one_hot(value, vocab):
    v = np.zeros(len(vocab) + 1, dtype=np.float32)
    v[vocab.index(value) if value in vocab else len(vocab)] = 1.0
    return v


def hybridization(g, idx):
    """VSEPR steric-number hybridization.

    Aromatic atoms and lone-pair atoms on a conjugated bond are sp2, as their
    lone pair sits in a p orbital. Returns None when undetermined.
    """
    atom = g.atoms[idx]
    if atom.aromatic:
        return "sp2"
    lp = lone_pairs(g, idx)
    if lp and any(g.bonds[k].conjugated for _, k in g.neighbors(idx)):
        return "sp2"
    steric = g.degree(idx) + atom.total_h + lp
    return {2: "sp", 3: "sp2", 4: "sp3", 5: "sp3d", 6: "sp3d2"}.get(steric)


def node_feature_vector(g: MolecularGraph, idx: int) -> np.ndarray:
    atom = g.atoms[idx]
    parts = [
        _one_hot(atom.atomic_num, ATOMIC_NUMS),
        _one_hot(g.degree(idx), DEGREES),
        _one_hot(atom.charge, CHARGES),
        _one_hot(atom.chiral, CHIRALITY),
        _one_hot(atom.total_h, H_COUNTS),
        _one_hot(hybridization(g, idx), HYBRIDIZATION),
        np.array([float(atom.aromatic)], dtype=np.float32),
    ]
    return np.concatenate(parts)


def edge_feature_vector(g: MolecularGraph, k: int) -> np.ndarray:
    b = g.bonds[k]
    return np.concatenate([
        _one_hot(b.order, BOND_TYPES),
        np.array([float(b.conjugated), float(b.ring)], dtype=np.float32),
        _one_hot(b.stereo, BOND_STEREO),
    ])


# ----------------------------------------------------------- descriptors


def _cdf_breakpoints(col):
    """Sorted distinct values and their midrank positions r/(n+1)."""
    xs, inverse, counts = np.unique(col, return_inverse=True, return_counts=True)
    n = len(col)
    upper = np.cumsum(counts)
    midrank = upper - (counts - 1) / 2.0
    return xs, midrank / (n + 1)


@dataclass(frozen=True)
class DescriptorTable:
    """Raw descriptor rows keyed by canonical SMILES, plus optional CDF stats."""

    raw: dict
    stats: tuple | None = field(default=None, repr=False)

    def __contains__(self, smiles):
        return smiles in self.raw

    def row(self, smiles):
        try:
            return self.raw[smiles]
        except KeyError:
            raise KeyError(f"no descriptor row for {smiles!r}") from None

    def transform(self, values):
        """Apply the fitted CDF map to raw values [..., D]."""
        if self.stats is None:
            raise ValueError("descriptor table is not normalized")
        values = np.asarray(values, dtype=np.float64)
        out = np.empty(values.shape, dtype=np.float64)
        for j, (xs, ps) in enumerate(self.stats):
            if len(xs) == 1:
                out[..., j] = 0.5
            else:
                out[..., j] = np.interp(values[..., j], xs, ps)
        return out

    def normalized(self, smiles):
        return self.transform(self.row(smiles)).astype(np.float32)

    def stats_to_json(self):
        return [{"x": xs.tolist(), "p": ps.tolist()} for xs, ps in self.stats]

    def with_stats_json(self, blob):
        stats = tuple((np.asarray(d["x"], dtype=np.float64), np.asarray(d["p"], dtype=np.float64))
                      for d in blob)
        return DescriptorTable(self.raw, stats)


def normalize_descriptors(table: DescriptorTable, fit_set) -> DescriptorTable:
    """Fit a per-feature rank CDF on ``fit_set`` and return a new table."""
    fit_set = list(fit_set)
    if not fit_set:
        raise ValueError("empty fit set")
    mat = np.stack([table.row(s) for s in fit_set]).astype(np.float64)
    stats = tuple(_cdf_breakpoints(mat[:, j]) for j in range(mat.shape[1]))
    return DescriptorTable(table.raw, stats)


def load_descriptors(path, canonical=True) -> DescriptorTable:
    """Read ``smiles,d000,...,d199``; keys are re-canonicalized on load."""
    raw = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["smiles"] + [f"d{j:03d}" for j in range(N_DESCRIPTORS)]
        if header != expected:
            raise ValueError(f"{path}: header must be smiles,d000,...,d{N_DESCRIPTORS - 1:03d}")
        for line, row in enumerate(reader, start=2):
            if len(row) != N_DESCRIPTORS + 1 or any(v.strip() == "" for v in row):
                raise ValueError(f"{path}:{line}: missing values")
            try:
                vec = np.array([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError:
                raise ValueError(f"{path}:{line}: non-numeric descriptor") from None
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"{path}:{line}: non-finite descriptor")
            key = canonicalize(row[0]) if canonical else row[0]
            raw[key] = vec
    return DescriptorTable(raw)


def write_descriptors(table: DescriptorTable, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles"] + [f"d{j:03d}" for j in range(N_DESCRIPTORS)])
        for smi, vec in table.raw.items():
            w.writerow([smi] + [repr(float(v)) for v in vec])


# ---------------------------------------------------------- graph tensors


@dataclass
class GraphTensors:
    """One molecule as arrays.

    ``edge_index[k] = (r_k, s_k)``: receiver then sender. Each bond appears
    twice, once per direction, at rows 2b and 2b+1.
    """

    node_features: np.ndarray
    edge_features: np.ndarray
    edge_index: np.ndarray
    global_features: np.ndarray
    smiles: str = ""

    @property
    def num_nodes(self):
        return self.node_features.shape[0]

    @property
    def num_edges(self):
        return self.edge_features.shape[0]


def build_graph_tensors(g, table: DescriptorTable, key=None) -> GraphTensors:
    """Featurize a parsed molecule; ``key`` defaults to its canonical SMILES."""
    if isinstance(g, str):
        g = parse_smiles(g)
    key = canonicalize(g) if key is None else key
    glob = table.normalized(key)
    nodes = np.stack([node_feature_vector(g, i) for i in range(g.num_atoms)])
    edges = np.zeros((2 * g.num_bonds, EDGE_DIM), dtype=np.float32)
    index = np.zeros((2 * g.num_bonds, 2), dtype=np.int64)
    for k, b in enumerate(g.bonds):
        f = edge_feature_vector(g, k)
        edges[2 * k] = edges[2 * k + 1] = f
        index[2 * k] = (b.end, b.begin)
        index[2 * k + 1] = (b.begin, b.end)
    return GraphTensors(nodes, edges, index, glob, key)


@dataclass
class GraphBatch:
    """Several graphs stacked into one disjoint graph with padding indexes.

    ``slots`` lists, for every node, the rows of the attention value table it
    attends over: itself, its graph's global vertex, then incoming edges.
    The value table is laid out as [nodes | globals | edges]. ``node_pad``
    holds each graph's node rows padded to the largest graph.
    """

    node_features: np.ndarray
    edge_features: np.ndarray
    receivers: np.ndarray
    senders: np.ndarray
    node_graph: np.ndarray
    global_features: np.ndarray
    slots: np.ndarray
    slot_mask: np.ndarray
    node_pad: np.ndarray
    node_pad_mask: np.ndarray
    smiles: list

    @property
    def num_graphs(self):
        return self.global_features.shape[0]

    @property
    def num_nodes(self):
        return self.node_features.shape[0]


def collate(graphs) -> GraphBatch:
    graphs = list(graphs)
    if not graphs:
        raise ValueError("empty batch")
    for gt in graphs:
        if gt.num_nodes == 0:
            raise ValueError(f"empty graph {gt.smiles!r}")
        if gt.node_features.shape[1] != NODE_DIM or gt.edge_features.shape[1] != EDGE_DIM:
            raise ValueError("feature dimension mismatch")
    n_off = np.cumsum([0] + [gt.num_nodes for gt in graphs])
    nodes = np.concatenate([gt.node_features for gt in graphs])
    edges = np.concatenate([gt.edge_features for gt in graphs]).reshape(-1, EDGE_DIM)
    index = np.concatenate([gt.edge_index + n_off[i] for i, gt in enumerate(graphs)]).reshape(-1, 2)
    receivers, senders = index[:, 0], index[:, 1]
    node_graph = np.repeat(np.arange(len(graphs)), [gt.num_nodes for gt in graphs])
    n, b = len(nodes), len(graphs)

    incoming = [[] for _ in range(n)]
    for k, r in enumerate(receivers):
        incoming[r].append(k)
    width = 2 + max((len(x) for x in incoming), default=0)
    slots = np.zeros((n, width), dtype=np.int64)
    mask = np.zeros((n, width), dtype=np.float32)
    for i in range(n):
        row = [i, n + node_graph[i]] + [n + b + k for k in incoming[i]]
        slots[i, :len(row)] = row
        mask[i, :len(row)] = 1.0

    m = max(gt.num_nodes for gt in graphs)
    node_pad = np.zeros((b, m), dtype=np.int64)
    pad_mask = np.zeros((b, m), dtype=np.float32)
    for i, gt in enumerate(graphs):
        node_pad[i, :gt.num_nodes] = np.arange(n_off[i], n_off[i + 1])
        pad_mask[i, :gt.num_nodes] = 1.0
    return GraphBatch(nodes, edges, receivers, senders, node_graph,
                      np.stack([gt.global_features for gt in graphs]),
                      slots, mask, node_pad, pad_mask, [gt.smiles for gt in graphs])
