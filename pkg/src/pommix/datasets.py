"""Dataset ingestion: GS-LF filtering, mixture corpora, splits and augmentation.

File formats (all CSV with a header row):

* molecules.csv   ``smiles,<label>,...`` with 0/1 labels
* mixtures.csv    ``dataset,mixture_id,smiles_list`` (``;``-separated SMILES)
* pairs.csv       ``dataset,mixture_id_a,mixture_id_b,distance,experiment_type``
* splits.json     ``{kind, seed, params, folds: [{train, val, test}]}``

Pair labels are perceptual *distances* throughout (0 = same percept).
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .canon import canonical_smiles, canonicalize
from .featurize import N_DESCRIPTORS, DescriptorTable
from .smiles import ParseError, molecular_weight, parse_smiles, smiles_elements

log = logging.getLogger(__name__)

INORGANIC = ("He", "Na", "Mg", "Al", "Si", "K", "Ca", "Ti", "V", "Cr", "Fe", "Co", "Cu", "Zn", "Bi")
FILTERS = ("inorganic", "duplicate", "charged", "multi_fragment", "molecular_weight", "no_carbon")
SOURCES = ("snitz", "ravia", "bushdid")
EXPERIMENT_TYPES = ("explicit", "triangle", "jaccard")
MW_RANGE = (20.0, 600.0)
MIN_LABEL_COUNT = 20
DEFAULT_THRESHOLDS = (5, 10, 15, 20, 30)


def packaged_odorants():
    """The bundled list of common odorant SMILES."""
    text = resources.files("pommix").joinpath("data/odorants.smi").read_text(encoding="utf-8")
    return [s for s in text.split() if s]


# ------------------------------------------------------------- molecules


@dataclass
class MonoDataset:
    """Molecules with binary odor labels."""

    smiles: list
    labels: np.ndarray
    label_names: list
    lines: list | None = None  # source line numbers, when read from a file

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(len(self.smiles), len(self.label_names))

    def __len__(self):
        return len(self.smiles)

    def label_sets(self):
        return {s: frozenset(np.flatnonzero(row).tolist()) for s, row in zip(self.smiles, self.labels)}


@dataclass
class FilterReport:
    input_rows: int = 0
    counts: dict = field(default_factory=lambda: {f: 0 for f in FILTERS})
    malformed: list = field(default_factory=list)  # (line, reason)
    dropped_labels: list = field(default_factory=list)
    unlabeled_molecules: int = 0
    final_molecules: int = 0
    final_labels: int = 0

    def to_json(self):
        return {"input_rows": self.input_rows, "removed": dict(self.counts),
                "malformed": [{"line": ln, "reason": r} for ln, r in self.malformed],
                "dropped_labels": list(self.dropped_labels),
                "unlabeled_molecules_removed": self.unlabeled_molecules,
                "final_molecules": self.final_molecules, "final_labels": self.final_labels}


def read_molecules_csv(path):
    """Read molecules.csv. Rows that cannot be read are returned, not dropped.

    Returns (MonoDataset, malformed) with malformed = [(line, reason)].
    """
    smiles, rows, lines, bad = [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "smiles":
            raise ValueError(f"{path}: header must start with 'smiles'")
        names = header[1:]
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                bad.append((line, f"expected {len(header)} fields, got {len(row)}"))
                continue
            if any(v.strip() not in ("0", "1") for v in row[1:]):
                bad.append((line, "labels must be 0 or 1"))
                continue
            smiles.append(row[0].strip())
            rows.append([int(v) for v in row[1:]])
            lines.append(line)
    labels = np.array(rows, dtype=np.uint8).reshape(len(rows), len(names))
    return MonoDataset(smiles, labels, names, lines), bad


def write_molecules_csv(data: MonoDataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles"] + list(data.label_names))
        for s, row in zip(data.smiles, data.labels):
            w.writerow([s] + [int(v) for v in row])


def _structural_filter(smiles, seen):
    """Name of the first filter that removes ``smiles``, or None.

    Returns (filter, canonical, graph).
    """
    if set(smiles_elements(smiles)) & set(INORGANIC):
        return "inorganic", None, None
    g = parse_smiles(smiles)
    can = canonicalize(g)
    if can in seen:
        return "duplicate", can, g
    if any(a.charge for a in g.atoms):
        return "charged", can, g
    if "." in smiles:
        return "multi_fragment", can, g
    mw = molecular_weight(g)
    if mw < MW_RANGE[0] or mw > MW_RANGE[1]:
        return "molecular_weight", can, g
    if not any(a.atomic_num == 6 for a in g.atoms):
        return "no_carbon", can, g
    return None, can, g


def filter_gslf(raw: MonoDataset, min_label_count=MIN_LABEL_COUNT, malformed=()):
    """Apply the ordered structural filters, then the label filters.

    Structural filters (first applicable one is credited): inorganic atoms,
    duplicate canonical SMILES, charges, multiple fragments, molecular weight
    outside [20, 600], no carbon. Then labels used by fewer than
    ``min_label_count`` molecules are dropped, followed by molecules left
    without labels; this repeats until nothing changes, so the pipeline is
    idempotent. Output SMILES are canonical.
    """
    report = FilterReport(input_rows=len(raw) + len(malformed), malformed=list(malformed))
    lines = raw.lines or list(range(1, len(raw) + 1))
    seen, keep_smiles, keep_rows = set(), [], []
    for smi, row, line in zip(raw.smiles, raw.labels, lines):
        try:
            reason, can, _ = _structural_filter(smi, seen)
        except ParseError as exc:
            report.malformed.append((line, f"unparseable SMILES {smi!r}: {exc}"))
            continue
        if reason:
            report.counts[reason] += 1
            continue
        seen.add(can)
        keep_smiles.append(can)
        keep_rows.append(row)
    labels = np.array(keep_rows, dtype=np.uint8).reshape(len(keep_rows), len(raw.label_names))
    names = list(raw.label_names)
    while True:
        counts = labels.sum(axis=0)
        keep_cols = counts >= min_label_count
        report.dropped_labels += [n for n, k in zip(names, keep_cols) if not k]
        names = [n for n, k in zip(names, keep_cols) if k]
        labels = labels[:, keep_cols]
        has = labels.sum(axis=1) > 0
        report.unlabeled_molecules += int((~has).sum())
        keep_smiles = [s for s, h in zip(keep_smiles, has) if h]
        labels = labels[has]
        if keep_cols.all() and has.all():
            break
    report.malformed.sort()
    report.final_molecules, report.final_labels = len(keep_smiles), len(names)
    return MonoDataset(keep_smiles, labels, names), report


# -------------------------------------------------------------- mixtures


@dataclass(frozen=True)
class Mixture:
    mixture_id: str
    source: str
    smiles: tuple  # sorted canonical SMILES, no repeats
    aliases: tuple = ()  # (dataset, original id) pairs merged into this record

    @property
    def size(self):
        return len(self.smiles)


@dataclass(frozen=True)
class MixturePair:
    a: int
    b: int
    distance: float
    experiment_type: str
    source: str
    is_identical: bool


@dataclass
class MixtureCorpus:
    mixtures: list
    pairs: list

    def molecules(self):
        """Sorted unique component SMILES."""
        return sorted({s for m in self.mixtures for s in m.smiles})

    def members(self, molecules=None):
        """Each mixture as row indices into ``molecules``."""
        index = {s: i for i, s in enumerate(molecules or self.molecules())}
        return [[index[s] for s in m.smiles] for m in self.mixtures]

    def pair_index(self, which=None):
        which = range(len(self.pairs)) if which is None else which
        return np.array([[self.pairs[i].a, self.pairs[i].b] for i in which], dtype=np.int64).reshape(-1, 2)

    def distances(self, which=None):
        which = range(len(self.pairs)) if which is None else which
        return np.array([self.pairs[i].distance for i in which], dtype=np.float64)

    def sources(self):
        return [p.source for p in self.pairs]

    def pair_sizes(self):
        return np.array([[self.mixtures[p.a].size, self.mixtures[p.b].size] for p in self.pairs])

    def identical_pairs(self):
        return [i for i, p in enumerate(self.pairs) if p.is_identical]

    def extended(self, other: "MixtureCorpus"):
        """Append ``other``; its mixtures are merged by composition.

        The pairs of ``self`` keep their indices.
        """
        mixtures = list(self.mixtures)
        by_key = {m.smiles: i for i, m in enumerate(mixtures)}
        remap = []
        for m in other.mixtures:
            if m.smiles not in by_key:
                by_key[m.smiles] = len(mixtures)
                mixtures.append(Mixture(f"mix{len(mixtures):04d}", m.source, m.smiles, m.aliases))
            remap.append(by_key[m.smiles])
        pairs = list(self.pairs) + [
            MixturePair(remap[p.a], remap[p.b], p.distance, p.experiment_type, p.source,
                        remap[p.a] == remap[p.b]) for p in other.pairs]
        return MixtureCorpus(mixtures, pairs)


def read_mixtures_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _require(reader.fieldnames, ["dataset", "mixture_id", "smiles_list"], path)
        for line, r in enumerate(reader, start=2):
            smiles = [s.strip() for s in (r["smiles_list"] or "").split(";") if s.strip()]
            rows.append({"dataset": r["dataset"].strip(), "mixture_id": r["mixture_id"].strip(),
                         "smiles": smiles, "line": line})
    return rows


def read_pairs_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _require(reader.fieldnames, ["dataset", "mixture_id_a", "mixture_id_b", "distance",
                                     "experiment_type"], path)
        for line, r in enumerate(reader, start=2):
            try:
                dist = float(r["distance"])
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{line}: non-numeric distance {r['distance']!r}") from None
            rows.append({"dataset": r["dataset"].strip(), "a": r["mixture_id_a"].strip(),
                         "b": r["mixture_id_b"].strip(), "distance": dist,
                         "experiment_type": r["experiment_type"].strip(), "line": line})
    return rows


def _require(fields, wanted, path):
    if fields is None or list(fields) != wanted:
        raise ValueError(f"{path}: header must be {','.join(wanted)}")


def compile_mixture_pairs(mixture_rows, pair_rows):
    """Build a MixtureCorpus from per-source mixture and pair rows.

    Mixtures are deduplicated by their set of canonical components, across
    sources. Pairs keep their order; a pair of the same composition is
    flagged ``is_identical``.
    """
    mixtures, by_key, by_ref, by_id = [], {}, {}, defaultdict(set)
    for r in mixture_rows:
        where = f"line {r.get('line', '?')}"
        if not r["smiles"]:
            raise ValueError(f"mixtures {where}: empty mixture {r['mixture_id']!r}")
        try:
            comps = [canonical_smiles(s) for s in r["smiles"]]
        except ParseError as exc:
            raise ValueError(f"mixtures {where}: {exc}") from None
        key = tuple(sorted(set(comps)))
        if len(key) < len(comps):
            log.warning("mixture %s/%s lists a molecule twice; kept once", r["dataset"], r["mixture_id"])
        ref = (r["dataset"], r["mixture_id"])
        if ref in by_ref:
            raise ValueError(f"mixtures {where}: duplicate mixture id {ref}")
        if key not in by_key:
            by_key[key] = len(mixtures)
            mixtures.append(Mixture(f"mix{len(mixtures):04d}", r["dataset"], key, (ref,)))
        else:
            i = by_key[key]
            m = mixtures[i]
            mixtures[i] = Mixture(m.mixture_id, m.source, m.smiles, m.aliases + (ref,))
        by_ref[ref] = by_key[key]
        by_id[r["mixture_id"]].add(by_key[key])

    def resolve(ds, mid):
        if (ds, mid) in by_ref:
            return by_ref[(ds, mid)]
        # compiled ids are global, so an unambiguous id resolves on its own
        hits = by_id.get(mid, ())
        return next(iter(hits)) if len(hits) == 1 else None

    pairs = []
    for r in pair_rows:
        where = f"pairs line {r.get('line', '?')}"
        ia, ib = (resolve(r["dataset"], r[k]) for k in ("a", "b"))
        if ia is None or ib is None:
            missing = r["a"] if ia is None else r["b"]
            raise ValueError(f"{where}: unknown mixture {r['dataset']}/{missing}")
        if not 0.0 <= r["distance"] <= 1.0:
            raise ValueError(f"{where}: distance {r['distance']} outside [0, 1]")
        if r["experiment_type"] not in EXPERIMENT_TYPES:
            raise ValueError(f"{where}: unknown experiment_type {r['experiment_type']!r}")
        pairs.append(MixturePair(ia, ib, float(r["distance"]), r["experiment_type"],
                                 r["dataset"], ia == ib))
    return MixtureCorpus(mixtures, pairs)


def load_corpus(data_dir):
    d = Path(data_dir)
    return compile_mixture_pairs(read_mixtures_csv(d / "mixtures.csv"), read_pairs_csv(d / "pairs.csv"))


def write_corpus(corpus: MixtureCorpus, data_dir):
    """Write the compiled corpus in the input schemas (re-reading is a no-op)."""
    d = Path(data_dir)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "mixtures.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "mixture_id", "smiles_list"])
        for m in corpus.mixtures:
            w.writerow([m.source, m.mixture_id, ";".join(m.smiles)])
    with open(d / "pairs.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "mixture_id_a", "mixture_id_b", "distance", "experiment_type"])
        for p in corpus.pairs:
            ma, mb = corpus.mixtures[p.a], corpus.mixtures[p.b]
            w.writerow([p.source, ma.mixture_id, mb.mixture_id, repr(p.distance), p.experiment_type])


def check_descriptor_coverage(corpus: MixtureCorpus, table: DescriptorTable):
    missing = [s for s in corpus.molecules() if s not in table]
    if missing:
        raise ValueError(f"{len(missing)} mixture component(s) missing from the descriptor "
                         f"table, e.g. {missing[0]!r}")


# ------------------------------------------------------------ converters


def aggregate_explicit_ratings(records, scale=(0.0, 1.0), similarity=False):
    """Average per-participant ratings into pair rows.

    ``records`` are (dataset, mixture_id_a, mixture_id_b, rating). Ratings
    are rescaled from ``scale`` to [0, 1]; with ``similarity`` set they are
    flipped so that 0 means identical.
    """
    lo, hi = scale
    acc = defaultdict(list)
    for ds, a, b, rating in records:
        acc[(ds, a, b)].append((float(rating) - lo) / (hi - lo))
    rows = []
    for (ds, a, b), vals in acc.items():
        d = float(np.mean(vals))
        rows.append({"dataset": ds, "a": a, "b": b, "distance": 1.0 - d if similarity else d,
                     "experiment_type": "explicit"})
    return rows


def aggregate_triangle_trials(records):
    """Fraction of correct odd-one-out identifications per pair.

    ``records`` are (dataset, mixture_id_a, mixture_id_b, correct). The
    fraction is used as the distance label without recalibration.
    """
    acc = defaultdict(list)
    for ds, a, b, correct in records:
        acc[(ds, a, b)].append(1.0 if correct else 0.0)
    return [{"dataset": ds, "a": a, "b": b, "distance": float(np.mean(v)),
             "experiment_type": "triangle"} for (ds, a, b), v in acc.items()]


def write_pair_rows(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["dataset", "mixture_id_a", "mixture_id_b", "distance", "experiment_type"])
        for r in rows:
            w.writerow([r["dataset"], r["a"], r["b"], repr(r["distance"]), r["experiment_type"]])


# ---------------------------------------------------------------- splits


@dataclass
class Fold:
    train: list
    val: list
    test: list

    def to_json(self):
        return {"train": [int(i) for i in self.train], "val": [int(i) for i in self.val],
                "test": [int(i) for i in self.test]}


@dataclass
class SplitSpec:
    kind: str
    seed: int
    params: dict
    folds: list

    def to_json(self):
        return {"kind": self.kind, "seed": self.seed, "params": self.params,
                "folds": [f.to_json() for f in self.folds]}

    @classmethod
    def from_json(cls, d):
        if d.get("kind") not in ("cv5", "lmo", "size_threshold"):
            raise ValueError(f"unknown split kind {d.get('kind')!r}")
        folds = [Fold(list(f["train"]), list(f["val"]), list(f["test"])) for f in d["folds"]]
        return cls(d["kind"], d["seed"], d.get("params", {}), folds)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))

    def validate(self, n_pairs):
        for k, f in enumerate(self.folds):
            sets = [set(f.train), set(f.val), set(f.test)]
            if sum(map(len, sets)) != len(f.train) + len(f.val) + len(f.test):
                raise ValueError(f"fold {k}: repeated index")
            if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
                raise ValueError(f"fold {k}: train/val/test overlap")
            if any(not 0 <= i < n_pairs for s in sets for i in s):
                raise ValueError(f"fold {k}: index out of range for {n_pairs} pairs")


def _carve_val(indices, rng, ratio=8):
    """Split off 1/ratio of ``indices`` (shuffled) as validation."""
    idx = list(indices)
    rng.shuffle(idx)
    n_val = int(round(len(idx) / ratio))
    return sorted(idx[n_val:]), sorted(idx[:n_val])


def _by_source(sources, which):
    groups = defaultdict(list)
    for i in which:
        groups[sources[i]].append(i)
    return [groups[s] for s in sorted(groups)]


def make_cv_splits(corpus: MixtureCorpus, k=5, seed=0):
    """Source-stratified k-fold splits with a 7:1 train/val split of the rest."""
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    sources = corpus.sources()
    test = [[] for _ in range(k)]
    always_train = []
    offset = 0
    for group in _by_source(sources, range(len(sources))):
        if len(group) < k:
            log.warning("source %r has %d pairs (< k=%d); all go to train",
                        sources[group[0]], len(group), k)
            always_train += group
            continue
        order = rng.permutation(group).tolist()
        for j, i in enumerate(order):
            test[(offset + j) % k].append(i)
        offset += len(order)
    folds = []
    for f in range(k):
        held = set(test[f])
        train, val = [], []
        for group in _by_source(sources, [i for i in range(len(sources)) if i not in held]):
            tr, va = _carve_val([i for i in group if i not in always_train], rng)
            train += tr + [i for i in group if i in always_train]
            val += va
        folds.append(Fold(sorted(train), sorted(val), sorted(test[f])))
    return SplitSpec("cv5", seed, {"k": k}, folds)


def _pairs_touching(corpus):
    touch = defaultdict(set)
    for i, p in enumerate(corpus.pairs):
        for s in set(corpus.mixtures[p.a].smiles) | set(corpus.mixtures[p.b].smiles):
            touch[s].add(i)
    return touch


def make_lmo_splits(corpus: MixtureCorpus, seed=0, target_test_frac=0.2, n_folds=5):
    """Leave-molecules-out folds: pairs touching a held-out molecule are test."""
    n = len(corpus.pairs)
    touch = _pairs_touching(corpus)
    molecules = sorted(touch)
    folds, held_sets = [], []
    for f in range(n_folds):
        rng = np.random.default_rng([seed, f])
        held, test = [], set()
        for j in rng.permutation(len(molecules)):
            if len(test) >= target_test_frac * n:
                break
            m = molecules[j]
            if len(touch[m]) > 0.5 * n:
                log.warning("molecule %s touches %d of %d pairs; not held out", m, len(touch[m]), n)
                continue
            held.append(m)
            test |= touch[m]
        train, val = _carve_val([i for i in range(n) if i not in test], rng)
        folds.append(Fold(train, val, sorted(test)))
        held_sets.append(sorted(held))
    return SplitSpec("lmo", seed, {"target_test_frac": target_test_frac,
                                   "held_out_molecules": held_sets}, folds)


def pair_size_statistic(n1, n2):
    """Geometric mean of the two mixture sizes."""
    return float(np.sqrt(n1 * n2))


def make_size_threshold_splits(corpus: MixtureCorpus, thresholds=DEFAULT_THRESHOLDS, seed=0):
    """One fold per threshold t: train on pairs with sqrt(n1 n2) < t, test on the rest."""
    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise ValueError("thresholds must be ascending")
    stat = np.array([pair_size_statistic(a, b) for a, b in corpus.pair_sizes()])
    folds, used = [], []
    for t in thresholds:
        below = np.flatnonzero(stat < t).tolist()
        above = np.flatnonzero(stat >= t).tolist()
        if not below or not above:
            log.warning("threshold %s leaves an empty train or test set; skipped", t)
            continue
        train, val = _carve_val(below, np.random.default_rng([seed, int(round(t * 1000))]))
        folds.append(Fold(train, val, above))
        used.append(t)
    return SplitSpec("size_threshold", seed, {"thresholds": thresholds, "used": used}, folds)


# ---------------------------------------------------------- augmentation


def jaccard_distance(a, b):
    a, b = set(a), set(b)
    if not a and not b:
        raise ValueError("Jaccard distance of two empty sets")
    return 1.0 - len(a & b) / len(a | b)


def augment_with_jaccard(mono: MonoDataset, corpus: MixtureCorpus | None = None, eligible=None):
    """Singleton-mixture pairs labelled by the Jaccard distance of label sets.

    The eligible molecules default to labelled molecules that occur in
    ``corpus`` (all labelled molecules if no corpus is given).
    """
    sets = {s: v for s, v in mono.label_sets().items() if v}
    if eligible is None:
        eligible = set(corpus.molecules()) if corpus is not None else set(sets)
    mols = sorted(s for s in eligible if s in sets)
    mixtures = [Mixture(f"jac{i:05d}", "gslf", (s,)) for i, s in enumerate(mols)]
    pairs = [MixturePair(i, j, jaccard_distance(sets[mols[i]], sets[mols[j]]), "jaccard", "gslf", False)
             for i, j in itertools.combinations(range(len(mols)), 2)]
    log.info("jaccard augmentation: %d molecules, %d pairs", len(mols), len(pairs))
    return MixtureCorpus(mixtures, pairs)


# ------------------------------------------------------- synthetic corpus


JUNK = ["[Na+].[Cl-]", "C[Si](C)(C)C", "OCC", "CC[N+](C)(C)C", "CCO.CC", "C", "N#N",
        "C" * 45, "C1CC", "CC(=O)[O-].[K+]"]


@dataclass
class SyntheticData:
    raw_molecules: MonoDataset
    descriptors: DescriptorTable
    mixture_rows: list
    pair_rows: list
    latent: dict  # canonical SMILES -> hidden odor vector

    def write(self, data_dir, descriptor_path=None):
        from .featurize import write_descriptors

        d = Path(data_dir)
        d.mkdir(parents=True, exist_ok=True)
        write_molecules_csv(self.raw_molecules, d / "molecules.csv")
        with open(d / "mixtures.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "mixture_id", "smiles_list"])
            for r in self.mixture_rows:
                w.writerow([r["dataset"], r["mixture_id"], ";".join(r["smiles"])])
        write_pair_rows(self.pair_rows, d / "pairs.csv")
        write_descriptors(self.descriptors, descriptor_path or d / "descriptors.csv")


def _graph_counts(g):
    """Small structural count vector used to derive the hidden odor space."""
    z = [a.atomic_num for a in g.atoms]
    return np.array([len(z), z.count(6), z.count(7), z.count(8), z.count(16),
                     sum(a.aromatic for a in g.atoms), sum(a.total_h for a in g.atoms),
                     sum(b.order == "double" for b in g.bonds), sum(b.order == "triple" for b in g.bonds),
                     len(g.bonds) - len(g.atoms) + 1, molecular_weight(g) / 50.0], dtype=np.float64)


def make_synthetic_data(seed=0, n_labels=10, n_mixtures=80, n_pairs=160, max_size=12,
                        latent_dim=6, noise=0.03, junk=True):
    """A small self-consistent corpus built on the bundled odorants.

    Each molecule gets a hidden odor vector computed from its structure.
    Labels threshold random projections of it, descriptors are noisy
    projections, and mixture distances come from the cosine distance of
    mean hidden vectors, plus noise. Intended for tests and demos only.
    """
    rng = np.random.default_rng(seed)
    mols = sorted({canonical_smiles(s) for s in packaged_odorants()})
    graphs = [parse_smiles(s) for s in mols]
    counts = np.stack([_graph_counts(g) for g in graphs])
    counts = (counts - counts.mean(0)) / (counts.std(0) + 1e-9)
    proj = rng.normal(size=(counts.shape[1], latent_dim))
    latent = np.tanh(counts @ proj / np.sqrt(counts.shape[1])) + 0.3 * rng.normal(size=(len(mols), latent_dim))
    latent += 1.0  # shared positive offset: large mixtures converge, as real ones do

    w = rng.normal(size=(latent_dim, n_labels))
    scores = latent @ w
    cut = np.quantile(scores, 0.7, axis=0)
    labels = (scores > cut).astype(np.uint8)
    empty = labels.sum(1) == 0
    labels[empty, np.argmax(scores[empty], axis=1)] = 1
    names = [f"odor_{j:02d}" for j in range(n_labels)]

    desc_proj = rng.normal(size=(latent_dim + counts.shape[1], N_DESCRIPTORS))
    feats = np.concatenate([latent, counts], axis=1)
    desc = feats @ desc_proj + 0.1 * rng.normal(size=(len(mols), N_DESCRIPTORS))
    table = DescriptorTable({s: desc[i] for i, s in enumerate(mols)})

    smiles = list(mols)
    label_rows = labels
    if junk:
        smiles = smiles + JUNK
        label_rows = np.concatenate([labels, rng.integers(0, 2, (len(JUNK), n_labels))]).astype(np.uint8)
    raw = MonoDataset(smiles, label_rows, names)

    sources = list(SOURCES)
    mixture_rows, comps = [], []
    for i in range(n_mixtures):
        size = 1 if i < n_mixtures // 10 else int(rng.integers(2, max_size + 1))
        members = sorted(rng.choice(len(mols), size, replace=False).tolist())
        comps.append(members)
        mixture_rows.append({"dataset": sources[i % 3], "mixture_id": f"{i}",
                             "smiles": [mols[j] for j in members]})
    pair_rows = []
    for k in range(n_pairs):
        ds = k % 3
        own = [i for i in range(n_mixtures) if i % 3 == ds]
        if k % 25 == 0:
            a = b = int(rng.choice(own))
        else:
            a, b = (int(x) for x in rng.choice(own, 2, replace=False))
        ma, mb = latent[comps[a]].mean(0), latent[comps[b]].mean(0)
        cos = ma @ mb / (np.linalg.norm(ma) * np.linalg.norm(mb))
        d = float(np.clip(0.15 + 2.5 * (1 - cos) + noise * rng.normal(), 0, 1))
        pair_rows.append({"dataset": sources[ds], "a": str(a), "b": str(b), "distance": round(d, 6),
                          "experiment_type": "triangle" if sources[ds] == "bushdid" else "explicit"})
    return SyntheticData(raw, table, mixture_rows, pair_rows, {s: latent[i] for i, s in enumerate(mols)})
