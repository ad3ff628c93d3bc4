"""Three-stage fitting: POM pretraining, CheMix on frozen embeddings, joint fine-tuning.

Every stage evaluates its monitor on the initial parameters (epoch 0) and
after each epoch, keeps the best snapshot and restores it at the end.
Random streams are derived from the plan seed by purpose, so the chemix
dropout stream is the same whether or not the POM is being trained.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .chemix import ChemixConfig, attach_hooks, chemix_forward, init_chemix, loss_fn
from .engine import Tensor, adam_step, backward, bce_with_logits, load_checkpoint, save_checkpoint
from .featurize import build_graph_tensors, collate
from .layers import EVAL, Ctx
from .metrics import MetricReport, macro_auroc, pearson, regression_report, two_class_labels
from .pom import PomConfig, embed_molecules, glm_logits, glm_predict, init_pom, pom_forward

log = logging.getLogger(__name__)

STAGES = ("pretrain_pom", "train_chemix", "finetune_pommix")
MONITORS = {"pretrain_pom": "auroc", "train_chemix": "pearson", "finetune_pommix": "pearson"}
STAGE_DEFAULTS = {
    "pretrain_pom": dict(max_epochs=500, patience=20, lr_groups={"pom": 1e-4, "glm": 1e-4}, batch_size=64),
    "train_chemix": dict(max_epochs=2000, patience=100, lr_groups={"chemix": 8e-5}, batch_size=None),
    "finetune_pommix": dict(max_epochs=2000, patience=100, lr_groups={"pom": 1e-5, "chemix": 8e-5},
                            batch_size=None),
}
# independent random streams, keyed by purpose
STREAMS = {"split": 0, "shuffle": 1, "pom_dropout": 2, "chemix_dropout": 3}


def stream(seed, name):
    return np.random.default_rng([int(seed), STREAMS[name]])


@dataclass
class TrainPlan:
    stage: str
    max_epochs: int
    patience: int
    monitor: str
    lr_groups: dict
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.monitor != MONITORS[self.stage]:
            raise ValueError(f"stage {self.stage} monitors {MONITORS[self.stage]}, not {self.monitor}")
        if self.max_epochs < 0 or self.patience < 1:
            raise ValueError("max_epochs must be >= 0 and patience >= 1")
        if self.max_epochs and self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")

    @classmethod
    def for_stage(cls, stage, **overrides):
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        d = {**STAGE_DEFAULTS[stage], "monitor": MONITORS[stage]}
        d["lr_groups"] = dict(d["lr_groups"])
        d.update({k: v for k, v in overrides.items() if v is not None})
        return cls(stage=stage, **d)

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class FitResult:
    best_epoch: int
    best_monitor: float
    history: list = field(default_factory=list)  # (epoch, train_loss, monitor)

    def to_json(self):
        return {"best_epoch": self.best_epoch, "best_monitor": _finite(self.best_monitor),
                "epochs_run": len(self.history) - 1}


def _finite(x):
    return None if x is None or not np.isfinite(x) else float(x)


def write_history_csv(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "monitor"])
        for epoch, loss, mon in history:
            w.writerow([epoch, "" if loss is None else repr(float(loss)),
                        "" if not np.isfinite(mon) else repr(float(mon))])


def loss_window_fraction(losses, window=10):
    """Fraction of consecutive ``window``-step blocks whose loss did not rise."""
    losses = np.asarray(losses, dtype=np.float64)
    starts = range(0, len(losses) - window, window)
    ok = [losses[s + window] <= losses[s] for s in starts]
    return float(np.mean(ok)) if ok else 1.0


class EarlyStopping:
    """Tracks the best monitor value and a snapshot of the given stores."""

    def __init__(self, store, patience):
        self.store, self.patience = store, patience
        self.best, self.best_epoch, self.snap = -np.inf, 0, store.snapshot()

    def update(self, epoch, value):
        """Record ``value``; returns True when training should stop."""
        value = -np.inf if value is None or not np.isfinite(value) else value
        if value > self.best or epoch == 0:
            self.best, self.best_epoch, self.snap = value, epoch, self.store.snapshot()
        return epoch - self.best_epoch >= self.patience

    def restore(self):
        self.store.restore(self.snap)


def _run(plan, store, step, monitor, log_path=None):
    """Shared epoch loop. ``step()`` trains one epoch and returns its loss."""
    stopper = EarlyStopping(store, plan.patience)
    history = [(0, None, monitor())]
    stopper.update(0, history[0][2])
    for epoch in range(1, plan.max_epochs + 1):
        loss = step()
        mon = monitor()
        history.append((epoch, loss, mon))
        if stopper.update(epoch, mon):
            break
    stopper.restore()
    if log_path:
        write_history_csv(history, log_path)
    return FitResult(stopper.best_epoch, stopper.best, history)


# ------------------------------------------------------------ pretraining


@dataclass
class PretrainResult:
    store: object
    config: PomConfig
    fit: FitResult
    train: np.ndarray
    val: np.ndarray
    label_columns: np.ndarray


def split_train_val(n, seed, val_frac=0.2):
    order = stream(seed, "split").permutation(n)
    n_val = int(round(val_frac * n))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def pretrain_pom(mono, table, config: PomConfig, plan: TrainPlan, store=None, log_path=None,
                 val_frac=0.2, graphs=None):
    """Fit POM + GLM with BCE on a random train/val split, monitoring macro-AUROC."""
    if plan.stage != "pretrain_pom":
        raise ValueError("plan is not a pretrain_pom plan")
    labels = np.asarray(mono.labels, dtype=np.float64)
    graphs = graphs or [build_graph_tensors(s, table, key=s) for s in mono.smiles]
    train, val = split_train_val(len(graphs), plan.seed, val_frac)
    cols = two_class_labels(labels[val])
    if len(cols) < labels.shape[1]:
        log.warning("%d label(s) have a single class in the validation split; excluded from AUROC",
                    labels.shape[1] - len(cols))
    if len(cols) == 0:
        raise ValueError("no label has both classes in the validation split")
    store = init_pom(config, plan.seed, labels.shape[1]) if store is None else store
    shuffle, drop = stream(plan.seed, "shuffle"), stream(plan.seed, "pom_dropout")
    ctx = Ctx(True, drop)
    bs = plan.batch_size or len(train)
    val_graphs = [graphs[i] for i in val]

    def step():
        order = shuffle.permutation(train)
        losses = []
        for s in range(0, len(order), bs):
            idx = order[s:s + bs]
            store.zero_grad()
            emb = pom_forward(store, collate([graphs[i] for i in idx]), config, ctx)
            loss = bce_with_logits(glm_logits(store, emb), labels[idx])
            backward(loss)
            adam_step(store, plan.lr_groups)
            losses.append(loss.item())
        return float(np.mean(losses))

    def monitor():
        probs = glm_predict(store, embed_molecules(store, config, val_graphs))
        return macro_auroc(labels[val], probs, cols, warn=False)

    fit = _run(plan, store, step, monitor, log_path)
    return PretrainResult(store, config, fit, train, val, cols)


def pom_auroc(store, config, graphs, labels):
    probs = glm_predict(store, embed_molecules(store, config, graphs))
    return macro_auroc(labels, probs)


# ---------------------------------------------------------- mixture data


@dataclass
class MixtureData:
    """A corpus resolved to molecule graphs and index arrays."""

    graphs: list
    members: list
    pairs: np.ndarray
    targets: np.ndarray

    @classmethod
    def from_corpus(cls, corpus, table):
        mols = corpus.molecules()
        graphs = [build_graph_tensors(s, table, key=s) for s in mols]
        return cls(graphs, corpus.members(mols), corpus.pair_index(), corpus.distances())

    def view(self, idx):
        """Pairs ``idx`` with only the mixtures and molecules they use, re-indexed."""
        idx = np.asarray(idx, dtype=np.int64)
        pairs = self.pairs[idx]
        used = np.unique(pairs)
        mix_pos = {int(m): k for k, m in enumerate(used)}
        mols = sorted({i for m in used for i in self.members[m]})
        mol_pos = {i: k for k, i in enumerate(mols)}
        members = [[mol_pos[i] for i in self.members[m]] for m in used]
        remapped = np.array([[mix_pos[int(a)], mix_pos[int(b)]] for a, b in pairs], np.int64).reshape(-1, 2)
        return View(np.array(mols, np.int64), members, remapped, self.targets[idx])


@dataclass
class View:
    molecules: np.ndarray  # rows of MixtureData.graphs
    members: list
    pairs: np.ndarray
    targets: np.ndarray


class FrozenEmbeddings:
    """Molecule embeddings computed once with the POM in eval mode."""

    def __init__(self, pom_store, pom_config, graphs):
        self.table = embed_molecules(pom_store, pom_config, graphs).data

    def __call__(self, view, train):
        return Tensor(self.table[view.molecules])


class LiveEmbeddings:
    """Molecule embeddings recomputed through the POM, so gradients reach it."""

    def __init__(self, pom_store, pom_config, graphs, rng):
        self.store, self.config, self.graphs = pom_store, pom_config, graphs
        self.ctx = Ctx(True, rng)

    def __call__(self, view, train):
        graphs = [self.graphs[i] for i in view.molecules]
        return embed_molecules(self.store, self.config, graphs, self.ctx if train else EVAL)


def predict_view(chem_store, chem_config, embed, view):
    mol = embed(view, False)
    return chemix_forward(chem_store, chem_config, mol, view.members, view.pairs).data.astype(np.float64)


def _safe_pearson(y, yhat):
    try:
        return pearson(y, yhat)
    except ValueError:
        return -np.inf


def _fit_mixtures(store, chem_store, chem_config, embed, train, val, plan, log_path=None):
    rng = stream(plan.seed, "chemix_dropout")
    ctx = Ctx(True, rng)
    pairs, targets = train.pairs, train.targets
    if chem_config.head_kind == "concat_linear":  # pair-order augmentation
        pairs = np.concatenate([pairs, pairs[:, ::-1]])
        targets = np.concatenate([targets, targets])
    target_t = Tensor(targets)

    def step():
        store.zero_grad()
        mol = embed(train, True)
        pred = chemix_forward(chem_store, chem_config, mol, train.members, pairs, ctx)
        loss = loss_fn(chem_config, pred, target_t)
        backward(loss)
        adam_step(store, plan.lr_groups)
        return loss.item()

    def monitor():
        return _safe_pearson(val.targets, predict_view(chem_store, chem_config, embed, val))

    return _run(plan, store, step, monitor, log_path)


@dataclass
class MixtureResult:
    chem_store: object
    chem_config: ChemixConfig
    pom_store: object
    pom_config: PomConfig
    fit: FitResult
    embed: object

    def predict(self, data, idx):
        return predict_view(self.chem_store, self.chem_config, self.embed, data.view(idx))

    def evaluate(self, data, idx) -> MetricReport:
        return regression_report(data.targets[np.asarray(idx)], self.predict(data, idx))


def _check_dims(pom_config, chem_config):
    if pom_config.embedding_dim != chem_config.input_dim:
        raise ValueError(f"POM embedding dim {pom_config.embedding_dim} does not match CheMix "
                         f"input dim {chem_config.input_dim}")


def train_chemix(data: MixtureData, train_idx, val_idx, pom_store, pom_config, chem_config,
                 plan: TrainPlan, chem_store=None, log_path=None, frozen=None):
    """CheMix + head on frozen POM embeddings, full batch, monitoring val Pearson."""
    if plan.stage != "train_chemix":
        raise ValueError("plan is not a train_chemix plan")
    _check_dims(pom_config, chem_config)
    chem_store = init_chemix(chem_config, plan.seed) if chem_store is None else chem_store
    embed = frozen or FrozenEmbeddings(pom_store, pom_config, data.graphs)
    fit = _fit_mixtures(chem_store, chem_store, chem_config, embed, data.view(train_idx),
                        data.view(val_idx), plan, log_path)
    return MixtureResult(chem_store, chem_config, pom_store, pom_config, fit, embed)


def finetune_pommix(data: MixtureData, train_idx, val_idx, pom_store, pom_config, chem_store,
                    chem_config, plan: TrainPlan, log_path=None, frozen=None):
    """Joint training with a lower POM learning rate.

    With the POM learning rate at 0 the POM is evaluated once in eval mode,
    which makes this stage identical to ``train_chemix`` from the same
    CheMix parameters and seed.
    """
    if plan.stage != "finetune_pommix":
        raise ValueError("plan is not a finetune_pommix plan")
    _check_dims(pom_config, chem_config)
    pom_store.set_trainable("glm", False)
    lr_pom = plan.lr_groups.get("pom", 0.0)
    if lr_pom == 0:
        embed = frozen or FrozenEmbeddings(pom_store, pom_config, data.graphs)
    else:
        embed = LiveEmbeddings(pom_store, pom_config, data.graphs, stream(plan.seed, "pom_dropout"))
    store = pom_store.merged(chem_store)
    fit = _fit_mixtures(store, chem_store, chem_config, embed, data.view(train_idx),
                        data.view(val_idx), plan, log_path)
    if lr_pom != 0:
        embed = FrozenEmbeddings(pom_store, pom_config, data.graphs)
    return MixtureResult(chem_store, chem_config, pom_store, pom_config, fit, embed)


# ------------------------------------------------------------ checkpoints


def save_pom(path, store, config, table, label_names, extra=None):
    meta = {"kind": "pom", "pom_config": config.to_json(), "label_names": list(label_names),
            "descriptor_stats": table.stats_to_json(), **(extra or {})}
    save_checkpoint(store, path, meta)


def load_pom(path):
    store, meta = load_checkpoint(path)
    if meta.get("kind") not in ("pom", "pommix"):
        raise ValueError(f"{path}: not a POM checkpoint")
    return store, PomConfig.from_json(meta["pom_config"]), meta


def save_chemix(path, store, config, extra=None):
    save_checkpoint(store, path, {"kind": "chemix", "chemix_config": config.to_json(), **(extra or {})})


def load_chemix(path):
    store, meta = load_checkpoint(path)
    if meta.get("kind") not in ("chemix", "pommix"):
        raise ValueError(f"{path}: not a CheMix checkpoint")
    return attach_hooks(store), ChemixConfig.from_json(meta["chemix_config"]), meta


def save_pommix(path, pom_store, pom_config, chem_store, chem_config, table, extra=None):
    meta = {"kind": "pommix", "pom_config": pom_config.to_json(),
            "chemix_config": chem_config.to_json(), "descriptor_stats": table.stats_to_json(),
            **(extra or {})}
    save_checkpoint(pom_store.merged(chem_store), path, meta)


def split_pommix(store):
    """Separate a joint store into (POM part, CheMix part)."""
    from .engine import ParamStore

    pom, chem = ParamStore(), ParamStore()
    for name, p in store.params.items():
        (chem if name.startswith("chemix.") else pom).params[name] = p
    return pom, attach_hooks(chem)
