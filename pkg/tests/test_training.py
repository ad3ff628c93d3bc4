import copy

import numpy as np
import pytest

from pommix.chemix import ChemixConfig, chemix_forward, init_chemix
from pommix.datasets import compile_mixture_pairs, filter_gslf, make_synthetic_data
from pommix.engine import backward, tsum
from pommix.featurize import build_graph_tensors, normalize_descriptors
from pommix.metrics import auroc
from pommix.pom import PomConfig, glm_predict, embed_molecules, init_pom
from pommix.training import (
    LiveEmbeddings, MixtureData, TrainPlan, finetune_pommix, load_chemix, load_pom,
    loss_window_fraction, pretrain_pom, save_chemix, save_pom, stream, train_chemix,
)

POM = PomConfig(num_layers=2, hidden=16, embedding_dim=12, dropout=0.0)
CHEM = ChemixConfig(input_dim=12, embed_dim=8, heads=2, dropout=0.0)


@pytest.fixture(scope="module")
def synth():
    syn = make_synthetic_data(1)
    mono, _ = filter_gslf(syn.raw_molecules)
    table = normalize_descriptors(syn.descriptors, mono.smiles)
    corpus = compile_mixture_pairs(syn.mixture_rows, syn.pair_rows)
    return mono, table, corpus


@pytest.fixture(scope="module")
def data(synth):
    _, table, corpus = synth
    return MixtureData.from_corpus(corpus, table)


def _bytes(store):
    return b"".join(t.data.tobytes() for _, t in store.items())


def test_plan_validation():
    p = TrainPlan.for_stage("train_chemix")
    assert (p.max_epochs, p.patience, p.lr_groups) == (2000, 100, {"chemix": 8e-5})
    assert TrainPlan.for_stage("pretrain_pom").batch_size == 64
    assert TrainPlan.for_stage("finetune_pommix").lr_groups == {"pom": 1e-5, "chemix": 8e-5}
    with pytest.raises(ValueError, match="patience"):
        TrainPlan.for_stage("train_chemix", max_epochs=10, patience=10)
    with pytest.raises(ValueError, match="monitors"):
        TrainPlan("train_chemix", 10, 5, "auroc", {"chemix": 1e-3})
    assert TrainPlan.from_json(p.to_json()) == p


# ------------------------------------------------------------ pretraining


def test_pom_overfits_twenty_molecules(synth):
    from pommix.engine import adam_step, bce_with_logits
    from pommix.featurize import collate
    from pommix.pom import glm_logits, pom_forward

    mono, table, _ = synth
    labels = mono.labels[:20]
    graphs = [build_graph_tensors(s, table, key=s) for s in mono.smiles[:20]]
    batch = collate(graphs)
    store = init_pom(POM, 0, labels.shape[1])
    for _ in range(150):
        store.zero_grad()
        backward(bce_with_logits(glm_logits(store, pom_forward(store, batch, POM)), labels))
        adam_step(store, {"pom": 3e-3, "glm": 3e-3})
    probs = glm_predict(store, embed_molecules(store, POM, graphs))
    cols = [j for j in range(labels.shape[1]) if 0 < labels[:, j].sum() < 20]
    assert len(cols) >= 5
    assert np.mean([auroc(labels[:, j], probs[:, j]) for j in cols]) == 1.0


def test_pretrain_zero_epochs_returns_init(synth):
    mono, table, _ = synth
    plan = TrainPlan.for_stage("pretrain_pom", max_epochs=0, seed=4)
    res = pretrain_pom(mono, table, POM, plan)
    assert _bytes(res.store) == _bytes(init_pom(POM, 4, mono.labels.shape[1]))
    assert res.fit.best_epoch == 0 and len(res.fit.history) == 1


def test_pretrain_log_and_checkpoint(tmp_path, synth):
    mono, table, _ = synth
    plan = TrainPlan.for_stage("pretrain_pom", max_epochs=3, patience=2, seed=1)
    res = pretrain_pom(mono, table, POM, plan, log_path=tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,monitor"
    assert len(lines) == len(res.fit.history) + 1
    save_pom(tmp_path / "ck", res.store, POM, table, mono.label_names)
    store, cfg, meta = load_pom(tmp_path / "ck")
    assert cfg == POM and meta["label_names"] == mono.label_names
    assert _bytes(store) == _bytes(res.store)
    assert table.with_stats_json(meta["descriptor_stats"]).stats[0][0].tolist() == table.stats[0][0].tolist()


# ---------------------------------------------------------- mixture stage


@pytest.fixture(scope="module")
def pom_store(synth):
    mono, _, _ = synth
    return init_pom(POM, 0, mono.labels.shape[1])


def test_chemix_overfits_ten_pairs(data, pom_store):
    idx = np.arange(10)
    plan = TrainPlan.for_stage("train_chemix", max_epochs=600, patience=599, seed=0,
                               lr_groups={"chemix": 1e-2})
    res = train_chemix(data, idx, idx, pom_store, POM, CHEM, plan)
    pred = res.predict(data, idx)
    assert np.mean(np.abs(pred - data.targets[idx])) < 0.02


def test_frozen_pom_bitwise_unchanged(data, pom_store):
    before = _bytes(pom_store)
    plan = TrainPlan.for_stage("train_chemix", max_epochs=20, patience=19, lr_groups={"chemix": 1e-2})
    train_chemix(data, np.arange(0, 100), np.arange(100, 130), pom_store, POM, CHEM, plan)
    assert _bytes(pom_store) == before


def test_zero_epochs_returns_chemix_init(data, pom_store):
    plan = TrainPlan.for_stage("train_chemix", max_epochs=0, seed=7)
    res = train_chemix(data, np.arange(50), np.arange(50, 70), pom_store, POM, CHEM, plan)
    assert _bytes(res.chem_store) == _bytes(init_chemix(CHEM, 7))


def _run(data, pom_store, epochs, seed=3, patience=None):
    plan = TrainPlan.for_stage("train_chemix", max_epochs=epochs, patience=patience or epochs - 1,
                               seed=seed, lr_groups={"chemix": 5e-3})
    cfg = ChemixConfig(**{**CHEM.__dict__, "dropout": 0.2})
    return train_chemix(data, np.arange(0, 110), np.arange(110, 140), pom_store, POM, cfg, plan)


def test_early_stopping_restores_best_epoch(tmp_path, data, pom_store):
    full = _run(data, pom_store, 60)
    best = full.fit.best_epoch
    mons = [m for _, _, m in full.fit.history]
    assert best == int(np.argmax(mons))
    assert 1 < best < 60
    upto = _run(data, pom_store, best)  # same seed, stopped exactly at the best epoch
    assert upto.fit.best_epoch == best
    assert _bytes(upto.chem_store) == _bytes(full.chem_store)
    save_chemix(tmp_path / "c", full.chem_store, full.chem_config)
    store, cfg, _ = load_chemix(tmp_path / "c")
    assert _bytes(store) == _bytes(full.chem_store) and cfg == full.chem_config


def test_bitwise_reproducible_fifty_steps(data, pom_store):
    a = _run(data, pom_store, 50, seed=11, patience=49)
    b = _run(data, pom_store, 50, seed=11, patience=49)
    assert a.fit.history == b.fit.history
    assert _bytes(a.chem_store) == _bytes(b.chem_store)
    c = _run(data, pom_store, 50, seed=12, patience=49)
    assert _bytes(c.chem_store) != _bytes(a.chem_store)


def test_undefined_pearson_is_minus_inf(data, pom_store):
    plan = TrainPlan.for_stage("train_chemix", max_epochs=2, patience=1, lr_groups={"chemix": 1e-3})
    store = init_chemix(CHEM, 0)
    store["chemix.head.b"].data[...] = 5.0  # every prediction clamps to 1
    res = train_chemix(data, np.arange(20), np.arange(20, 40), pom_store, POM, CHEM, plan, chem_store=store)
    assert res.fit.history[0][2] == -np.inf


def test_finetune_with_zero_pom_lr_reduces_to_chemix(data, synth):
    mono = synth[0]
    train, val, test = np.arange(0, 100), np.arange(100, 120), np.arange(120, 160)
    pom_a = init_pom(POM, 5, mono.labels.shape[1])
    pom_b = copy.deepcopy(pom_a)
    cfg = ChemixConfig(**{**CHEM.__dict__, "dropout": 0.1})
    ref = train_chemix(data, train, val, pom_a, POM, cfg,
                       TrainPlan.for_stage("train_chemix", max_epochs=40, patience=39, seed=2,
                                           lr_groups={"chemix": 5e-3}))
    ft = finetune_pommix(data, train, val, pom_b, POM, init_chemix(cfg, 2), cfg,
                         TrainPlan.for_stage("finetune_pommix", max_epochs=40, patience=39, seed=2,
                                             lr_groups={"pom": 0.0, "chemix": 5e-3}))
    assert ref.evaluate(data, test) == ft.evaluate(data, test)
    assert ref.fit.history == ft.fit.history


def test_finetune_moves_pom_and_gradient_reaches_edges(data, synth):
    mono = synth[0]
    pom = init_pom(POM, 6, mono.labels.shape[1])
    chem = init_chemix(CHEM, 6)
    view = data.view(np.arange(30))
    embed = LiveEmbeddings(pom, POM, data.graphs, stream(0, "pom_dropout"))
    pred = chemix_forward(chem, CHEM, embed(view, True), view.members, view.pairs)
    backward(tsum(pred))
    g = pom["pom.block0.edge.msg.w"].grad
    assert g is not None and np.linalg.norm(g) > 0
    pom.zero_grad()
    chem.zero_grad()
    before = _bytes(pom)
    res = finetune_pommix(data, np.arange(60), np.arange(60, 80), pom, POM, chem, CHEM,
                          TrainPlan.for_stage("finetune_pommix", max_epochs=5, patience=4,
                                              lr_groups={"pom": 1e-3, "chemix": 1e-3}))
    assert res.fit.best_epoch > 0
    assert _bytes(pom) != before


def test_finetune_dim_mismatch(data, pom_store):
    bad = ChemixConfig(input_dim=196, embed_dim=8, heads=2)
    with pytest.raises(ValueError, match="does not match"):
        finetune_pommix(data, [0], [1], pom_store, POM, init_chemix(bad, 0), bad,
                        TrainPlan.for_stage("finetune_pommix"))


def test_loss_windows_mostly_non_increasing(data, pom_store):
    cfg = ChemixConfig(input_dim=12)  # stage defaults: dropout 0.1, lr 8e-5
    plan = TrainPlan.for_stage("train_chemix", max_epochs=200, patience=199, seed=0)
    res = train_chemix(data, np.arange(0, 110), np.arange(110, 140), pom_store, POM, cfg, plan)
    losses = [loss for _, loss, _ in res.fit.history[1:]]
    assert loss_window_fraction(losses, 10) >= 0.9
    assert loss_window_fraction([3, 2, 1], 10) == 1.0
