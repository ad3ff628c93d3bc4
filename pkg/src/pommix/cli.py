"""Command-line entry point: ``pommix <subcommand> [flags]``.

Every run writes into ``--out`` through a staging directory. On success the
staged files (artifacts, ``config.json`` and ``manifest.json``) are moved
into place; on failure they are discarded and the process exits with status
1 and a single ``pommix: error: <Type>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import shutil
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import identical_pair_bias, interaction_analysis, interaction_curve, white_noise_analysis
from .chemix import HEAD_KINDS, ATTENTION_KINDS, ChemixConfig, export_attention_maps
from .datasets import (
    SplitSpec, augment_with_jaccard, check_descriptor_coverage, compile_mixture_pairs, filter_gslf,
    load_corpus, make_cv_splits, make_lmo_splits, make_size_threshold_splits, make_synthetic_data,
    read_mixtures_csv, read_molecules_csv, read_pairs_csv, write_corpus, write_molecules_csv,
)
from .engine import load_checkpoint
from .featurize import build_graph_tensors, load_descriptors, normalize_descriptors
from .metrics import regression_report, summarize
from .pom import PomConfig, embed_molecules
from .snitz import SnitzConfig, snitz_baseline
from .training import (
    FrozenEmbeddings, MixtureData, TrainPlan, finetune_pommix, load_pom, predict_view, pretrain_pom,
    save_pom, save_pommix, split_pommix, train_chemix, write_history_csv,
)

log = logging.getLogger("pommix")

SPLIT_KINDS = ("cv", "lmo", "size")


class CliError(Exception):
    pass


# ------------------------------------------------------------------ output


def dump_json(obj, path):
    """Stable JSON: sorted keys, fixed indentation, trailing newline."""
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(rows, path, fields=None):
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def git_describe():
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True,
                           text=True, timeout=10, cwd=Path(__file__).resolve().parent)
        return r.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


class Run:
    """Staging area for one command's outputs."""

    def __init__(self, out, command, config, seed):
        self.final = Path(out)
        self.command, self.config, self.seed = command, config, seed

    def __enter__(self):
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(prefix=f".{self.final.name}.partial-", dir=self.final.parent))
        self.start = time.perf_counter()
        return self

    def path(self, *parts):
        p = self.dir.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.dir, ignore_errors=True)
            return False
        dump_json(self.config, self.dir / "config.json")
        dump_json({"command": self.command, "seed": self.seed, "git": git_describe(),
                   "version": __version__, "wall_time_s": round(time.perf_counter() - self.start, 3),
                   "config": "config.json"}, self.dir / "manifest.json")
        self.final.mkdir(parents=True, exist_ok=True)
        for item in sorted(self.dir.iterdir()):
            target = self.final / item.name
            if target.is_dir():
                shutil.rmtree(target)
            elif target.exists():
                target.unlink()
            item.rename(target)
        self.dir.rmdir()
        return False


# ------------------------------------------------------------------ config


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def resolve_config(args):
    cfg = {"pom": {}, "chemix": {}, "plans": {}, "snitz": {}, "splits": {}, "augment_jaccard": False}
    if args.config:
        cfg = _merge(cfg, json.loads(_need_file(args.config).read_text()))
    if getattr(args, "head", None):
        cfg["chemix"]["head_kind"] = args.head
    if getattr(args, "attention", None):
        cfg["chemix"]["attention_kind"] = args.attention
    if getattr(args, "zero_bias", False):
        cfg["chemix"]["zero_bias"] = True
    if getattr(args, "augment_jaccard", False):
        cfg["augment_jaccard"] = True
    if getattr(args, "max_epochs", None) is not None:
        for stage in ("pretrain_pom", "train_chemix", "finetune_pommix"):
            plan = cfg["plans"].setdefault(stage, {})
            plan["max_epochs"] = args.max_epochs
            plan["patience"] = max(1, min(plan.get("patience", 10 ** 9), args.max_epochs - 1))
    cfg["command"] = args.command + (f" {args.what}" if getattr(args, "what", None) else "")
    cfg["seed"] = args.seed
    cfg["inputs"] = {k: str(getattr(args, k)) for k in ("data", "descriptors", "splits", "checkpoint")
                     if getattr(args, k, None)}
    return cfg


def plan_for(cfg, stage, seed):
    return TrainPlan.for_stage(stage, **{**cfg["plans"].get(stage, {}), "seed": seed})


def fold_seed(seed, k):
    return int(seed) * 1000 + k


# ------------------------------------------------------------------ inputs


def _need_file(p):
    p = Path(p)
    if not p.is_file():
        raise CliError(f"file not found: {p}")
    return p


def _need_dir(p, flag):
    if p is None:
        raise CliError(f"{flag} is required")
    p = Path(p)
    if not p.is_dir():
        raise CliError(f"directory not found: {p}")
    return p


def _descriptor_path(args):
    return _need_file(args.descriptors or _need_dir(args.data, "--data") / "descriptors.csv")


def _splits(args, n_pairs):
    if not args.splits:
        raise CliError("--splits is required")
    spec = SplitSpec.load(_need_file(args.splits))
    spec.validate(n_pairs)
    return spec


def _checkpoints(args):
    """[(fold or None, path)] under --checkpoint: one model or fold0, fold1, ..."""
    root = _need_dir(args.checkpoint, "--checkpoint")
    if (root / "manifest.json").is_file() and (root / "params.bin").is_file():
        return [(None, root)]
    folds = sorted((int(p.name[4:]), p) for p in root.glob("fold*") if p.name[4:].isdigit())
    if not folds:
        raise CliError(f"no checkpoint in {root}")
    return folds


def load_model(path):
    """(pom store, PomConfig, chemix store, ChemixConfig, meta) from a joint checkpoint."""
    store, meta = load_checkpoint(path)
    if meta.get("kind") != "pommix":
        raise CliError(f"{path}: not a mixture-model checkpoint")
    pom, chem = split_pommix(store)
    return pom, PomConfig.from_json(meta["pom_config"]), chem, ChemixConfig.from_json(meta["chemix_config"]), meta


def _table_from_meta(args, meta):
    return load_descriptors(_descriptor_path(args)).with_stats_json(meta["descriptor_stats"])


# ---------------------------------------------------------------- commands


def cmd_demo_data(args, cfg, run):
    syn = make_synthetic_data(args.seed)
    syn.write(run.dir)
    dump_json({"molecules": len(syn.raw_molecules), "mixtures": len(syn.mixture_rows),
               "pairs": len(syn.pair_rows), "synthetic": True}, run.path("summary.json"))


def cmd_prepare_data(args, cfg, run):
    data = _need_dir(args.data, "--data")
    raw, malformed = read_molecules_csv(_need_file(data / "molecules.csv"))
    mono, report = filter_gslf(raw, malformed=malformed)
    write_molecules_csv(mono, run.path("molecules.csv"))
    dump_json(report.to_json(), run.path("filter_report.json"))
    if (data / "mixtures.csv").is_file() or (data / "pairs.csv").is_file():
        corpus = compile_mixture_pairs(read_mixtures_csv(_need_file(data / "mixtures.csv")),
                                       read_pairs_csv(_need_file(data / "pairs.csv")))
        if args.descriptors or (data / "descriptors.csv").is_file():
            check_descriptor_coverage(corpus, load_descriptors(_descriptor_path(args)))
        write_corpus(corpus, run.dir)
        by_source = {}
        for s in corpus.sources():
            by_source[s] = by_source.get(s, 0) + 1
        dump_json({"mixtures": len(corpus.mixtures), "pairs": len(corpus.pairs), "pairs_by_source": by_source,
                   "identical_pairs": len(corpus.identical_pairs()), "molecules": len(corpus.molecules())},
                  run.path("corpus_summary.json"))


def cmd_make_splits(args, cfg, run):
    corpus = load_corpus(_need_dir(args.data, "--data"))
    params = dict(cfg["splits"])
    kind = args.kind or params.pop("kind", "cv")
    params.pop("kind", None)
    if kind == "cv":
        spec = make_cv_splits(corpus, seed=args.seed, **params)
    elif kind == "lmo":
        spec = make_lmo_splits(corpus, seed=args.seed, **params)
    elif kind == "size":
        spec = make_size_threshold_splits(corpus, seed=args.seed, **params)
    else:
        raise CliError(f"unknown split kind {kind!r}")
    spec.save(run.path("splits.json"))


def cmd_pretrain_pom(args, cfg, run):
    data = _need_dir(args.data, "--data")
    mono, malformed = read_molecules_csv(_need_file(data / "molecules.csv"))
    if malformed:
        raise CliError(f"{len(malformed)} malformed molecule row(s); run prepare-data first")
    table = normalize_descriptors(load_descriptors(_descriptor_path(args)), mono.smiles)
    config = PomConfig(**cfg["pom"])
    res = pretrain_pom(mono, table, config, plan_for(cfg, "pretrain_pom", args.seed),
                       log_path=run.path("history.csv"))
    save_pom(run.path("pom"), res.store, config, table, mono.label_names)
    dump_json({"val_macro_auroc": res.fit.best_monitor, "best_epoch": res.fit.best_epoch,
               "train_molecules": len(res.train), "val_molecules": len(res.val),
               "labels_scored": len(res.label_columns)}, run.path("metrics.json"))


def _mixture_setup(args, cfg):
    """Corpus, split spec, descriptor table, POM and data for the mixture stages."""
    data_dir = _need_dir(args.data, "--data")
    corpus = load_corpus(data_dir)
    spec = _splits(args, len(corpus.pairs))
    pom, pom_cfg, meta = load_pom(_need_dir(args.checkpoint, "--checkpoint"))
    table = _table_from_meta(args, meta)
    extra = []
    if cfg["augment_jaccard"]:
        mono, _ = read_molecules_csv(_need_file(data_dir / "molecules.csv"))
        n = len(corpus.pairs)
        corpus = corpus.extended(augment_with_jaccard(mono, corpus))
        extra = list(range(n, len(corpus.pairs)))
    check_descriptor_coverage(corpus, table)
    chem_cfg = ChemixConfig(**{**cfg["chemix"], "input_dim": pom_cfg.embedding_dim})
    return corpus, spec, pom, pom_cfg, chem_cfg, table, MixtureData.from_corpus(corpus, table), extra


def _train_mixtures(args, cfg, run, finetune):
    corpus, spec, pom, pom_cfg, chem_cfg, table, data, extra = _mixture_setup(args, cfg)
    frozen = FrozenEmbeddings(pom, pom_cfg, data.graphs)
    folds, chem_reports, mix_reports = [], [], []
    for k, fold in enumerate(spec.folds):
        seed = fold_seed(args.seed, k)
        train = list(fold.train) + extra
        res = train_chemix(data, train, fold.val, pom, pom_cfg, chem_cfg, plan_for(cfg, "train_chemix", seed),
                           frozen=frozen)
        rep = res.evaluate(data, fold.test)
        chem_reports.append(rep)
        entry = {"fold": k, "chemix": {"test": rep.to_json(), "fit": res.fit.to_json()}}
        write_history_csv(res.fit.history, run.path(f"fold{k}", "history_chemix.csv"))
        stage, pom_out = "train_chemix", pom
        if finetune:
            pom_k = copy.deepcopy(pom)
            res = finetune_pommix(data, train, fold.val, pom_k, pom_cfg, res.chem_store, chem_cfg,
                                  plan_for(cfg, "finetune_pommix", seed), frozen=frozen)
            rep = res.evaluate(data, fold.test)
            mix_reports.append(rep)
            entry["pommix"] = {"test": rep.to_json(), "fit": res.fit.to_json()}
            write_history_csv(res.fit.history, run.path(f"fold{k}", "history_pommix.csv"))
            stage, pom_out = "finetune_pommix", pom_k
        save_pommix(run.path(f"fold{k}"), pom_out, pom_cfg, res.chem_store, chem_cfg, table,
                    {"stage": stage, "fold": k, "split_kind": spec.kind})
        folds.append(entry)
    out = {"stage": "finetune_pommix" if finetune else "train_chemix", "split_kind": spec.kind,
           "folds": folds, "summary": {"chemix": summarize(chem_reports)}}
    if finetune:
        out["summary"]["pommix"] = summarize(mix_reports)
        out["kendall_improved_folds"] = sum(m.kendall > c.kendall for m, c in zip(mix_reports, chem_reports))
    dump_json(out, run.path("metrics.json"))


def cmd_train_chemix(args, cfg, run):
    _train_mixtures(args, cfg, run, finetune=False)


def cmd_train_pommix(args, cfg, run):
    _train_mixtures(args, cfg, run, finetune=True)


def _model_predictions(args, corpus, path, idx):
    pom, pom_cfg, chem, chem_cfg, meta = load_model(path)
    data = MixtureData.from_corpus(corpus, _table_from_meta(args, meta))
    embed = FrozenEmbeddings(pom, pom_cfg, data.graphs)
    return predict_view(chem, chem_cfg, embed, data.view(idx)), chem, chem_cfg


def cmd_evaluate(args, cfg, run):
    corpus = load_corpus(_need_dir(args.data, "--data"))
    spec = _splits(args, len(corpus.pairs))
    models = dict(_checkpoints(args))
    rows, reports = [], []
    for k, fold in enumerate(spec.folds):
        path = models.get(None) or models.get(k)
        if path is None:
            raise CliError(f"no checkpoint for fold {k}")
        pred, _, _ = _model_predictions(args, corpus, path, fold.test)
        y = corpus.distances(fold.test)
        reports.append(regression_report(y, pred))
        rows += [{"fold": k, "pair": int(i), "target": float(t), "prediction": float(p)}
                 for i, t, p in zip(fold.test, y, pred)]
    write_csv(rows, run.path("predictions.csv"))
    dump_json({"split_kind": spec.kind, "folds": [r.to_json() for r in reports], "summary": summarize(reports)},
              run.path("metrics.json"))


def cmd_baseline_snitz(args, cfg, run):
    corpus = load_corpus(_need_dir(args.data, "--data"))
    spec = _splits(args, len(corpus.pairs))
    raw = load_descriptors(_descriptor_path(args))
    check_descriptor_coverage(corpus, raw)
    table = normalize_descriptors(raw, corpus.molecules())
    snitz_cfg = SnitzConfig(**cfg["snitz"])
    reports, states = [], []
    for k, fold in enumerate(spec.folds):
        rep, state, _ = snitz_baseline(corpus, table, list(fold.train) + list(fold.val), fold.test,
                                       seed=fold_seed(args.seed, k), cfg=snitz_cfg)
        reports.append(rep)
        states.append({"fold": k, **state.to_json()})
    dump_json({"split_kind": spec.kind, "folds": [r.to_json() for r in reports], "summary": summarize(reports)},
              run.path("metrics.json"))
    dump_json(states, run.path("selection.json"))


def cmd_analyze(args, cfg, run):
    corpus = load_corpus(_need_dir(args.data, "--data"))
    models = _checkpoints(args)
    if args.what == "white-noise":
        pred = np.full(len(corpus.pairs), np.nan)
        if models[0][0] is None or not args.splits:
            pred[:], _, _ = _model_predictions(args, corpus, models[0][1], np.arange(len(corpus.pairs)))
        else:
            spec = _splits(args, len(corpus.pairs))
            for k, path in models:
                test = spec.folds[k].test
                pred[test], _, _ = _model_predictions(args, corpus, path, test)
        if np.isnan(pred).any():
            raise CliError("some pairs received no out-of-fold prediction")
        rep = white_noise_analysis(corpus, pred)
        write_csv(rep.pop("rows"), run.path("fig5a.csv"))
        dump_json(rep, run.path("white_noise.json"))
    elif args.what == "bias":
        idx = corpus.identical_pairs()
        biases, preds = [], []
        for _, path in models:
            if idx:
                pred, chem, chem_cfg = _model_predictions(args, corpus, path, idx)
            else:
                pred, (_, _, chem, chem_cfg, _) = np.zeros(0), load_model(path)
            if chem_cfg.head_kind == "scaled_cosine":
                biases.append(float(chem["chemix.head.b"].data.reshape(-1)[0]))
            elif chem_cfg.head_kind == "cosine":
                biases.append(0.0)
            else:
                raise CliError(f"bias analysis needs a cosine-type head, not {chem_cfg.head_kind}")
            preds.append(pred)
        rep = identical_pair_bias(corpus, biases, preds)
        dump_json(rep, run.path("bias.json"))
        write_csv([{"fold": k if k is not None else 0, "learned_bias": b, "clamped_bias": c,
                    "label_mean": rep["label_mean"], "label_std": rep["label_std"]}
                   for (k, _), b, c in zip(models, rep["learned_bias"], rep["clamped_bias"])],
                  run.path("fig5b.csv"))
    else:
        pom, pom_cfg, chem, chem_cfg, meta = load_model(models[0][1])
        table = _table_from_meta(args, meta)
        mols = corpus.molecules()
        emb = embed_molecules(pom, pom_cfg, [build_graph_tensors(s, table, key=s) for s in mols]).data
        maps = export_attention_maps(chem, chem_cfg, emb, corpus.members(mols),
                                     [m.mixture_id for m in corpus.mixtures], mols)
        rep = interaction_analysis(maps)
        rows = rep.pop("rows")
        dump_json(maps, run.path("attention_maps.json"))
        write_csv(rows, run.path("interactions.csv"))
        write_csv(interaction_curve(rows), run.path("fig6c.csv"))
        dump_json(rep, run.path("keys.json"))


def cmd_export_embeddings(args, cfg, run):
    models = _checkpoints(args)
    if len(models) != 1:
        raise CliError("export-embeddings needs a single checkpoint directory")
    store, meta = load_checkpoint(models[0][1])
    if meta.get("kind") not in ("pom", "pommix"):
        raise CliError(f"{models[0][1]}: not a POM checkpoint")
    pom, _ = split_pommix(store)
    pom_cfg = PomConfig.from_json(meta["pom_config"])
    table = _table_from_meta(args, meta)
    data = _need_dir(args.data, "--data")
    if (data / "mixtures.csv").is_file():
        mols = load_corpus(data).molecules()
    else:
        mols = read_molecules_csv(_need_file(data / "molecules.csv"))[0].smiles
    emb = embed_molecules(pom, pom_cfg, [build_graph_tensors(s, table, key=s) for s in mols]).data
    with open(run.path("embeddings.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["smiles"] + [f"e{j:03d}" for j in range(emb.shape[1])])
        for s, row in zip(mols, emb):
            w.writerow([s] + [repr(float(v)) for v in row])


COMMANDS = {
    "demo-data": cmd_demo_data, "prepare-data": cmd_prepare_data, "make-splits": cmd_make_splits,
    "pretrain-pom": cmd_pretrain_pom, "train-chemix": cmd_train_chemix, "train-pommix": cmd_train_pommix,
    "evaluate": cmd_evaluate, "baseline-snitz": cmd_baseline_snitz, "analyze": cmd_analyze,
    "export-embeddings": cmd_export_embeddings,
}


# ------------------------------------------------------------------ parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with pom/chemix/plans/snitz/splits sections")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--data", help="data directory (molecules.csv, mixtures.csv, pairs.csv)")
    common.add_argument("--descriptors", help="descriptor CSV (default: <data>/descriptors.csv)")
    common.add_argument("--splits", help="splits.json from make-splits")
    common.add_argument("--checkpoint", help="checkpoint directory")
    common.add_argument("--head", choices=HEAD_KINDS)
    common.add_argument("--attention", choices=ATTENTION_KINDS)
    common.add_argument("--zero-bias", action="store_true", help="freeze the head bias at 0")
    common.add_argument("--augment-jaccard", action="store_true", help="add GS-LF Jaccard pairs to training")
    common.add_argument("--max-epochs", type=int, help="cap every training stage (smoke runs)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="pommix", description="Molecular and mixture olfaction models.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "demo-data": "write a small synthetic raw data directory",
        "prepare-data": "filter GS-LF and compile the mixture corpus",
        "make-splits": "write a split specification",
        "pretrain-pom": "pretrain the molecular GNN on odor labels",
        "train-chemix": "train the mixture model on frozen molecular embeddings",
        "train-pommix": "train the mixture model, then fine-tune end to end",
        "evaluate": "score fold checkpoints on their test pairs",
        "baseline-snitz": "descriptor-selection baseline",
        "analyze": "white-noise, identical-pair bias or attention analysis",
        "export-embeddings": "write molecular embeddings as CSV",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "analyze":
            sp.add_argument("what", choices=("white-noise", "bias", "attention"))
        if name == "make-splits":
            sp.add_argument("--kind", choices=SPLIT_KINDS)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        with Run(args.out, cfg["command"], cfg, args.seed) as run:
            COMMANDS[args.command](args, cfg, run)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure becomes one stderr line
        kind = "UsageError" if isinstance(exc, CliError) else type(exc).__name__
        msg = " ".join(str(exc).split()) or kind
        print(f"pommix: error: {kind}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
