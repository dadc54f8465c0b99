"""Command-line entry points and run-artifact persistence.

Commands: ``preprocess`` (corpus -> bundle + graphs + projections),
``train``, ``evaluate``, and ``ablate`` (the variant grid). Every run writes
a manifest with input digests so later commands can detect stale artifacts.
Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from . import ArtifactError, ConfigError, ShortGCLError, __version__
from .graphs import (
    GRAPH_KINDS,
    InfoGraph,
    ProjectionMatrix,
    build_info_graphs,
    compute_projection_matrices,
    load_sparse_triplets,
    normalize_adjacency,
    save_sparse_triplets,
)
from .ingest import (
    AUGMENT_STRATEGIES,
    STRATEGY_DELETION,
    CorpusBundle,
    augment_corpus,
    load_bundle,
    load_corpus,
    save_bundle,
    split_corpus,
)
from .model import active_sources, config_hash, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, evaluate, save_history, train

log = logging.getLogger(__name__)

BUNDLE_FILE = "bundle.json"
META_FILE = "meta.json"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_FILE = "checkpoint.bin"
HISTORY_FILE = "history.csv"
TRAIN_CONFIG_FILE = "train_config.json"

ABLATION_VARIANTS: tuple[tuple[str, dict], ...] = (
    ("w/o word graph", {"use_word": False}),
    ("w/o POS graph", {"use_pos": False}),
    ("w/o entity graph", {"use_entity": False}),
    ("w/o ICL", {"use_icl": False}),
    ("w/o CCL", {"use_ccl": False}),
    ("w/o CCL and ICL", {"use_icl": False, "use_ccl": False}),
    ("parallel", {"parallel_mode": True}),
    ("full", {}),
)


def _graph_file(kind: str) -> str:
    return f"graph_{kind}.txt"


def _proj_file(kind: str) -> str:
    return f"proj_{kind}.txt"


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            cfg = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    for section in cfg:
        if section not in ("train", "graphs", "augment"):
            raise ConfigError(f"{path}: unknown config section [{section}]")
    return cfg


def build_train_config(cfg: dict, overrides: dict) -> TrainConfig:
    config = TrainConfig()
    known = set(config.as_dict())
    section = cfg.get("train", {})
    for key, value in section.items():
        if key not in known:
            raise ConfigError(f"unknown [train] option {key!r}")
        setattr(config, key, value)
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    try:
        config.validate()
    except ShortGCLError as exc:
        raise ConfigError(str(exc)) from exc
    return config


# ---------------------------------------------------------------------------
# artifact loading
# ---------------------------------------------------------------------------

def _load_manifest(run_dir: str) -> dict:
    path = os.path.join(run_dir, MANIFEST_FILE)
    if not os.path.exists(path):
        raise ArtifactError(f"no manifest in {run_dir}; run preprocess first")
    return _read_json(path)


def _verify_artifacts(run_dir: str, manifest: dict) -> None:
    for name, entry in manifest["artifacts"].items():
        path = os.path.join(run_dir, entry["file"])
        if not os.path.exists(path):
            raise ArtifactError(f"missing artifact {entry['file']} in {run_dir}")
        digest = sha256_file(path)
        if digest != entry["sha256"]:
            raise ArtifactError(
                f"artifact {entry['file']} changed since preprocess (stale run dir)"
            )


def _load_run(run_dir: str) -> tuple[CorpusBundle, dict[str, InfoGraph], dict[str, ProjectionMatrix], dict]:
    manifest = _load_manifest(run_dir)
    _verify_artifacts(run_dir, manifest)
    bundle = load_bundle(os.path.join(run_dir, BUNDLE_FILE))
    features = {
        "word": bundle.word_embeddings,
        "pos": np.eye(len(bundle.pos_vocab)),
        "entity": bundle.entity_embeddings,
    }
    graphs: dict[str, InfoGraph] = {}
    projections: dict[str, ProjectionMatrix] = {}
    for kind in GRAPH_KINDS:
        adj = load_sparse_triplets(os.path.join(run_dir, _graph_file(kind)))
        graphs[kind] = InfoGraph(
            kind=kind,
            node_count=adj.shape[0],
            features=features[kind],
            adjacency=adj,
            norm_adjacency=normalize_adjacency(adj),
        )
        graphs[kind].validate()
        projections[kind] = ProjectionMatrix(
            kind, load_sparse_triplets(os.path.join(run_dir, _proj_file(kind)))
        )
    return bundle, graphs, projections, manifest


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = load_config_file(args.config)
    gcfg = cfg.get("graphs", {})
    acfg = cfg.get("augment", {})

    strategy = args.augment or acfg.get("strategy", "synonym")
    if strategy not in AUGMENT_STRATEGIES:
        raise ConfigError(f"unknown augmentation strategy {strategy!r}")
    rate = args.rate if args.rate is not None else acfg.get("rate", 0.2)
    window = args.window if args.window is not None else gcfg.get("window", 5)
    per_class = args.per_class_labeled if args.per_class_labeled is not None else 40
    seed = args.seed if args.seed is not None else 0

    aux_path = args.syn_table
    if strategy != STRATEGY_DELETION and aux_path is None:
        raise ConfigError(f"--augment {strategy} requires --syn-table")

    for path in filter(None, (args.corpus, args.word_emb, args.entity_emb, aux_path)):
        if not os.path.exists(path):
            raise ConfigError(f"input file not found: {path}")

    bundle = load_corpus(args.corpus, args.word_emb, args.entity_emb)
    bundle = split_corpus(bundle, per_class, seed)
    bundle = augment_corpus(bundle, strategy, aux_path, rate, seed)
    graphs = build_info_graphs(bundle, window)
    projections = compute_projection_matrices(bundle)

    os.makedirs(args.out, exist_ok=True)
    save_bundle(bundle, os.path.join(args.out, BUNDLE_FILE))
    for kind in GRAPH_KINDS:
        save_sparse_triplets(graphs[kind].adjacency, os.path.join(args.out, _graph_file(kind)))
        save_sparse_triplets(projections[kind].values, os.path.join(args.out, _proj_file(kind)))

    sources = [k for k in GRAPH_KINDS if graphs[k].node_count > 0]
    meta = {
        "documents": len(bundle.documents),
        "originals": bundle.num_originals,
        "num_classes": bundle.num_classes,
        "rejected": len(bundle.rejected),
        "active_sources": sources,
        "degraded": len(sources) < len(GRAPH_KINDS),
        "vocab_sizes": {
            "word": len(bundle.word_vocab),
            "pos": len(bundle.pos_vocab),
            "entity": len(bundle.entity_vocab),
        },
    }
    _write_json(os.path.join(args.out, META_FILE), meta)

    artifact_files = [BUNDLE_FILE, META_FILE]
    artifact_files += [_graph_file(k) for k in GRAPH_KINDS]
    artifact_files += [_proj_file(k) for k in GRAPH_KINDS]
    manifest = {
        "tool_version": __version__,
        "seed": seed,
        "config": {
            "strategy": strategy,
            "rate": rate,
            "window": window,
            "per_class_labeled": per_class,
        },
        "inputs": {
            os.path.abspath(p): sha256_file(p)
            for p in filter(None, (args.corpus, args.word_emb, args.entity_emb, aux_path))
        },
        "artifacts": {
            name: {"file": name, "sha256": sha256_file(os.path.join(args.out, name))}
            for name in artifact_files
        },
    }
    _write_json(os.path.join(args.out, MANIFEST_FILE), manifest)
    print(f"preprocess: wrote {len(artifact_files)} artifacts to {args.out}")
    if meta["degraded"]:
        print(f"note: degraded to sources {sources} (empty vocabularies elsewhere)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = load_config_file(args.config)
    overrides = {
        "epochs": args.epochs,
        "lr": args.lr,
        "seed": args.seed,
        "parallel_mode": args.parallel if args.parallel else None,
    }
    config = build_train_config(cfg, overrides)
    bundle, graphs, projections, manifest = _load_run(args.run)

    dump_dir = None
    if args.dump_pseudo:
        dump_dir = os.path.join(args.run, "pseudo_labels")
        os.makedirs(dump_dir, exist_ok=True)

    per_class = manifest["config"]["per_class_labeled"]
    repeats = args.repeats
    runs = []
    first_result = None
    for r in range(repeats):
        run_seed = config.seed + r
        run_bundle = split_corpus(bundle, per_class, run_seed) if repeats > 1 else bundle
        run_config = TrainConfig(**{**config.as_dict(), "seed": run_seed})
        result = train(run_bundle, graphs, projections, run_config,
                       pseudo_dump_dir=dump_dir if r == 0 else None)
        if r == 0:
            first_result = result
            save_history(result.history, os.path.join(args.run, HISTORY_FILE))
        else:
            save_history(result.history, os.path.join(args.run, f"history_run{r}.csv"))
        runs.append(
            {
                "seed": run_seed,
                "epochs_run": len(result.history),
                "best_epoch": result.best_epoch,
                "best_val_metric": result.best_metric,
            }
        )

    assert first_result is not None
    cfg_hash = config_hash(config.as_dict())
    save_checkpoint(first_result.params, os.path.join(args.run, CHECKPOINT_FILE), cfg_hash)
    _write_json(
        os.path.join(args.run, TRAIN_CONFIG_FILE),
        {"config": config.as_dict(), "config_hash": cfg_hash},
    )
    report = {
        "runs": runs,
        "mean_best_val_metric": float(np.mean([r["best_val_metric"] for r in runs])),
        "val_metric": config.val_metric,
    }
    _write_json(os.path.join(args.run, "train_report.json"), report)
    best = runs[0]
    print(
        f"train: {best['epochs_run']} epochs, best {config.val_metric} "
        f"{best['best_val_metric']:.4f} at epoch {best['best_epoch']}"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    bundle, graphs, projections, _ = _load_run(args.run)
    train_cfg_path = os.path.join(args.run, TRAIN_CONFIG_FILE)
    if not os.path.exists(train_cfg_path):
        raise ArtifactError(f"no trained model in {args.run}; run train first")
    saved = _read_json(train_cfg_path)
    params = load_checkpoint(
        os.path.join(args.run, CHECKPOINT_FILE), expected_hash=saved["config_hash"]
    )
    metrics = evaluate(params, bundle, graphs, projections, args.split)
    payload = {"split": args.split, **metrics.as_dict()}
    out_path = os.path.join(args.run, f"metrics_{args.split}.json")
    _write_json(out_path, payload)
    print(
        f"evaluate[{args.split}]: accuracy {metrics.accuracy:.4f} "
        f"macro_f1 {metrics.macro_f1:.4f}"
    )
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = load_config_file(args.config)
    config = build_train_config(cfg, {"epochs": args.epochs, "seed": args.seed})
    bundle, graphs, projections, _ = _load_run(args.run)

    out_dir = os.path.join(args.run, "ablation")
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for name, overrides in ABLATION_VARIANTS:
        variant = TrainConfig(**{**config.as_dict(), **overrides})
        try:
            active_sources(graphs, variant.ablation_flags())
        except ShortGCLError:
            print(f"ablate: skipping {name!r} (no graph sources left)")
            continue
        result = train(bundle, graphs, projections, variant)
        metrics = evaluate(result.params, bundle, graphs, projections, "test")
        slug = name.replace("/", "").replace(" ", "_")
        save_history(result.history, os.path.join(out_dir, f"history_{slug}.csv"))
        rows.append(
            {
                "variant": name,
                "test_accuracy": metrics.accuracy,
                "test_macro_f1": metrics.macro_f1,
                "best_val_metric": result.best_metric,
                "epochs_run": len(result.history),
            }
        )

    with open(os.path.join(out_dir, "ablation.csv"), "w", encoding="utf-8") as fh:
        fh.write("variant,test_accuracy,test_macro_f1,best_val_metric,epochs_run\n")
        for row in rows:
            fh.write(
                f"{row['variant']},{row['test_accuracy']!r},{row['test_macro_f1']!r},"
                f"{row['best_val_metric']!r},{row['epochs_run']}\n"
            )

    width = max(len(r["variant"]) for r in rows)
    print(f"{'variant'.ljust(width)}  test_acc  test_f1")
    for row in rows:
        print(
            f"{row['variant'].ljust(width)}  {row['test_accuracy']:.4f}    "
            f"{row['test_macro_f1']:.4f}"
        )
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shortgcl",
        description="Graph-based short-text classification with hierarchical "
        "dual-level contrastive learning.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="build bundle, graphs, and projections")
    p.add_argument("--corpus", required=True, help="JSONL corpus file")
    p.add_argument("--word-emb", required=True, help="word embedding table")
    p.add_argument("--entity-emb", required=True, help="entity embedding table")
    p.add_argument("--augment", choices=AUGMENT_STRATEGIES, default=None,
                   help="augmentation strategy (default synonym)")
    p.add_argument("--syn-table", default=None,
                   help="substitution table (required for synonym/contextual_table)")
    p.add_argument("--rate", type=float, default=None, help="augmentation rate (default 0.2)")
    p.add_argument("--window", type=int, default=None, help="PMI window width (default 5)")
    p.add_argument("--per-class-labeled", type=int, default=None,
                   help="labeled docs sampled per class (default 40)")
    p.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--out", required=True, help="run directory to create")
    p.set_defaults(func=cmd_preprocess)

    t = sub.add_parser("train", help="train on a preprocessed run directory")
    t.add_argument("--run", required=True, help="run directory from preprocess")
    t.add_argument("--config", default=None, help="TOML config file")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--parallel", action="store_true", help="parallel task heads")
    t.add_argument("--repeats", type=int, default=1,
                   help="repeat training, re-seeding split and init each time")
    t.add_argument("--dump-pseudo", action="store_true",
                   help="dump per-epoch pseudo-label TSVs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a trained checkpoint")
    e.add_argument("--run", required=True)
    e.add_argument("--split", choices=("train", "validation", "test"), default="test")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="run the ablation variant grid")
    a.add_argument("--run", required=True)
    a.add_argument("--config", default=None)
    a.add_argument("--epochs", type=int, default=None)
    a.add_argument("--seed", type=int, default=None)
    a.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ShortGCLError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
