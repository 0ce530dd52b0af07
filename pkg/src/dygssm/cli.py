"""Command-line pipeline: ``prepare``, ``synth``, ``train``, ``evaluate``.

Everything lives in one run directory::

    config.txt          resolved configuration of the prepare step
    nodes.csv           original node id -> dense index
    snapshots/          one edge file per snapshot
    walks.csv           precomputed walk summaries
    planted.csv         ground-truth pairs (synthetic data only)
    seed_<s>/           config.txt, checkpoint.zip, history.csv,
                        metrics_k<k>.json, per_snapshot_k<k>.csv
    summary_k<k>.json   mean and std over seeds

Any config key can be overridden with ``--key value`` (underscores become
dashes, booleans accept a bare flag).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import ConfigError, DyGSSMError, InputError
from .evaluation import evaluate
from .graph import (DynamicGraph, load_dataset, read_snapshots, summary_line, write_node_mapping,
                    write_snapshots)
from .model import ModelParams, load_checkpoint, save_checkpoint
from .synthetic import SyntheticSpec, generate_synthetic
from .trainer import TrainedModel, history_csv, model_config, prepare_data, split_index, train
from .walk import WalkConfig, build_cache, load_cache

log = logging.getLogger("dygssm")

CONFIG = "config.txt"
NODES = "nodes.csv"
SNAPSHOTS = "snapshots"
WALKS = "walks.csv"
PLANTED = "planted.csv"
CHECKPOINT = "checkpoint.zip"
HISTORY = "history.csv"


# ---------------------------------------------------------------- arguments


def _add_overrides(p: argparse.ArgumentParser, skip=("seed",)) -> None:
    g = p.add_argument_group("config overrides")
    for f in fields(RunConfig):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            g.add_argument(flag, dest=f.name, nargs="?", const="true", default=None, metavar="BOOL")
        else:
            g.add_argument(flag, dest=f.name, default=None, metavar=f.type.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dygssm", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="snapshot a dataset and precompute walk summaries")
    p.add_argument("--config", help="config file (flags override its keys)")
    p.add_argument("--seed", type=int, default=None, help="walk / generator seed")
    _add_overrides(p)

    p = sub.add_parser("synth", help="generate a synthetic dataset and prepare it")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=None)
    _add_overrides(p)

    for name, text in (("train", "train one model per seed"), ("evaluate", "evaluate trained checkpoints")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="defaults to <out-dir>/config.txt when present")
        p.add_argument("--seed", type=int, nargs="+", required=True)
        _add_overrides(p)
    return parser


def _overrides(args) -> dict:
    return {f.name: getattr(args, f.name) for f in fields(RunConfig)
            if f.name != "seed" and getattr(args, f.name, None) is not None}


def resolve_config(args, prepared: bool) -> RunConfig:
    """Config file (explicit, else the prepared one), then flag overrides."""
    over = _overrides(args)
    path = args.config
    if path is None and prepared:
        out_dir = Path(over.get("out_dir", RunConfig.out_dir))
        if (out_dir / CONFIG).exists():
            path = out_dir / CONFIG
    cfg = RunConfig.load(path, **over) if path else RunConfig.from_mapping(over)
    return cfg


# ------------------------------------------------------------------- stages


def _synthetic_spec(cfg: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(cfg.syn_nodes, cfg.syn_snapshots, cfg.syn_planted, cfg.syn_period,
                         cfg.syn_persistence, cfg.syn_noise, cfg.syn_dropout, cfg.feature_dim)


def walk_config(cfg: RunConfig) -> WalkConfig:
    return WalkConfig(cfg.walk_p, cfg.walk_q, cfg.walks_per_node, cfg.walk_length, cfg.top_k)


def prepare(cfg: RunConfig) -> DynamicGraph:
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    planted = None
    if cfg.dataset == "synthetic":
        syn = generate_synthetic(_synthetic_spec(cfg), cfg.seed)
        graph, planted = syn.graph, syn.planted
    else:
        graph = load_dataset(cfg.dataset, cfg.snapshots or None, cfg.feature_dim, cfg.cumulative)
    cfg.save(out / CONFIG)
    write_node_mapping(out / NODES, graph.node_ids or range(graph.node_count))
    snap_dir = out / SNAPSHOTS
    for old in snap_dir.glob("snapshot_*.csv"):
        old.unlink()
    write_snapshots(snap_dir, graph)
    build_cache(graph, walk_config(cfg), cfg.seed, out / WALKS)
    if planted is not None:
        with open(out / PLANTED, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source", "target"])
            w.writerows(planted.tolist())
    return graph


def load_prepared(cfg: RunConfig):
    out = Path(cfg.out_dir)
    nodes = out / NODES
    if not nodes.exists():
        raise InputError(f"{out} is not prepared (missing {NODES}); run `dygssm prepare` first")
    with open(nodes, newline="", encoding="utf-8") as fh:
        n = sum(1 for _ in fh) - 1
    graph = read_snapshots(out / SNAPSHOTS, n, cfg.feature_dim)
    cache = load_cache(out / WALKS)
    if cache.top_k != cfg.top_k:
        raise ConfigError(f"walk cache has top_k={cache.top_k}, config says {cfg.top_k}")
    return graph, cache


def train_seed(cfg: RunConfig, graph, cache, data=None) -> Path:
    seed_dir = Path(cfg.out_dir) / f"seed_{cfg.seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(seed_dir / CONFIG)
    model, history = train(graph, cache, cfg, data)
    save_checkpoint(model.params, seed_dir / CHECKPOINT)
    (seed_dir / HISTORY).write_text(history_csv(history), encoding="utf-8")
    return seed_dir


def _check_compatible(params: ModelParams, cfg: RunConfig, n: int) -> None:
    expected = ModelParams.init(model_config(cfg, n), np.random.default_rng(0)).tensors()
    got = params.tensors()
    problems = []
    for name in sorted(set(expected) | set(got)):
        if name not in got:
            problems.append(f"missing {name}")
        elif name not in expected:
            problems.append(f"unexpected {name}")
        elif expected[name].shape != got[name].shape:
            problems.append(f"{name}: checkpoint {got[name].shape} vs config {expected[name].shape}")
    if problems:
        raise ConfigError("checkpoint is incompatible with the config:\n  " + "\n  ".join(problems))


def evaluate_seed(cfg: RunConfig, graph, data) -> dict:
    seed_dir = Path(cfg.out_dir) / f"seed_{cfg.seed}"
    params = load_checkpoint(seed_dir / CHECKPOINT)
    _check_compatible(params, cfg, graph.node_count)
    model = TrainedModel(params, model_config(cfg, graph.node_count))
    n_train = split_index(len(graph), cfg.train_fraction)
    report = evaluate(model, data, range(n_train, len(graph)), cfg.k_neg, cfg.seed)
    (seed_dir / f"metrics_k{cfg.k_neg}.json").write_text(report.to_json(), encoding="utf-8")
    (seed_dir / f"per_snapshot_k{cfg.k_neg}.csv").write_text(report.to_csv(), encoding="utf-8")
    return report.to_dict()


METRICS = ("accuracy", "auc", "average_precision", "mrr", "recall_at_10")


def summarize(reports: list[dict], k_neg: int) -> dict:
    out = {"k_neg": k_neg, "seeds": [r["seed"] for r in reports]}
    for m in METRICS:
        vals = np.array([r[m] for r in reports], dtype=np.float64)
        out[m] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out


# --------------------------------------------------------------------- main


def _run(args) -> int:
    if args.command in ("prepare", "synth"):
        cfg = resolve_config(args, prepared=False)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.command == "synth":
            cfg.dataset = "synthetic"
        graph = prepare(cfg)
        print(summary_line(graph))
        return 0

    base = resolve_config(args, prepared=True)
    configs = [base.replace(seed=s).validate() for s in args.seed]
    graph, cache = load_prepared(base)
    data = prepare_data(graph, cache)
    if args.command == "train":
        for cfg in configs:
            seed_dir = train_seed(cfg, graph, cache, data)
            print(f"seed {cfg.seed}: {seed_dir / CHECKPOINT}")
        return 0

    reports = [evaluate_seed(cfg, graph, data) for cfg in configs]
    summary = summarize(reports, base.k_neg)
    if len(reports) > 1:
        path = Path(base.out_dir) / f"summary_k{base.k_neg}.json"
        path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    for m in METRICS:
        s = summary[m]
        print(f"{m:<18} {s['mean']:.4f} ± {s['std']:.4f}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except DyGSSMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
