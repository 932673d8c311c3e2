"""``mxpool`` command line: dataset stats, training, evaluation, CV and attention analysis."""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from sklearn.model_selection import train_test_split

from . import harness as H
from .estimator import MxPoolClassifier
from .exceptions import ConfigurationError, FormatError, MxPoolError
from .graph_io import PROPERTY_NAMES, dataset_statistics, parse_tu_dataset, standardize_properties
from .model import ModelConfig

DATA_ROOT_ENV = "MXPOOL_DATA_ROOT"

# config-file section of every RunConfig field that can be set from a file
SECTIONS = {
    "data": ("dataset_dir", "dataset", "node_cap", "min_nodes", "use_node_attributes"),
    "model": ("mode", "layers", "gcn_steps", "num_conv_nets", "num_pool_nets", "dims", "ratios",
              "pool_hidden", "assignment_merge"),
    "train": ("lr", "epochs", "batch_size", "seed", "folds", "repeats", "aux_link", "aux_entropy",
              "n_jobs", "out_dir"),
}


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from None


def _optional_int(text):
    return None if str(text).strip().lower() in ("", "none") else int(text)


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


CONVERTERS = {
    "dims": _int_list,
    "ratios": _float_list,
    "node_cap": _optional_int,
    "min_nodes": _optional_int,
    "use_node_attributes": _bool,
}


def _convert(key: str, raw):
    if key in CONVERTERS:
        return CONVERTERS[key](raw)
    default = getattr(H.RunConfig(), key)
    try:
        return type(default)(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None


def parse_num_networks(text: str) -> list:
    """``"3"`` or an inclusive range ``"1..5"``."""
    try:
        if ".." in text:
            lo, hi = (int(v) for v in text.split("..", 1))
            if lo < 1 or hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(text)]
    except ValueError:
        raise ConfigurationError(f"--num-networks expects N or LO..HI with 1 <= LO <= HI, got {text!r}") from None


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise FormatError(f"{path}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"{path}: unknown section [{section}] (expected data, model, train)")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigurationError(f"{path}: unknown key {key!r} in [{section}]")
            values[key] = _convert(key, raw)
    return values


def write_config_file(path, config: H.RunConfig) -> Path:
    parser = configparser.ConfigParser()
    for section, keys in SECTIONS.items():
        parser[section] = {}
        for key in keys:
            value = getattr(config, key)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            parser[section][key] = "none" if value is None else str(value)
    with open(path, "w") as fh:
        parser.write(fh)
    return Path(path)


def build_config(args) -> H.RunConfig:
    """Defaults, then the config file, then explicitly given flags."""
    values = {"dataset_dir": os.environ.get(DATA_ROOT_ENV, ".")}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in dataclasses.fields(H.RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    return H.RunConfig(**values).validate()


def load_dataset(config: H.RunConfig):
    dataset = parse_tu_dataset(config.dataset_dir, config.dataset, use_node_attributes=config.use_node_attributes)
    return config.apply_node_range(dataset)


# ---------------------------------------------------------------------------
# commands


def cmd_stats(args) -> int:
    config = build_config(args)
    dataset = parse_tu_dataset(config.dataset_dir, config.dataset, use_node_attributes=config.use_node_attributes)
    s = dataset_statistics(dataset)
    print(f"dataset   {config.dataset}")
    print(f"graphs    {s['graphs']}")
    print(f"classes   {s['classes']}")
    print(f"nodes     [{s['min_nodes']},{s['max_nodes']}]")
    print(f"edges     [{s['min_edges']},{s['max_edges']}]")
    print(f"avg-deg   [{s['min_avg_degree']:.2f},{s['max_avg_degree']:.2f}]")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "graphs", "classes", "min_nodes", "max_nodes", "min_edges", "max_edges",
                        "min_avg_degree", "max_avg_degree"])
            w.writerow([config.dataset, s["graphs"], s["classes"], s["min_nodes"], s["max_nodes"], s["min_edges"],
                        s["max_edges"], f"{s['min_avg_degree']:.2f}", f"{s['max_avg_degree']:.2f}"])
    return 0


def _split(labels: np.ndarray, seed: int) -> tuple:
    idx = np.arange(len(labels))
    try:
        train, test = train_test_split(idx, test_size=0.2, stratify=labels, random_state=seed)
    except ValueError as exc:
        raise ConfigurationError(f"cannot make a stratified 80/20 split: {exc}") from None
    return np.sort(train), np.sort(test)


def cmd_train(args) -> int:
    config = build_config(args)
    dataset = load_dataset(config)
    train_idx, test_idx = _split(dataset.labels, config.seed)
    est = config.estimator(dataset.max_nodes, dataset.num_classes, config.seed)
    est.fit(dataset.subset(train_idx).graphs, property_norm=standardize_properties(dataset, train_idx))
    acc = H.accuracy(est, dataset.subset(test_idx).graphs)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    est.save(out / "model.ckpt")
    write_config_file(out / "config.ini", config)
    with open(out / "split.json", "w") as fh:
        json.dump({"train": train_idx.tolist(), "test": test_idx.tolist()}, fh)
    print(f"test accuracy {acc:.4f} ({len(test_idx)} graphs)")
    print(f"checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    config = build_config(args)
    dataset = load_dataset(config)
    conv_dims, pool_ratios = config.networks()
    expected = ModelConfig(
        input_dim=dataset.feature_dim,
        num_classes=dataset.num_classes,
        max_nodes=dataset.max_nodes,
        n_layers=config.layers,
        gcn_steps=config.gcn_steps,
        conv_dims=conv_dims,
        pool_ratios=pool_ratios,
        pool_hidden=config.pool_hidden,
        assignment_merge=config.assignment_merge,
    )
    ckpt = Path(args.checkpoint)
    est = MxPoolClassifier.load(ckpt, expected_config=expected)
    if args.split == "all":
        idx = np.arange(len(dataset.graphs))
    else:
        split_file = Path(args.split_file) if args.split_file else ckpt.parent / "split.json"
        if not split_file.is_file():
            raise FormatError(f"split file not found: expected {split_file}")
        with open(split_file) as fh:
            idx = np.array(json.load(fh)[args.split], dtype=int)
    acc = H.accuracy(est, dataset.subset(idx).graphs)
    print(f"{args.split} accuracy {acc:.4f} ({len(idx)} graphs)")
    return 0


def _run_cv(dataset, config: H.RunConfig, out: Path) -> H.RunReport:
    out.mkdir(parents=True, exist_ok=True)
    report = H.cross_validate(dataset, config, checkpoint_dir=out / "checkpoints")
    report.write_report_csv(out / "report.csv")
    report.write_attention_csv(out / "attention.csv")
    write_config_file(out / "config.ini", config)
    with open(out / "summary.json", "w") as fh:
        json.dump({"mode": config.mode, "mean": report.mean, "std": report.std,
                   "runs": len(report.entries), "wall_clock_seconds": report.wall_clock,
                   "networks": [list(v) for v in config.networks()]}, fh, indent=2)
    return report


def cmd_cv(args) -> int:
    config = build_config(args)
    dataset = load_dataset(config)
    out = Path(config.out_dir)
    if args.num_networks:
        counts = parse_num_networks(args.num_networks)
        for k in counts:
            cfg = dataclasses.replace(config, num_conv_nets=k, num_pool_nets=k).validate()
            report = _run_cv(dataset, cfg, out / f"networks_{k}")
            print(f"networks={k} {report.summary()}")
    else:
        report = _run_cv(dataset, config, out)
        print(report.summary())
    return 0


def cmd_inspect_attention(args) -> int:
    report_dir = Path(args.report_dir)
    rows = H.read_attention_csv(report_dir / "attention.csv")
    buckets = H.bucket_attention(rows, args.property, args.buckets, layer=args.layer)
    target = Path(args.output) if args.output else report_dir / f"attention_buckets_{args.property}.csv"
    H.write_buckets_csv(target, buckets)
    for b in buckets:
        alpha = " ".join(f"{v:.4f}" for v in b["alpha"])
        beta = " ".join(f"{v:.4f}" for v in b["beta"])
        print(f"bucket {b['bucket']} {args.property}=[{b['lo']:g},{b['hi']:g}] n={b['count']} "
              f"alpha=[{alpha}] beta=[{beta}]")
    print(f"wrote {target}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _common(parser: argparse.ArgumentParser):
    g = parser.add_argument_group("data and model")
    g.add_argument("--config", help="INI file with [data], [model] and [train] sections")
    g.add_argument("--dataset-dir", help=f"dataset root (default: ${DATA_ROOT_ENV} or .)")
    g.add_argument("--dataset", help="dataset name, e.g. ENZYMES")
    g.add_argument("--node-attributes", dest="use_node_attributes", action="store_const", const=True,
                   help="append continuous node attributes to the features")
    g.add_argument("--node-cap", type=int, help="drop graphs with more nodes than this")
    g.add_argument("--min-nodes", type=int, help="drop graphs with fewer nodes than this")
    g.add_argument("--mode", type=str.lower, choices=H.MODES)
    g.add_argument("--layers", type=int)
    g.add_argument("--gcn-steps", type=int)
    g.add_argument("--num-conv-nets", type=int)
    g.add_argument("--num-pool-nets", type=int)
    g.add_argument("--dims", type=_int_list, help="comma-separated conv widths")
    g.add_argument("--ratios", type=_float_list, help="comma-separated coarsening ratios")
    g.add_argument("--pool-hidden", type=int)
    g.add_argument("--assignment-merge", choices=("softmax", "linear"))
    t = parser.add_argument_group("training")
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--folds", type=int)
    t.add_argument("--repeats", type=int)
    t.add_argument("--aux-link", type=float)
    t.add_argument("--aux-entropy", type=float)
    t.add_argument("--n-jobs", type=int, help="parallel fold workers")
    t.add_argument("--out-dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mxpool", description="Multiplexed GCN pooling for graph classification.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="print dataset statistics")
    _common(p)
    p.add_argument("--csv", help="also write the statistics row to this CSV file")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train on a stratified 80/20 split and save a checkpoint")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a saved split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--split-file", help="default: split.json next to the checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="repeated k-fold cross-validation")
    _common(p)
    p.add_argument("--num-networks", help="sweep n_c = n_p over N or LO..HI, one report per value")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("inspect-attention", help="bucket logged attention weights by a graph property")
    p.add_argument("--report-dir", required=True, help="directory holding attention.csv")
    p.add_argument("--property", choices=PROPERTY_NAMES, default="nodes")
    p.add_argument("--buckets", type=int, default=5)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--output", help="default: attention_buckets_<property>.csv in the report dir")
    p.set_defaults(func=cmd_inspect_attention)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except MxPoolError as exc:
        print(f"mxpool {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
