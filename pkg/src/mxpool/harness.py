"""Cross-validated training, ablation modes and attention bookkeeping."""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .estimator import MxPoolClassifier
from .exceptions import ConfigurationError, FormatError
from .graph_io import PROPERTY_NAMES, FoldPlan, GraphDataset, make_folds, standardize_properties

log = logging.getLogger(__name__)

MODES = ("scsp", "mcsp", "scmp", "mcmp")


def _select(values: Sequence, k: int, integer: bool) -> tuple:
    """First ``k`` settings, or ``k`` evenly spaced ones over their range when more are asked for."""
    values = list(values)
    if k <= len(values):
        picked = values[:k]
    else:
        picked = list(np.linspace(min(values), max(values), k))
    return tuple(int(round(v)) for v in picked) if integer else tuple(float(v) for v in picked)


@dataclass
class RunConfig:
    dataset_dir: str = "."
    dataset: str = "ENZYMES"
    mode: str = "mcmp"
    layers: int = 2
    gcn_steps: int = 3
    num_conv_nets: int = 3
    num_pool_nets: int = 3
    dims: tuple = (32, 64, 128)
    ratios: tuple = (0.05, 0.1, 0.15)
    pool_hidden: int = 32
    assignment_merge: str = "softmax"
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 20
    seed: int = 0
    folds: int = 10
    repeats: int = 3
    node_cap: int | None = None
    min_nodes: int | None = None
    aux_link: float = 0.0
    aux_entropy: float = 0.0
    use_node_attributes: bool = False
    n_jobs: int = 1
    out_dir: str = "runs"

    def __post_init__(self):
        self.mode = str(self.mode).lower()
        self.dims = tuple(int(d) for d in self.dims)
        self.ratios = tuple(float(r) for r in self.ratios)

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigurationError(f"--mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.layers < 1 or self.gcn_steps < 1:
            raise ConfigurationError("--layers and --gcn-steps must be >= 1")
        if self.num_conv_nets < 1 or self.num_pool_nets < 1:
            raise ConfigurationError("--num-conv-nets and --num-pool-nets must be >= 1")
        if not self.dims or min(self.dims) < 1:
            raise ConfigurationError(f"--dims must be positive integers, got {self.dims}")
        if not self.ratios or min(self.ratios) <= 0:
            raise ConfigurationError(f"--ratios must be positive, got {self.ratios}")
        if self.lr < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("--lr and --epochs must be >= 0 and the batch size >= 1")
        if self.folds < 2 or self.repeats < 1:
            raise ConfigurationError("--folds must be >= 2 and --repeats >= 1")
        if self.node_cap is not None and self.node_cap < 1:
            raise ConfigurationError("--node-cap must be >= 1")
        if self.aux_link < 0 or self.aux_entropy < 0:
            raise ConfigurationError("auxiliary loss weights must be >= 0")
        if self.assignment_merge not in ("softmax", "linear"):
            raise ConfigurationError("assignment_merge must be 'softmax' or 'linear'")
        return self

    def networks(self) -> tuple:
        """``(conv_dims, pool_ratios)`` after applying the ablation mode."""
        n_c = 1 if self.mode in ("scsp", "scmp") else self.num_conv_nets
        n_p = 1 if self.mode in ("scsp", "mcsp") else self.num_pool_nets
        return _select(self.dims, n_c, integer=True), _select(self.ratios, n_p, integer=False)

    def estimator(self, max_nodes: int, num_classes: int, seed: int) -> MxPoolClassifier:
        conv_dims, pool_ratios = self.networks()
        return MxPoolClassifier(
            n_layers=self.layers,
            gcn_steps=self.gcn_steps,
            conv_dims=conv_dims,
            pool_ratios=pool_ratios,
            pool_hidden=self.pool_hidden,
            assignment_merge=self.assignment_merge,
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            aux_link=self.aux_link,
            aux_entropy=self.aux_entropy,
            max_nodes=max_nodes,
            num_classes=num_classes,
            random_state=seed,
        )

    def apply_node_range(self, dataset: GraphDataset) -> GraphDataset:
        if self.node_cap is None and self.min_nodes is None:
            return dataset
        kept = dataset.filter_nodes(self.min_nodes, self.node_cap)
        if not kept.graphs:
            raise ConfigurationError(
                f"no graphs left after node range [{self.min_nodes}, {self.node_cap}] filtering"
            )
        return kept


@dataclass
class RunReport:
    mode: str
    entries: list = field(default_factory=list)
    attention: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([e["accuracy"] for e in self.entries])

    @property
    def mean(self) -> float:
        return float(self.accuracies.mean())

    @property
    def std(self) -> float:
        return float(self.accuracies.std())

    def summary(self) -> str:
        return f"{self.mode.upper()}: {100 * self.mean:.2f} ± {100 * self.std:.2f} ({len(self.entries)} runs)"

    def write_report_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mode", "repeat", "fold", "seed", "n_train", "n_test", "accuracy"])
            for e in self.entries:
                w.writerow([self.mode, e["repeat"], e["fold"], e["seed"], e["n_train"], e["n_test"], repr(e["accuracy"])])
        return path

    def write_attention_csv(self, path) -> Path:
        return write_attention_csv(path, self.attention)


# ---------------------------------------------------------------------------
# training


def accuracy(estimator: MxPoolClassifier, graphs) -> float:
    labels = np.array([g.label for g in graphs])
    return float(np.mean(estimator.predict(graphs) == labels))


def train_fold(dataset: GraphDataset, fold_plan: FoldPlan, fold_index: int, config: RunConfig,
               seed: int | None = None) -> tuple:
    """Train on every fold but ``fold_index``; return ``(estimator, test accuracy)``."""
    train_idx = fold_plan.train_indices(fold_index)
    test_idx = fold_plan.test_indices(fold_index)
    if train_idx.size == 0:
        raise ConfigurationError(f"fold {fold_index} leaves no training graphs")
    seed = fold_plan.seed if seed is None else seed
    norm = standardize_properties(dataset, train_idx)
    est = config.estimator(dataset.max_nodes, dataset.num_classes, seed)
    est.fit([dataset.graphs[i] for i in train_idx], property_norm=norm)
    test = [dataset.graphs[i] for i in test_idx]
    return est, (accuracy(est, test) if test else float("nan"))


def _run_one(dataset, plan, fold, repeat, config):
    est, acc = train_fold(dataset, plan, fold, config)
    test = [dataset.graphs[i] for i in plan.test_indices(fold)]
    rows = []
    for row in est.attention(test):
        rows.append({"repeat": repeat, "fold": fold, **row})
    entry = {
        "repeat": repeat,
        "fold": fold,
        "seed": plan.seed,
        "n_train": int(plan.train_indices(fold).size),
        "n_test": len(test),
        "accuracy": acc,
    }
    return entry, rows, est


def cross_validate(dataset: GraphDataset, config: RunConfig, checkpoint_dir=None) -> RunReport:
    """``repeats`` rounds of ``folds``-fold CV; repeat ``r`` uses seed ``config.seed + r``."""
    config.validate()
    dataset = config.apply_node_range(dataset)
    start = time.perf_counter()
    jobs = []
    for r in range(config.repeats):
        plan = make_folds(dataset.labels, config.seed + r, config.folds)
        jobs.extend((plan, fold, r) for fold in range(config.folds))
    if config.n_jobs == 1:
        results = [_run_one(dataset, plan, fold, r, config) for plan, fold, r in jobs]
    else:
        results = Parallel(n_jobs=config.n_jobs)(
            delayed(_run_one)(dataset, plan, fold, r, config) for plan, fold, r in jobs
        )
    report = RunReport(mode=config.mode)
    for entry, rows, est in results:
        report.entries.append(entry)
        report.attention.extend(rows)
        log.info("repeat %d fold %d accuracy %.4f", entry["repeat"], entry["fold"], entry["accuracy"])
        if checkpoint_dir is not None:
            Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
            est.save(Path(checkpoint_dir) / f"repeat{entry['repeat']}_fold{entry['fold']}.ckpt")
    report.wall_clock = time.perf_counter() - start
    return report


def run_ablation(dataset: GraphDataset, config: RunConfig, modes: Iterable[str] = MODES) -> dict:
    """One report per ablation mode, all on the same fold plans and seeds."""
    return {m: cross_validate(dataset, dataclasses.replace(config, mode=m)) for m in modes}


# ---------------------------------------------------------------------------
# attention logs


def write_attention_csv(path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    n_alpha = max((len(r["alpha"]) for r in rows), default=0)
    n_beta = max((len(r["beta"]) for r in rows), default=0)
    header = (
        ["repeat", "fold", "graph_id", "layer"]
        + list(PROPERTY_NAMES)
        + [f"std_{p}" for p in PROPERTY_NAMES]
        + [f"alpha_{i}" for i in range(n_alpha)]
        + [f"beta_{i}" for i in range(n_beta)]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(
                [r.get("repeat", 0), r.get("fold", 0), r["graph_id"], r["layer"]]
                + [repr(float(v)) for v in r["raw"]]
                + [repr(float(v)) for v in r["std"]]
                + [repr(float(v)) for v in r["alpha"]]
                + [repr(float(v)) for v in r["beta"]]
            )
    return path


def read_attention_csv(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"attention log not found: expected {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            alpha = [float(v) for k, v in rec.items() if k.startswith("alpha_")]
            beta = [float(v) for k, v in rec.items() if k.startswith("beta_")]
            rows.append({
                "repeat": int(rec["repeat"]),
                "fold": int(rec["fold"]),
                "graph_id": int(rec["graph_id"]),
                "layer": int(rec["layer"]),
                "raw": np.array([float(rec[p]) for p in PROPERTY_NAMES]),
                "std": np.array([float(rec[f"std_{p}"]) for p in PROPERTY_NAMES]),
                "alpha": np.array(alpha),
                "beta": np.array(beta),
            })
    return rows


def bucket_attention(report, property: str = "nodes", num_buckets: int = 5, layer: int = 0) -> list:
    """Equal-frequency buckets of logged test graphs by one raw property.

    Graphs sharing a property value always land in the same bucket, so the
    number of non-empty buckets can be smaller than ``num_buckets``. Returns
    one dict per non-empty bucket with the value range, count and the mean
    alpha / beta vectors.
    """
    rows = report.attention if isinstance(report, RunReport) else list(report)
    if property not in PROPERTY_NAMES:
        raise ConfigurationError(f"property must be one of {PROPERTY_NAMES}, got {property!r}")
    if num_buckets < 1:
        raise ConfigurationError("need at least one bucket")
    rows = [r for r in rows if r["layer"] == layer]
    if len(rows) < num_buckets:
        raise ConfigurationError(f"{len(rows)} logged graphs cannot fill {num_buckets} buckets")
    col = PROPERTY_NAMES.index(property)
    values = np.array([r["raw"][col] for r in rows])
    sorted_values = np.sort(values)
    below = np.searchsorted(sorted_values, values, side="left")
    bucket = np.minimum(num_buckets - 1, (num_buckets * below) // len(rows))
    alpha = np.stack([r["alpha"] for r in rows])
    beta = np.stack([r["beta"] for r in rows])
    out = []
    for b in range(num_buckets):
        mask = bucket == b
        if not mask.any():
            continue
        out.append({
            "bucket": b,
            "property": property,
            "layer": layer,
            "lo": float(values[mask].min()),
            "hi": float(values[mask].max()),
            "count": int(mask.sum()),
            "alpha": alpha[mask].mean(axis=0),
            "beta": beta[mask].mean(axis=0),
        })
    return out


def write_buckets_csv(path, buckets: Sequence[dict]) -> Path:
    path = Path(path)
    n_alpha = len(buckets[0]["alpha"]) if buckets else 0
    n_beta = len(buckets[0]["beta"]) if buckets else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket", "property", "layer", "lo", "hi", "count"]
                   + [f"alpha_{i}" for i in range(n_alpha)] + [f"beta_{i}" for i in range(n_beta)])
        for b in buckets:
            w.writerow([b["bucket"], b["property"], b["layer"], repr(b["lo"]), repr(b["hi"]), b["count"]]
                       + [repr(float(v)) for v in b["alpha"]] + [repr(float(v)) for v in b["beta"]])
    return path
