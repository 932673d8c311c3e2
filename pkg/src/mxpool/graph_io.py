"""TU-format dataset loading, graph property vectors and fold assignment.

The TU benchmark layout is a directory holding ``<DS>_A.txt`` (one directed
edge per line, 1-indexed global node ids), ``<DS>_graph_indicator.txt``,
``<DS>_graph_labels.txt`` and optionally ``<DS>_node_labels.txt`` /
``<DS>_node_attributes.txt``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigurationError, FormatError, IntegrityError

__all__ = [
    "Graph",
    "GraphDataset",
    "PropertyNorm",
    "FoldPlan",
    "PROPERTY_NAMES",
    "parse_tu_dataset",
    "write_tu_dataset",
    "resolve_dataset_dir",
    "compute_property_vector",
    "standardize_properties",
    "fit_property_norm",
    "make_folds",
    "dataset_statistics",
]

PROPERTY_NAMES = ("nodes", "edges", "avg_degree")
STD_FLOOR = 1e-8


def compute_property_vector(adjacency: np.ndarray) -> np.ndarray:
    """Return ``(n, m, 2m/n)`` for a symmetric adjacency with zero diagonal."""
    adjacency = np.asarray(adjacency)
    n = adjacency.shape[0]
    m = int(np.count_nonzero(np.triu(adjacency, k=1)))
    return np.array([float(n), float(m), 2.0 * m / n])


@dataclass(eq=False)
class Graph:
    adjacency: np.ndarray
    features: np.ndarray
    label: int
    property_vector: np.ndarray = None
    graph_id: int = 0

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        n = self.adjacency.shape[0]
        if n < 1 or self.adjacency.shape != (n, n):
            raise IntegrityError(f"graph {self.graph_id}: adjacency must be a non-empty square matrix")
        if self.features.shape[0] != n:
            raise IntegrityError(
                f"graph {self.graph_id}: {self.features.shape[0]} feature rows for {n} nodes"
            )
        if self.property_vector is None:
            self.property_vector = compute_property_vector(self.adjacency)
        else:
            self.property_vector = np.asarray(self.property_vector, dtype=np.float64)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        return int(self.property_vector[1])

    def permuted(self, perm: Sequence[int]) -> "Graph":
        """Copy with nodes reordered so that new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm)
        return Graph(
            adjacency=self.adjacency[np.ix_(perm, perm)],
            features=self.features[perm],
            label=self.label,
            property_vector=self.property_vector.copy(),
            graph_id=self.graph_id,
        )


@dataclass(frozen=True)
class PropertyNorm:
    """Per-component statistics of ``log(1 + property)`` over a training split."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        return (np.log1p(raw) - self.mean) / self.std


@dataclass
class GraphDataset:
    graphs: list
    num_classes: int
    feature_dim: int
    property_norm: PropertyNorm | None = None
    name: str = ""
    label_values: tuple = ()

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, idx):
        return self.graphs[idx]

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    @property
    def max_nodes(self) -> int:
        return max(g.num_nodes for g in self.graphs)

    def subset(self, indices: Iterable[int]) -> "GraphDataset":
        return dataclasses.replace(self, graphs=[self.graphs[i] for i in indices])

    def filter_nodes(self, min_nodes: int | None = None, max_nodes: int | None = None) -> "GraphDataset":
        """Keep graphs whose node count lies in ``[min_nodes, max_nodes]``."""
        lo = 0 if min_nodes is None else min_nodes
        hi = np.inf if max_nodes is None else max_nodes
        return dataclasses.replace(self, graphs=[g for g in self.graphs if lo <= g.num_nodes <= hi])


@dataclass(frozen=True)
class FoldPlan:
    fold_assignments: np.ndarray
    seed: int
    n_folds: int = 10

    def test_indices(self, fold: int) -> np.ndarray:
        self._check(fold)
        return np.flatnonzero(self.fold_assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        self._check(fold)
        return np.flatnonzero(self.fold_assignments != fold)

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.fold_assignments, minlength=self.n_folds)

    def _check(self, fold):
        if not 0 <= fold < self.n_folds:
            raise ConfigurationError(f"fold index {fold} outside [0, {self.n_folds})")


# ---------------------------------------------------------------------------
# parsing


def _read_int_rows(path: Path, width: int) -> np.ndarray:
    if not path.is_file():
        raise FormatError(f"missing dataset file: {path}")
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} comma-separated values, got {line!r}")
            try:
                rows.append([int(p) for p in parts])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer value in {line!r}") from None
    return np.array(rows, dtype=np.int64).reshape(-1, width)


def _read_float_rows(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(p) for p in line.split(",")])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
    try:
        return np.array(rows, dtype=np.float64)
    except ValueError:
        raise FormatError(f"{path}: ragged attribute rows") from None


def resolve_dataset_dir(root: str | os.PathLike, name: str) -> Path:
    """Accept either the dataset directory itself or a root holding ``<name>/``."""
    root = Path(root)
    if (root / name / f"{name}_A.txt").is_file():
        return root / name
    return root


def parse_tu_dataset(
    directory_path: str | os.PathLike,
    dataset_name: str,
    *,
    use_node_attributes: bool = False,
    strict: bool = True,
) -> GraphDataset:
    """Parse a TU benchmark directory into a :class:`GraphDataset`.

    Node labels become one-hot features; without them every node gets the
    constant feature ``[1.0]``. Graph labels are remapped to ``0..C-1`` in
    sorted order of the raw values. With ``strict`` (default) self-loops and
    repeated edge lines raise :class:`IntegrityError`; otherwise they are
    dropped.
    """
    directory = resolve_dataset_dir(directory_path, dataset_name)
    prefix = directory / dataset_name

    edges = _read_int_rows(Path(f"{prefix}_A.txt"), 2)
    indicator = _read_int_rows(Path(f"{prefix}_graph_indicator.txt"), 1)[:, 0]
    raw_graph_labels = _read_int_rows(Path(f"{prefix}_graph_labels.txt"), 1)[:, 0]

    num_nodes = indicator.size
    num_graphs = raw_graph_labels.size
    if num_nodes == 0 or num_graphs == 0:
        raise FormatError(f"{directory}: empty graph indicator or label file")

    bad = (indicator < 1) | (indicator > num_graphs)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise IntegrityError(
            f"{prefix}_graph_indicator.txt:{k + 1}: graph id {indicator[k]} has no entry in the "
            f"{num_graphs}-line graph label file"
        )
    counts = np.bincount(indicator, minlength=num_graphs + 1)[1:]
    if (counts == 0).any():
        g = int(np.flatnonzero(counts == 0)[0]) + 1
        raise IntegrityError(f"{prefix}_graph_labels.txt:{g}: graph {g} has no nodes in the indicator file")

    if edges.size:
        bad = (edges < 1) | (edges > num_nodes)
        if bad.any():
            row = int(np.flatnonzero(bad.any(axis=1))[0])
            raise IntegrityError(
                f"{prefix}_A.txt:{row + 1}: edge {tuple(edges[row])} references a node outside 1..{num_nodes}"
            )
    edges = edges - 1
    gi = indicator - 1

    cross = gi[edges[:, 0]] != gi[edges[:, 1]]
    if cross.any():
        row = int(np.flatnonzero(cross)[0])
        raise IntegrityError(f"{prefix}_A.txt:{row + 1}: edge {tuple(edges[row] + 1)} joins two different graphs")
    loops = edges[:, 0] == edges[:, 1]
    if loops.any():
        if strict:
            row = int(np.flatnonzero(loops)[0])
            raise IntegrityError(f"{prefix}_A.txt:{row + 1}: self-loop on node {edges[row, 0] + 1}")
        edges = edges[~loops]
    _, first, dup_counts = np.unique(edges, axis=0, return_index=True, return_counts=True)
    if (dup_counts > 1).any():
        if strict:
            row = int(first[np.flatnonzero(dup_counts > 1)[0]])
            raise IntegrityError(f"{prefix}_A.txt:{row + 1}: repeated edge {tuple(edges[row] + 1)} (multi-edge)")
        edges = edges[np.sort(first)]

    node_label_path = Path(f"{prefix}_node_labels.txt")
    if node_label_path.is_file():
        node_labels = _read_int_rows(node_label_path, 1)[:, 0]
        if node_labels.size != num_nodes:
            raise IntegrityError(f"{node_label_path}: {node_labels.size} labels for {num_nodes} nodes")
        _, codes = np.unique(node_labels, return_inverse=True)
        features = np.eye(codes.max() + 1)[codes]
    else:
        features = np.ones((num_nodes, 1))
    if use_node_attributes:
        attr_path = Path(f"{prefix}_node_attributes.txt")
        if not attr_path.is_file():
            raise FormatError(f"missing dataset file: {attr_path}")
        attrs = _read_float_rows(attr_path)
        if attrs.shape[0] != num_nodes:
            raise IntegrityError(f"{attr_path}: {attrs.shape[0]} rows for {num_nodes} nodes")
        features = np.hstack([features, attrs])

    label_values, graph_labels = np.unique(raw_graph_labels, return_inverse=True)

    order = np.argsort(gi, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)])
    local = np.empty(num_nodes, dtype=np.int64)
    local[order] = np.arange(num_nodes) - np.repeat(starts[:-1], counts)

    edge_graph = gi[edges[:, 0]]
    edge_order = np.argsort(edge_graph, kind="stable")
    edge_bounds = np.searchsorted(edge_graph[edge_order], np.arange(num_graphs + 1))

    graphs = []
    for g in range(num_graphs):
        n = int(counts[g])
        nodes = order[starts[g]:starts[g + 1]]
        adj = np.zeros((n, n))
        e = edges[edge_order[edge_bounds[g]:edge_bounds[g + 1]]]
        adj[local[e[:, 0]], local[e[:, 1]]] = 1.0
        adj = np.maximum(adj, adj.T)
        graphs.append(Graph(adjacency=adj, features=features[nodes], label=int(graph_labels[g]), graph_id=g))

    return GraphDataset(
        graphs=graphs,
        num_classes=int(label_values.size),
        feature_dim=int(features.shape[1]),
        name=dataset_name,
        label_values=tuple(int(v) for v in label_values),
    )


def _is_one_hot(features: np.ndarray) -> bool:
    return bool(np.all((features == 0) | (features == 1)) and np.all(features.sum(axis=1) == 1))


def write_tu_dataset(dataset: GraphDataset, directory: str | os.PathLike, dataset_name: str) -> Path:
    """Serialize ``dataset`` in TU format; inverse of :func:`parse_tu_dataset`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prefix = directory / dataset_name
    edge_lines, indicator_lines, node_labels, attributes = [], [], [], []
    offset = 0
    for g, graph in enumerate(dataset.graphs, start=1):
        rows, cols = np.nonzero(graph.adjacency)
        edge_lines.extend(f"{r + offset + 1}, {c + offset + 1}" for r, c in zip(rows, cols))
        indicator_lines.extend([str(g)] * graph.num_nodes)
        feats = graph.features
        if _is_one_hot(feats):
            node_labels.extend(str(int(i)) for i in feats.argmax(axis=1))
        else:
            attributes.extend(", ".join(repr(float(v)) for v in row) for row in feats)
        offset += graph.num_nodes

    def dump(path, lines):
        Path(path).write_text("".join(line + "\n" for line in lines))

    dump(f"{prefix}_A.txt", edge_lines)
    dump(f"{prefix}_graph_indicator.txt", indicator_lines)
    dump(f"{prefix}_graph_labels.txt", [str(g.label) for g in dataset.graphs])
    if attributes:
        dump(f"{prefix}_node_attributes.txt", attributes)
    elif dataset.feature_dim > 1:
        dump(f"{prefix}_node_labels.txt", node_labels)
    return directory


# ---------------------------------------------------------------------------
# properties and folds


def standardize_properties(dataset: GraphDataset, training_indices: Sequence[int]) -> PropertyNorm:
    """Log-scale then z-score statistics of the property vectors of the training graphs."""
    training_indices = list(training_indices)
    if not training_indices:
        raise ConfigurationError("property standardization needs at least one training graph")
    return fit_property_norm([dataset.graphs[i] for i in training_indices])


def fit_property_norm(graphs: Sequence[Graph]) -> PropertyNorm:
    logged = np.log1p(np.stack([g.property_vector for g in graphs]))
    return PropertyNorm(mean=logged.mean(axis=0), std=np.maximum(logged.std(axis=0), STD_FLOOR))


def make_folds(labels: Sequence[int] | GraphDataset, seed: int, n_folds: int = 10) -> FoldPlan:
    """Deterministic fold assignment, stratified when every class has ``n_folds`` members.

    Indices are shuffled under ``seed`` (per class when stratifying), laid out
    class after class and dealt round-robin, so fold sizes differ by at most one.
    """
    if isinstance(labels, GraphDataset):
        labels = labels.labels
    labels = np.asarray(labels)
    if labels.size < n_folds:
        raise ConfigurationError(f"{labels.size} graphs cannot fill {n_folds} folds")
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    if counts.min() >= n_folds:
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in classes])
    else:
        order = rng.permutation(labels.size)
    assignments = np.empty(labels.size, dtype=np.int64)
    assignments[order] = np.arange(labels.size) % n_folds
    return FoldPlan(fold_assignments=assignments, seed=seed, n_folds=n_folds)


def dataset_statistics(dataset: GraphDataset) -> dict:
    """Summary in the layout of the usual benchmark statistics table.

    ``avg_degree`` here is the mean row sum of ``A + I`` (every node counts
    itself), which is what the published table reports; the model's property
    vector keeps the plain ``2m/n``.
    """
    nodes = np.array([g.num_nodes for g in dataset.graphs])
    edges = np.array([g.num_edges for g in dataset.graphs])
    degree = 2.0 * edges / nodes + 1.0
    return {
        "graphs": len(dataset),
        "classes": dataset.num_classes,
        "min_nodes": int(nodes.min()),
        "max_nodes": int(nodes.max()),
        "min_edges": int(edges.min()),
        "max_edges": int(edges.max()),
        "min_avg_degree": float(degree.min()),
        "max_avg_degree": float(degree.max()),
        "min_2m_over_n": float((degree - 1.0).min()),
        "max_2m_over_n": float((degree - 1.0).max()),
    }
