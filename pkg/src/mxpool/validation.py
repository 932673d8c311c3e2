"""Input checks shared by the estimator and the harness."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError, ContractError, ShapeError
from .graph_io import Graph


def check_graphs(X, feature_dim: int | None = None) -> list:
    """Return ``X`` as a non-empty list of :class:`Graph` with a shared feature width."""
    if isinstance(X, Graph):
        raise ContractError("expected a sequence of graphs, got a single Graph")
    graphs = list(getattr(X, "graphs", X))
    if not graphs:
        raise ConfigurationError("no graphs given")
    for i, g in enumerate(graphs):
        if not isinstance(g, Graph):
            raise ContractError(f"item {i} is {type(g).__name__}, expected Graph")
        if not np.allclose(g.adjacency, g.adjacency.T, rtol=0, atol=1e-9):
            raise ContractError(f"graph {g.graph_id}: adjacency is not symmetric")
        if np.any(g.adjacency < 0):
            raise ContractError(f"graph {g.graph_id}: adjacency has negative weights")
    widths = {g.features.shape[1] for g in graphs}
    if len(widths) != 1:
        raise ShapeError(f"graphs disagree on feature width: {sorted(widths)}")
    if feature_dim is not None and widths != {feature_dim}:
        raise ShapeError(f"graphs have feature width {widths.pop()}, expected {feature_dim}")
    return graphs


def check_labels(graphs: Sequence[Graph], y=None, num_classes: int | None = None) -> np.ndarray:
    y = np.array([g.label for g in graphs] if y is None else y)
    if y.shape != (len(graphs),):
        raise ShapeError(f"{y.shape[0] if y.ndim else 0} labels for {len(graphs)} graphs")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ContractError("labels must be class indices 0..C-1")
        y = y.astype(np.int64)
    if y.min() < 0 or (num_classes is not None and y.max() >= num_classes):
        raise ContractError(f"labels must lie in [0, {num_classes}), got range [{y.min()}, {y.max()}]")
    return y
