"""Hierarchical graph classification with multiplexed convolution and pooling networks."""

from .estimator import MxPoolClassifier
from .exceptions import ConfigurationError, ContractError, FormatError, IntegrityError, MxPoolError, ShapeError
from .graph_io import (
    FoldPlan,
    Graph,
    GraphDataset,
    PropertyNorm,
    dataset_statistics,
    make_folds,
    parse_tu_dataset,
    standardize_properties,
    write_tu_dataset,
)
from .harness import RunConfig, RunReport, bucket_attention, cross_validate, run_ablation, train_fold
from .model import ModelConfig, ModelParams, forward, init_params, layer_plan

__version__ = "0.1.0"

__all__ = [
    "MxPoolClassifier",
    "MxPoolError",
    "ConfigurationError",
    "ContractError",
    "FormatError",
    "IntegrityError",
    "ShapeError",
    "FoldPlan",
    "Graph",
    "GraphDataset",
    "PropertyNorm",
    "dataset_statistics",
    "make_folds",
    "parse_tu_dataset",
    "standardize_properties",
    "write_tu_dataset",
    "RunConfig",
    "RunReport",
    "bucket_attention",
    "cross_validate",
    "run_ablation",
    "train_fold",
    "ModelConfig",
    "ModelParams",
    "forward",
    "init_params",
    "layer_plan",
]
