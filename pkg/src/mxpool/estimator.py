"""scikit-learn style classifier wrapping the MxPool network.

``X`` is a sequence of :class:`~mxpool.graph_io.Graph` (or a
:class:`~mxpool.graph_io.GraphDataset`); labels default to ``graph.label``.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import model as M
from . import tensor as T
from .exceptions import ConfigurationError
from .graph_io import PropertyNorm, fit_property_norm
from .validation import check_graphs, check_labels

log = logging.getLogger(__name__)


class MxPoolClassifier(ClassifierMixin, BaseEstimator):
    """Graph classifier with multiplexed convolution and pooling networks.

    Parameters
    ----------
    n_layers : int
        Number of hierarchical convolution + pooling levels.
    gcn_steps : int
        Message-passing steps inside every GCN.
    conv_dims : tuple of int
        Output width of each parallel convolution network (one entry per network).
    pool_ratios : tuple of float
        Coarsening ratio of each parallel pooling network.
    pool_hidden : int
        Hidden width of the pooling GCNs before their cluster-logit step.
    assignment_merge : {"softmax", "linear"}
        Post-processing of the merged assignment matrix.
    lr, epochs, batch_size
        Adam learning rate, passes over the data, graphs per optimizer step.
    aux_link, aux_entropy : float
        Weights of the link-prediction and assignment-entropy regularizers.
    max_nodes : int or None
        Reference node count for the first-level cluster counts; defaults to
        the largest training graph.
    num_classes : int or None
        Number of classes; defaults to ``max(y) + 1``.
    random_state : int
        Seed for weight initialisation and epoch shuffling.
    """

    def __init__(
        self,
        n_layers=2,
        gcn_steps=3,
        conv_dims=(32, 64, 128),
        pool_ratios=(0.05, 0.1, 0.15),
        pool_hidden=32,
        assignment_merge="softmax",
        lr=1e-3,
        epochs=100,
        batch_size=20,
        aux_link=0.0,
        aux_entropy=0.0,
        max_nodes=None,
        num_classes=None,
        random_state=0,
        verbose=False,
    ):
        self.n_layers = n_layers
        self.gcn_steps = gcn_steps
        self.conv_dims = conv_dims
        self.pool_ratios = pool_ratios
        self.pool_hidden = pool_hidden
        self.assignment_merge = assignment_merge
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.aux_link = aux_link
        self.aux_entropy = aux_entropy
        self.max_nodes = max_nodes
        self.num_classes = num_classes
        self.random_state = random_state
        self.verbose = verbose

    def _model_config(self, graphs, y) -> M.ModelConfig:
        num_classes = self.num_classes if self.num_classes is not None else int(y.max()) + 1
        max_nodes = self.max_nodes if self.max_nodes is not None else max(g.num_nodes for g in graphs)
        return M.ModelConfig(
            input_dim=graphs[0].features.shape[1],
            num_classes=num_classes,
            max_nodes=max_nodes,
            n_layers=self.n_layers,
            gcn_steps=self.gcn_steps,
            conv_dims=tuple(self.conv_dims),
            pool_ratios=tuple(self.pool_ratios),
            pool_hidden=self.pool_hidden,
            assignment_merge=self.assignment_merge,
        )

    def fit(self, X, y=None, property_norm: PropertyNorm | None = None):
        graphs = check_graphs(X)
        y = check_labels(graphs, y, self.num_classes)
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ConfigurationError("epochs >= 0, batch_size >= 1 and lr >= 0 required")
        config = self._model_config(graphs, y)

        if property_norm is None:
            property_norm = fit_property_norm(graphs)
        self.property_norm_ = property_norm
        self.config_ = config
        self.classes_ = np.arange(config.num_classes)
        self.n_features_in_ = config.input_dim
        self.params_ = M.init_params(config, seed=self.random_state)

        rng = np.random.default_rng(self.random_state)
        optimizer = T.Adam(self.params_.parameters(), lr=self.lr)
        props = [property_norm.transform(g.property_vector) for g in graphs]
        self.loss_curve_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(len(graphs))
            epoch_loss = 0.0
            for start in range(0, len(order), self.batch_size):
                batch = order[start:start + self.batch_size]
                optimizer.zero_grad()
                for i in batch:
                    logits, traces = M.forward(graphs[i], self.params_, props[i])
                    value = M.loss(logits, int(y[i]), traces, self.aux_link, self.aux_entropy)
                    epoch_loss += value.item()
                    T.backward(T.scale(value, 1.0 / len(batch)))
                optimizer.step()
            self.loss_curve_.append(epoch_loss / len(graphs))
            if self.verbose:
                log.info("epoch %d loss %.5f", epoch + 1, self.loss_curve_[-1])
        return self

    def _forward_all(self, X):
        check_is_fitted(self, "params_")
        graphs = check_graphs(X, self.n_features_in_)
        out = []
        for g in graphs:
            logits, traces = M.forward(g, self.params_, self.property_norm_.transform(g.property_vector))
            out.append((g, logits.value[0], traces))
        return out

    def decision_function(self, X) -> np.ndarray:
        return np.stack([logits for _, logits, _ in self._forward_all(X)])

    def predict_proba(self, X) -> np.ndarray:
        z = self.decision_function(X)
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        # argmax breaks ties towards the lowest class index
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def attention(self, X) -> list:
        """Per graph and level: raw and standardized properties plus alpha and beta."""
        rows = []
        for g, _, traces in self._forward_all(X):
            std = self.property_norm_.transform(g.property_vector)
            for level, trace in enumerate(traces):
                rows.append({
                    "graph_id": g.graph_id,
                    "layer": level,
                    "raw": g.property_vector.copy(),
                    "std": std,
                    "alpha": trace.alpha_values,
                    "beta": trace.beta_values,
                })
        return rows

    def checkpoint_meta(self) -> dict:
        check_is_fitted(self, "params_")
        return {
            "model": self.config_.to_dict(),
            "property_mean": self.property_norm_.mean.tolist(),
            "property_std": self.property_norm_.std.tolist(),
            "estimator": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
        }

    def save(self, path):
        return T.save_checkpoint(path, self.params_.state_dict(), self.checkpoint_meta())

    @classmethod
    def load(cls, path, expected_config: M.ModelConfig | None = None) -> "MxPoolClassifier":
        """Rebuild a fitted estimator from a checkpoint.

        With ``expected_config`` the tensors are loaded into a model of that
        shape instead of the stored one, so mismatches surface as a
        :class:`~mxpool.exceptions.ShapeError` naming every offending tensor.
        """
        tensors, meta = T.load_checkpoint(path)
        stored = dict(meta["model"])
        stored["conv_dims"] = tuple(stored["conv_dims"])
        stored["pool_ratios"] = tuple(stored["pool_ratios"])
        config = expected_config or M.ModelConfig(**stored)
        params = dict(meta.get("estimator", {}))
        for key in ("conv_dims", "pool_ratios"):
            if key in params:
                params[key] = tuple(params[key])
        est = cls(**params)
        est.config_ = config
        est.params_ = M.init_params(config, seed=0)
        est.params_.load_state_dict(tensors)
        est.property_norm_ = PropertyNorm(np.array(meta["property_mean"]), np.array(meta["property_std"]))
        est.classes_ = np.arange(config.num_classes)
        est.n_features_in_ = config.input_dim
        return est
