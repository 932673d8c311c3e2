"""MxPool network: parallel GCNs and parallel soft-assignment poolers per level,
merged with attention weights computed from the input graph's size statistics.

One hierarchical level, for adjacency ``A`` and node features ``X``::

    Z_i  = GCN_c_i(A_hat, X)                         i = 1..n_c
    alpha = softmax(g @ W_conv_att)
    Z    = relu([alpha_1 Z_1 | ... | alpha_nc Z_nc] @ W_fc + b_fc)
    S_i  = row_softmax(GCN_p_i(A_hat, X))            i = 1..n_p
    beta = softmax(g @ W_pool_att)
    S    = row_softmax([beta_1 S_1 | ... ] @ W_fp + b_fp)
    X', A' = S^T Z, S^T A S

where ``A_hat`` is the symmetrically normalized ``A + I`` and ``g`` the
standardized property vector of the original input graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .exceptions import ConfigurationError, ContractError, ShapeError
from .tensor import Parameter, Tensor

__all__ = [
    "ModelConfig",
    "LayerPlan",
    "GcnNet",
    "LayerParams",
    "ModelParams",
    "LayerTrace",
    "round_half_up",
    "layer_plan",
    "init_params",
    "normalize_adjacency",
    "gcn_forward",
    "attention_weights",
    "merge_embeddings",
    "assignment_matrices",
    "merge_assignments",
    "coarsen",
    "forward",
    "loss",
]

ASSIGNMENT_MERGES = ("softmax", "linear")


def round_half_up(x: float) -> int:
    return max(1, int(np.floor(x + 0.5)))


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    max_nodes: int
    n_layers: int = 2
    gcn_steps: int = 3
    conv_dims: tuple = (32, 64, 128)
    pool_ratios: tuple = (0.05, 0.1, 0.15)
    pool_hidden: int = 32
    assignment_merge: str = "softmax"
    property_dim: int = 3

    def __post_init__(self):
        object.__setattr__(self, "conv_dims", tuple(int(d) for d in self.conv_dims))
        object.__setattr__(self, "pool_ratios", tuple(float(r) for r in self.pool_ratios))
        if self.input_dim < 1 or self.num_classes < 1 or self.max_nodes < 1:
            raise ConfigurationError("input_dim, num_classes and max_nodes must be positive")
        if self.n_layers < 1 or self.gcn_steps < 1:
            raise ConfigurationError("need at least one hierarchical layer and one GCN step")
        if not self.conv_dims or min(self.conv_dims) < 1:
            raise ConfigurationError(f"conv_dims must be positive widths, got {self.conv_dims}")
        if not self.pool_ratios or min(self.pool_ratios) <= 0:
            raise ConfigurationError(f"pool_ratios must be positive, got {self.pool_ratios}")
        if self.pool_hidden < 1:
            raise ConfigurationError("pool_hidden must be positive")
        if self.assignment_merge not in ASSIGNMENT_MERGES:
            raise ConfigurationError(f"assignment_merge must be one of {ASSIGNMENT_MERGES}")

    @property
    def n_conv(self) -> int:
        return len(self.conv_dims)

    @property
    def n_pool(self) -> int:
        return len(self.pool_ratios)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "max_nodes": self.max_nodes,
            "n_layers": self.n_layers,
            "gcn_steps": self.gcn_steps,
            "conv_dims": list(self.conv_dims),
            "pool_ratios": list(self.pool_ratios),
            "pool_hidden": self.pool_hidden,
            "assignment_merge": self.assignment_merge,
            "property_dim": self.property_dim,
        }


@dataclass(frozen=True)
class LayerPlan:
    in_dim: int
    in_nodes: int
    conv_dims: tuple
    cluster_counts: tuple
    out_dim: int
    out_nodes: int


def layer_plan(config: ModelConfig) -> list:
    """Shapes of every hierarchical level.

    Cluster counts are ``ratio * max_nodes`` at the first level and
    ``ratio * n`` afterwards, where ``n`` is the previous level's merged
    cluster count. Merged widths are rounded averages of the parallel ones.
    """
    plans = []
    in_dim, in_nodes = config.input_dim, config.max_nodes
    for _ in range(config.n_layers):
        clusters = tuple(round_half_up(r * in_nodes) for r in config.pool_ratios)
        out_dim = round_half_up(sum(config.conv_dims) / config.n_conv)
        out_nodes = round_half_up(sum(clusters) / config.n_pool)
        plans.append(LayerPlan(in_dim, in_nodes, config.conv_dims, clusters, out_dim, out_nodes))
        in_dim, in_nodes = out_dim, out_nodes
    return plans


# ---------------------------------------------------------------------------
# parameters


@dataclass
class GcnNet:
    weights: list
    biases: list

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]


@dataclass
class LayerParams:
    conv_nets: list
    pool_nets: list
    conv_attention: Parameter
    pool_attention: Parameter
    conv_merge_w: Parameter
    conv_merge_b: Parameter
    pool_merge_w: Parameter
    pool_merge_b: Parameter


@dataclass
class ModelParams:
    config: ModelConfig
    layers: list
    classifier_w: Parameter
    classifier_b: Parameter

    def named_parameters(self) -> dict:
        out = {}
        for l, layer in enumerate(self.layers):
            for kind, nets in (("conv", layer.conv_nets), ("pool", layer.pool_nets)):
                for i, net in enumerate(nets):
                    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
                        out[f"layer{l}.{kind}{i}.W{k}"] = w
                        out[f"layer{l}.{kind}{i}.b{k}"] = b
            out[f"layer{l}.conv_attention"] = layer.conv_attention
            out[f"layer{l}.pool_attention"] = layer.pool_attention
            out[f"layer{l}.conv_merge.W"] = layer.conv_merge_w
            out[f"layer{l}.conv_merge.b"] = layer.conv_merge_b
            out[f"layer{l}.pool_merge.W"] = layer.pool_merge_w
            out[f"layer{l}.pool_merge.b"] = layer.pool_merge_b
        out["classifier.W"] = self.classifier_w
        out["classifier.b"] = self.classifier_b
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict:
        return {name: p.value.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict) -> None:
        """Copy values in; raises :class:`ShapeError` listing every offending tensor."""
        named = self.named_parameters()
        problems = []
        for name, p in named.items():
            if name not in state:
                problems.append(f"{name}: missing (expected {p.shape})")
            elif np.shape(state[name]) != p.shape:
                problems.append(f"{name}: checkpoint {np.shape(state[name])} vs model {p.shape}")
        problems.extend(f"{name}: not part of this model" for name in state if name not in named)
        if problems:
            raise ShapeError("checkpoint does not match model configuration:\n  " + "\n  ".join(problems))
        for name, p in named.items():
            p.value[...] = state[name]


def _glorot(rng, rows, cols, name):
    limit = np.sqrt(6.0 / (rows + cols))
    return Parameter(rng.uniform(-limit, limit, size=(rows, cols)), name=name)


def _zeros(cols, name):
    return Parameter(np.zeros((1, cols)), name=name)


def _gcn_net(rng, in_dim, widths, name):
    weights, biases, prev = [], [], in_dim
    for k, width in enumerate(widths):
        weights.append(_glorot(rng, prev, width, f"{name}.W{k}"))
        biases.append(_zeros(width, f"{name}.b{k}"))
        prev = width
    return GcnNet(weights, biases)


def init_params(config: ModelConfig, seed: int = 0, identity_merges: bool = False) -> ModelParams:
    """Glorot-uniform weights and zero biases drawn from ``seed``.

    ``identity_merges`` replaces both merge matrices by (rectangular)
    identities, which turns a single-network level into plain GCN + DiffPool.
    """
    rng = np.random.default_rng(seed)
    K = config.gcn_steps
    layers = []
    for l, plan in enumerate(layer_plan(config)):
        conv_nets = [_gcn_net(rng, plan.in_dim, [d] * K, f"layer{l}.conv{i}") for i, d in enumerate(plan.conv_dims)]
        pool_nets = [
            _gcn_net(rng, plan.in_dim, [config.pool_hidden] * (K - 1) + [c], f"layer{l}.pool{i}")
            for i, c in enumerate(plan.cluster_counts)
        ]
        concat_dim, concat_clusters = sum(plan.conv_dims), sum(plan.cluster_counts)
        layer = LayerParams(
            conv_nets=conv_nets,
            pool_nets=pool_nets,
            conv_attention=_glorot(rng, config.property_dim, config.n_conv, f"layer{l}.conv_attention"),
            pool_attention=_glorot(rng, config.property_dim, config.n_pool, f"layer{l}.pool_attention"),
            conv_merge_w=_glorot(rng, concat_dim, plan.out_dim, f"layer{l}.conv_merge.W"),
            conv_merge_b=_zeros(plan.out_dim, f"layer{l}.conv_merge.b"),
            pool_merge_w=_glorot(rng, concat_clusters, plan.out_nodes, f"layer{l}.pool_merge.W"),
            pool_merge_b=_zeros(plan.out_nodes, f"layer{l}.pool_merge.b"),
        )
        if identity_merges:
            layer.conv_merge_w.value[...] = np.eye(concat_dim, plan.out_dim)
            layer.pool_merge_w.value[...] = np.eye(concat_clusters, plan.out_nodes)
        layers.append(layer)
    final_dim = layer_plan(config)[-1].out_dim
    return ModelParams(
        config=config,
        layers=layers,
        classifier_w=_glorot(rng, final_dim, config.num_classes, "classifier.W"),
        classifier_b=_zeros(config.num_classes, "classifier.b"),
    )


# ---------------------------------------------------------------------------
# operations


def normalize_adjacency(adjacency) -> Tensor:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the row sums of ``A + I``; differentiable in ``A``."""
    A = T.constant(adjacency)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ShapeError(f"adjacency must be square, got {A.shape}")
    if np.max(np.abs(A.value - A.value.T), initial=0.0) > 1e-9:
        raise ContractError("adjacency is not symmetric")
    a_tilde = A.value + np.eye(n)
    deg = a_tilde.sum(axis=1)
    if np.any(deg <= 0):
        raise ContractError("normalized adjacency needs positive degrees after adding self-loops")
    u = deg ** -0.5
    value = u[:, None] * a_tilde * u[None, :]

    def back(out):
        g = out.grad
        direct = g * u[:, None] * u[None, :]
        # d value_ij / d u_i and / d u_j, folded through d u / d deg and d deg_i / d A_ij = 1
        du = (g * a_tilde * u[None, :]).sum(axis=1) + (g * a_tilde * u[:, None]).sum(axis=0)
        ddeg = -0.5 * du * deg ** -1.5
        T._accumulate(A, direct + ddeg[:, None])

    return T._result(value, (A,), back)


def gcn_forward(a_hat: Tensor, x: Tensor, net: GcnNet) -> Tensor:
    """``H <- relu(A_hat H W_k + b_k)`` for every step ``k`` of ``net``; returns the last ``H``."""
    h = T.constant(x)
    for w, b in zip(net.weights, net.biases):
        if h.shape[1] != w.shape[0]:
            raise ShapeError(f"gcn_forward: features of width {h.shape[1]} meet weight {w.shape}")
        h = T.relu(T.add_bias_row(a_hat @ (h @ w), b))
    return h


def attention_weights(g_std, projection: Tensor) -> Tensor:
    """Softmax over networks of the projected property row; returns a 1 x n row."""
    return T.row_softmax(T.constant(g_std) @ projection)


def _weighted_concat(parts: Sequence[Tensor], weights: Tensor) -> Tensor:
    if weights.shape != (1, len(parts)):
        raise ShapeError(f"{len(parts)} parts but attention of shape {weights.shape}")
    if len({p.shape[0] for p in parts}) != 1:
        raise ShapeError(f"row counts differ: {[p.shape for p in parts]}")
    return T.concat_cols([T.scale_by_scalar(p, T.pick(weights, 0, i)) for i, p in enumerate(parts)])


def merge_embeddings(z_list: Sequence[Tensor], alpha: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return T.relu(T.add_bias_row(_weighted_concat(z_list, alpha) @ weight, bias))


def assignment_matrices(a_hat: Tensor, x: Tensor, pool_nets: Sequence[GcnNet]) -> list:
    out = []
    for net in pool_nets:
        if net.out_dim < 1:
            raise ConfigurationError("a pooling network needs at least one cluster")
        out.append(T.row_softmax(gcn_forward(a_hat, x, net)))
    return out


def merge_assignments(s_list: Sequence[Tensor], beta: Tensor, weight: Tensor, bias: Tensor,
                      mode: str = "softmax") -> Tensor:
    merged = T.add_bias_row(_weighted_concat(s_list, beta) @ weight, bias)
    return T.row_softmax(merged) if mode == "softmax" else merged


def coarsen(s: Tensor, z: Tensor, adjacency) -> tuple:
    s, z, adjacency = T.constant(s), T.constant(z), T.constant(adjacency)
    if s.shape[0] != z.shape[0] or adjacency.shape != (s.shape[0], s.shape[0]):
        raise ShapeError(f"coarsen: S {s.shape}, Z {z.shape}, A {adjacency.shape} disagree")
    st = s.T
    return st @ z, st @ adjacency @ s


@dataclass
class LayerTrace:
    adjacency: Tensor
    features: Tensor
    z_list: list
    s_list: list
    alpha: Tensor
    beta: Tensor
    z: Tensor
    s: Tensor
    next_features: Tensor
    next_adjacency: Tensor

    @property
    def alpha_values(self) -> np.ndarray:
        return self.alpha.value[0].copy()

    @property
    def beta_values(self) -> np.ndarray:
        return self.beta.value[0].copy()


def forward(graph, params: ModelParams, property_std) -> tuple:
    """Logits (1 x C) and one :class:`LayerTrace` per hierarchical level.

    ``graph`` is anything with ``adjacency`` and ``features`` arrays;
    ``property_std`` the standardized property vector of that graph.
    """
    config = params.config
    g = T.constant(np.asarray(property_std, dtype=np.float64).reshape(1, -1))
    if g.shape[1] != config.property_dim:
        raise ShapeError(f"property vector of length {g.shape[1]}, model expects {config.property_dim}")
    a = T.constant(graph.adjacency)
    x = T.constant(graph.features)
    if x.shape[1] != config.input_dim:
        raise ShapeError(f"graph features have width {x.shape[1]}, model expects {config.input_dim}")
    traces = []
    for layer in params.layers:
        a_hat = normalize_adjacency(a)
        z_list = [gcn_forward(a_hat, x, net) for net in layer.conv_nets]
        alpha = attention_weights(g, layer.conv_attention)
        z = merge_embeddings(z_list, alpha, layer.conv_merge_w, layer.conv_merge_b)
        s_list = assignment_matrices(a_hat, x, layer.pool_nets)
        beta = attention_weights(g, layer.pool_attention)
        s = merge_assignments(s_list, beta, layer.pool_merge_w, layer.pool_merge_b, config.assignment_merge)
        x_next, a_next = coarsen(s, z, a)
        traces.append(LayerTrace(a, x, z_list, s_list, alpha, beta, z, s, x_next, a_next))
        a, x = a_next, x_next
    logits = T.add_bias_row(T.row_mean(x) @ params.classifier_w, params.classifier_b)
    return logits, traces


def loss(logits: Tensor, label: int, traces: Sequence[LayerTrace] = (), aux_link: float = 0.0,
         aux_entropy: float = 0.0) -> Tensor:
    """Cross-entropy plus optional per-level link-prediction and assignment-entropy terms."""
    total = T.cross_entropy_from_logits(logits, label)
    for trace in traces:
        n = trace.s.shape[0]
        if aux_link:
            link = T.frobenius_norm(T.sub(trace.adjacency, trace.s @ trace.s.T))
            total = T.add(total, T.scale(link, aux_link / n ** 2))
        if aux_entropy:
            total = T.add(total, T.scale(T.mean_row_entropy(trace.s), aux_entropy))
    return total
