"""Dense reverse-mode autodiff on 2-D float64 matrices.

Every value is a matrix (scalars are 1x1). Operations build a graph of
:class:`Tensor` nodes; :func:`backward` walks it in reverse topological
order. Leaf gradients accumulate across calls until :meth:`Tensor.zero_grad`,
which is what lets the trainer sum gradients over several graphs per step.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .exceptions import ContractError, FormatError, ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "Adam",
    "constant",
    "matmul",
    "add",
    "sub",
    "add_bias_row",
    "transpose",
    "relu",
    "row_softmax",
    "concat_cols",
    "scale_by_scalar",
    "pick",
    "row_mean",
    "sum_all",
    "frobenius_norm",
    "mean_row_entropy",
    "cross_entropy_from_logits",
    "backward",
    "adam_step",
    "gradient_check",
    "save_checkpoint",
    "load_checkpoint",
]


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, name=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        elif value.ndim != 2:
            raise ShapeError(f"tensors are 2-D matrices, got shape {value.shape}")
        self.value = value
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(value) if self.requires_grad and not parents else None
        self._parents = tuple(parents)
        self._backward = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def zero_grad(self):
        self.grad = np.zeros_like(self.value) if self.requires_grad else None

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable leaf tensor carrying its own Adam moment estimates."""

    __slots__ = ("adam_m", "adam_v", "step_count")

    def __init__(self, value, name=None):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(value, parents, backward_fn):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(value)


def _accumulate(tensor: Tensor, grad: np.ndarray):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64)
    else:
        tensor.grad += grad


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def back(out):
        _accumulate(a, out.grad @ b.value.T)
        _accumulate(b, a.value.T @ out.grad)

    return _result(a.value @ b.value, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} + {b.shape}")

    def back(out):
        _accumulate(a, out.grad)
        _accumulate(b, out.grad)

    return _result(a.value + b.value, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes differ, {a.shape} - {b.shape}")

    def back(out):
        _accumulate(a, out.grad)
        _accumulate(b, -out.grad)

    return _result(a.value - b.value, (a, b), back)


def add_bias_row(x: Tensor, bias: Tensor) -> Tensor:
    """``x + bias`` with a 1xc bias row broadcast over the rows of ``x``."""
    x, bias = constant(x), constant(bias)
    if bias.shape != (1, x.shape[1]):
        raise ShapeError(f"add_bias_row: bias {bias.shape} does not fit {x.shape}")

    def back(out):
        _accumulate(x, out.grad)
        _accumulate(bias, out.grad.sum(axis=0, keepdims=True))

    return _result(x.value + bias.value, (x, bias), back)


def transpose(x: Tensor) -> Tensor:
    x = constant(x)

    def back(out):
        _accumulate(x, out.grad.T)

    return _result(x.value.T, (x,), back)


def relu(x: Tensor) -> Tensor:
    x = constant(x)
    mask = x.value > 0

    def back(out):
        _accumulate(x, out.grad * mask)

    return _result(np.where(mask, x.value, 0.0), (x,), back)


def _softmax_rows(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def row_softmax(x: Tensor) -> Tensor:
    x = constant(x)
    y = _softmax_rows(x.value)

    def back(out):
        g = out.grad
        _accumulate(x, y * (g - (g * y).sum(axis=1, keepdims=True)))

    return _result(y, (x,), back)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    tensors = [constant(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_cols needs at least one tensor")
    rows = {t.shape[0] for t in tensors}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[t.shape for t in tensors]}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def back(out):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            _accumulate(t, out.grad[:, lo:hi])

    return _result(np.hstack([t.value for t in tensors]), tensors, back)


def scale_by_scalar(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every entry of ``x`` by the 1x1 tensor ``s``."""
    x, s = constant(x), constant(s)
    if s.shape != (1, 1):
        raise ShapeError(f"scale_by_scalar: scale must be 1x1, got {s.shape}")
    scale = s.value[0, 0]

    def back(out):
        _accumulate(x, scale * out.grad)
        _accumulate(s, np.array([[np.sum(out.grad * x.value)]]))

    return _result(scale * x.value, (x, s), back)


def pick(x: Tensor, i: int, j: int) -> Tensor:
    """Entry ``x[i, j]`` as a 1x1 tensor."""
    x = constant(x)

    def back(out):
        g = np.zeros_like(x.value)
        g[i, j] = out.grad[0, 0]
        _accumulate(x, g)

    return _result(x.value[i:i + 1, j:j + 1], (x,), back)


def row_mean(x: Tensor) -> Tensor:
    """Mean over rows, giving a 1xc row."""
    x = constant(x)
    n = x.shape[0]

    def back(out):
        _accumulate(x, np.broadcast_to(out.grad / n, x.shape))

    return _result(x.value.mean(axis=0, keepdims=True), (x,), back)


def sum_all(x: Tensor) -> Tensor:
    x = constant(x)

    def back(out):
        _accumulate(x, np.full(x.shape, out.grad[0, 0]))

    return _result(np.array([[x.value.sum()]]), (x,), back)


def frobenius_norm(x: Tensor) -> Tensor:
    x = constant(x)
    norm = float(np.sqrt(np.sum(x.value ** 2)))

    def back(out):
        if norm > 0:
            _accumulate(x, out.grad[0, 0] * x.value / norm)

    return _result(np.array([[norm]]), (x,), back)


def mean_row_entropy(s: Tensor) -> Tensor:
    """``-mean_i sum_j s_ij log s_ij`` with ``0 log 0 = 0``."""
    s = constant(s)
    n = s.shape[0]
    positive = s.value > 0
    logs = np.log(np.where(positive, s.value, 1.0))
    value = -np.sum(s.value * logs) / n

    def back(out):
        _accumulate(s, np.where(positive, -(logs + 1.0) / n, 0.0) * out.grad[0, 0])

    return _result(np.array([[value]]), (s,), back)


def cross_entropy_from_logits(logits: Tensor, label: int) -> Tensor:
    logits = constant(logits)
    if logits.shape[0] != 1:
        raise ShapeError(f"cross_entropy_from_logits expects a 1xC row, got {logits.shape}")
    num_classes = logits.shape[1]
    if not 0 <= label < num_classes:
        raise ContractError(f"label {label} outside [0, {num_classes})")
    z = logits.value[0]
    shift = z.max()
    lse = shift + np.log(np.sum(np.exp(z - shift)))
    probs = np.exp(z - lse)

    def back(out):
        g = probs.copy()
        g[label] -= 1.0
        _accumulate(logits, out.grad[0, 0] * g[None, :])

    return _result(np.array([[lse - z[label]]]), (logits,), back)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a plain float constant."""
    x = constant(x)

    def back(out):
        _accumulate(x, factor * out.grad)

    return _result(factor * x.value, (x,), back)


# ---------------------------------------------------------------------------
# backward pass


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor that ``loss`` depends on.

    Intermediate gradients are reset on every call; leaf gradients add up.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    order = _topological_order(loss)
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node)


# ---------------------------------------------------------------------------
# optimisation


def adam_step(params: Iterable[Parameter], lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        if lr:
            p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps

    def step(self):
        adam_step(self.params, self.lr, self.betas[0], self.betas[1], self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def gradient_check(
    model_forward: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    samples_per_tensor: int = 20,
    seed: int = 0,
) -> float:
    """Max relative error between autodiff and central-difference gradients.

    Each tensor with more than ``samples_per_tensor`` entries is checked on a
    random subset of that many coordinates.
    """
    first = model_forward()
    second = model_forward()
    if first.item() != second.item():
        raise ContractError("forward is not deterministic; gradient check is meaningless")
    for p in params:
        p.zero_grad()
    backward(model_forward())
    analytic = {id(p): p.grad.copy() for p in params}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        size = flat.size
        coords = np.arange(size) if size <= samples_per_tensor else rng.choice(size, samples_per_tensor, replace=False)
        g_ad = analytic[id(p)].reshape(-1)
        for c in coords:
            saved = flat[c]
            flat[c] = saved + h
            plus = model_forward().item()
            flat[c] = saved - h
            minus = model_forward().item()
            flat[c] = saved
            g_fd = (plus - minus) / (2.0 * h)
            err = abs(g_ad[c] - g_fd) / max(1e-8, abs(g_ad[c]) + abs(g_fd))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints
#
# Text format, one block per tensor:
#     #mxpool-checkpoint 1
#     #meta <single-line JSON>
#     <name> <rows> <cols>
#     <row values, space separated, %.17g>
#     ...


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    lines = ["#mxpool-checkpoint 1", "#meta " + json.dumps(meta or {}, sort_keys=True)]
    for name, value in tensors.items():
        value = np.asarray(value.value if isinstance(value, Tensor) else value, dtype=np.float64)
        if " " in name:
            raise ValueError(f"tensor names may not contain spaces: {name!r}")
        rows, cols = value.shape
        lines.append(f"{name} {rows} {cols}")
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in value)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path: str | os.PathLike) -> tuple[dict, dict]:
    """Return ``(tensors, meta)`` from a file written by :func:`save_checkpoint`."""
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"checkpoint not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or lines[0] != "#mxpool-checkpoint 1":
        raise FormatError(f"{path}: not an mxpool checkpoint")
    meta = {}
    i = 1
    if i < len(lines) and lines[i].startswith("#meta "):
        meta = json.loads(lines[i][6:])
        i += 1
    tensors = {}
    while i < len(lines):
        header = lines[i].split()
        if not header:
            i += 1
            continue
        try:
            name, rows, cols = header[0], int(header[1]), int(header[2])
            block = lines[i + 1:i + 1 + rows]
            value = np.array([[float(v) for v in r.split()] for r in block], dtype=np.float64).reshape(rows, cols)
        except (IndexError, ValueError):
            raise FormatError(f"{path}:{i + 1}: malformed tensor block") from None
        tensors[name] = value
        i += 1 + rows
    return tensors, meta
