"""Small differentiable classifiers with last-layer gradient extraction.

Two architectures share one parameter layout: parameters live in a flat
float64 vector split into named ``[out, fan_in + 1]`` blocks whose last
column is the bias.  The output block is always last, so the "last layer"
(the softmax layer) is a contiguous slice of exactly
``num_classes * (h + 1)`` values, where ``h`` is the penultimate width.

For ``softmax_regression`` the penultimate activation is the raw input
(h = input_dim); for ``one_hidden`` it is ``tanh(W1 x + b1)``
(h = hidden_dim).  All math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ConfigurationError

__all__ = [
    "ARCHS",
    "ModelSpec",
    "ParamVector",
    "LastLayerGradient",
    "init_params",
    "predict_proba",
    "loss",
    "per_sample_last_layer_grads",
    "last_layer_grad_stack",
    "mean_last_layer_grad",
    "labelwise_validation_grads",
    "sgd_epochs",
]

ARCHS = ("softmax_regression", "one_hidden")


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 0  # ignored for softmax_regression

    def __post_init__(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigurationError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.input_dim < 1 or self.num_classes < 1:
            raise ConfigurationError("input_dim and num_classes must be positive")
        if self.arch == "one_hidden" and self.hidden_dim < 1:
            raise ConfigurationError("one_hidden requires hidden_dim >= 1")


@dataclass
class ParamVector:
    """Flat parameter vector with named layer blocks.

    ``layout`` lists ``(name, (rows, cols))`` blocks in storage order; each
    block reshapes to ``[rows, cols]`` with the bias in the final column.
    ``last_layer_slice`` is the (offset, length) of the output block.
    """

    values: np.ndarray
    layout: tuple[tuple[str, tuple[int, int]], ...]
    last_layer_slice: tuple[int, int]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        total = sum(r * c for _, (r, c) in self.layout)
        if total != self.values.size:
            raise ValueError("layout does not cover the parameter vector")
        off, length = self.last_layer_slice
        rows, cols = self.layout[-1][1]
        if off + length != self.values.size or length != rows * cols:
            raise ValueError("last_layer_slice must cover exactly the output block")

    def block(self, name: str) -> np.ndarray:
        off = 0
        for bname, (r, c) in self.layout:
            if bname == name:
                return self.values[off : off + r * c].reshape(r, c)
            off += r * c
        raise KeyError(name)

    def last_layer(self) -> np.ndarray:
        off, length = self.last_layer_slice
        rows, cols = self.layout[-1][1]
        return self.values[off : off + length].reshape(rows, cols)

    @property
    def num_classes(self) -> int:
        return self.layout[-1][1][0]

    @property
    def penultimate_width(self) -> int:
        return self.layout[-1][1][1] - 1

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout, self.last_layer_slice)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout, self.last_layer_slice)


@dataclass(frozen=True)
class LastLayerGradient:
    """Gradient restricted to the output layer, one row per class.

    Row ``c`` has length h + 1: the weights into output neuron ``c``
    followed by its bias.
    """

    rows: np.ndarray  # [num_classes, h + 1]

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        object.__setattr__(self, "rows", rows)
        if rows.ndim != 2:
            raise ValueError("rows must be [num_classes, h + 1]")
        if not np.all(np.isfinite(rows)):
            raise ValueError("gradient contains non-finite entries")

    @property
    def num_classes(self) -> int:
        return self.rows.shape[0]

    def row(self, c: int) -> np.ndarray:
        return self.rows[c]

    @property
    def flat(self) -> np.ndarray:
        return self.rows.ravel()


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    if spec.arch == "softmax_regression":
        blocks = [("output", (spec.num_classes, spec.input_dim + 1))]
    else:
        blocks = [
            ("hidden", (spec.hidden_dim, spec.input_dim + 1)),
            ("output", (spec.num_classes, spec.hidden_dim + 1)),
        ]
    parts = []
    for _, (rows, cols) in blocks:
        fan_in = cols - 1
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(rows, fan_in))
        parts.append(np.concatenate([w, np.zeros((rows, 1))], axis=1).ravel())
    values = np.concatenate(parts)
    out_rows, out_cols = blocks[-1][1]
    length = out_rows * out_cols
    return ParamVector(values, tuple(blocks), (values.size - length, length))


def _penultimate(params: ParamVector, x: np.ndarray) -> np.ndarray:
    names = [name for name, _ in params.layout]
    if "hidden" in names:
        w1 = params.block("hidden")
        return np.tanh(x @ w1[:, :-1].T + w1[:, -1])
    return x


def _logits(params: ParamVector, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    act = _penultimate(params, x)
    out = params.last_layer()
    return act @ out[:, :-1].T + out[:, -1], act


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_proba(params: ParamVector, x: np.ndarray) -> np.ndarray:
    """Class probabilities, rows summing to one."""
    z, _ = _logits(params, np.asarray(x, dtype=np.float64))
    return _softmax(z)


def loss(params: ParamVector, ds: Dataset) -> float:
    """Mean cross-entropy over the dataset."""
    if ds.n == 0:
        raise ValueError("loss is undefined on an empty dataset")
    z, _ = _logits(params, ds.features)
    zmax = z.max(axis=1)
    logsumexp = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
    return float(np.mean(logsumexp - z[np.arange(ds.n), ds.labels]))


def last_layer_grad_stack(params: ParamVector, ds: Dataset) -> np.ndarray:
    """Per-sample output-layer gradients as one [n, num_classes, h+1] array.

    Row c of sample (x, y) is (softmax(z)_c - 1{c==y}) * [h(x); 1].
    """
    if ds.n == 0:
        raise ValueError("gradients are undefined on an empty dataset")
    z, act = _logits(params, ds.features)
    probs = _softmax(z)
    probs[np.arange(ds.n), ds.labels] -= 1.0
    act1 = np.concatenate([act, np.ones((ds.n, 1))], axis=1)
    return probs[:, :, None] * act1[:, None, :]


def per_sample_last_layer_grads(
    params: ParamVector, ds: Dataset
) -> list[LastLayerGradient]:
    stack = last_layer_grad_stack(params, ds)
    return [LastLayerGradient(stack[i]) for i in range(ds.n)]


def mean_last_layer_grad(params: ParamVector, ds: Dataset) -> LastLayerGradient:
    return LastLayerGradient(last_layer_grad_stack(params, ds).mean(axis=0))


def labelwise_validation_grads(
    params: ParamVector, val: Dataset
) -> dict[int, np.ndarray]:
    """Per-class target rows for label-wise selection.

    For each class present in ``val``, the mean last-layer gradient over
    that class's samples restricted to its own output row (length h + 1).
    Absent classes are simply missing from the map.  The concatenation of
    all rows has the same size as one full last-layer gradient, which is
    what keeps the label-wise broadcast no larger than the plain one.
    """
    if val.n == 0:
        raise ValueError("validation set is empty")
    stack = last_layer_grad_stack(params, val)
    return {
        int(c): stack[val.labels == c].mean(axis=0)[int(c)]
        for c in np.unique(val.labels)
    }


def _full_grad(
    params: ParamVector,
    x: np.ndarray,
    y: np.ndarray,
    prox: tuple[float, ParamVector] | None,
    weight_decay: float,
) -> np.ndarray:
    """Mean cross-entropy gradient for a batch, flattened to layout order."""
    n = x.shape[0]
    z, act = _logits(params, x)
    delta = _softmax(z)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    act1 = np.concatenate([act, np.ones((n, 1))], axis=1)
    g_out = delta.T @ act1
    names = [name for name, _ in params.layout]
    if "hidden" in names:
        w_out = params.last_layer()
        d_act = delta @ w_out[:, :-1]
        d_z1 = d_act * (1.0 - act * act)
        x1 = np.concatenate([x, np.ones((n, 1))], axis=1)
        g_hid = d_z1.T @ x1
        grad = np.concatenate([g_hid.ravel(), g_out.ravel()])
    else:
        grad = g_out.ravel()

    if weight_decay:
        grad = grad + weight_decay * params.values
    if prox is not None:
        mu, anchor = prox
        grad = grad + mu * (params.values - anchor.values)
    return grad


def sgd_epochs(
    params: ParamVector,
    ds: Dataset,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    prox: tuple[float, ParamVector] | None = None,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    cosine_lr: bool = False,
) -> ParamVector:
    """Shuffled mini-batch SGD on mean cross-entropy.

    With ``prox=(mu, anchor)`` the objective gains mu/2 * ||theta - anchor||^2.
    Momentum, weight decay and cosine learning-rate annealing are off by
    default.  Deterministic given (params, ds, seed, hyperparameters).
    """
    if epochs < 0:
        raise ConfigurationError("epochs must be >= 0")
    if lr <= 0:
        raise ConfigurationError("learning rate must be > 0")
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    if epochs == 0:
        return params
    if ds.n == 0:
        raise ValueError("cannot train on an empty dataset")

    rng = np.random.default_rng(seed)
    theta = params.copy()
    velocity = np.zeros_like(theta.values)
    for e in range(epochs):
        lr_e = lr * 0.5 * (1.0 + np.cos(np.pi * e / epochs)) if cosine_lr else lr
        order = rng.permutation(ds.n)
        for start in range(0, ds.n, batch_size):
            batch = order[start : start + batch_size]
            grad = _full_grad(
                theta, ds.features[batch], ds.labels[batch], prox, weight_decay
            )
            if momentum:
                velocity = momentum * velocity + grad
                theta.values = theta.values - lr_e * velocity
            else:
                theta.values = theta.values - lr_e * grad
    return theta
