"""Tiny tanh-output MLP for 2D binary classification.

Networks are small enough that every engine operation (deltas, proximal
terms, control variates, DP noise, server moments) works on the flat weight
vector; the layered :class:`Network` form exists for inspection and for the
flatten/unflatten round trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError

FEATURES = {
    "x1": lambda x1, x2: x1,
    "x2": lambda x1, x2: x2,
    "x1_sq": lambda x1, x2: x1 * x1,
    "x2_sq": lambda x1, x2: x2 * x2,
    "x1_x2": lambda x1, x2: x1 * x2,
    "sin_x1": lambda x1, x2: np.sin(x1),
    "sin_x2": lambda x1, x2: np.sin(x2),
}

MAX_HIDDEN_LAYERS = 6
MAX_LAYER_WIDTH = 8


def _tanh_grad(z, a):
    return 1.0 - a * a


def _relu_grad(z, a):
    return (z > 0).astype(float)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _sigmoid_grad(z, a):
    return a * (1.0 - a)


# name -> (activation, derivative expressed through pre-activation z and output a)
ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_grad),
    "relu": (lambda z: np.maximum(z, 0.0), _relu_grad),
    "sigmoid": (_sigmoid, _sigmoid_grad),
    "linear": (lambda z: z, lambda z, a: np.ones_like(z)),
}


@dataclass(frozen=True)
class NetworkSpec:
    input_features: tuple[str, ...] = ("x1", "x2")
    hidden_layers: tuple[int, ...] = (4, 2)
    hidden_activation: str = "tanh"
    l2_lambda: float = 0.0
    init_scale: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "input_features", tuple(self.input_features))
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))

    def validate(self) -> NetworkSpec:
        if not self.input_features:
            raise ConfigError("at least one input feature is required", "input_features")
        unknown = [f for f in self.input_features if f not in FEATURES]
        if unknown:
            raise ConfigError(f"unknown features {unknown}", "input_features")
        if len(set(self.input_features)) != len(self.input_features):
            raise ConfigError("duplicate input features", "input_features")
        if len(self.hidden_layers) > MAX_HIDDEN_LAYERS:
            raise ConfigError(f"at most {MAX_HIDDEN_LAYERS} hidden layers", "hidden_layers")
        if any(h < 1 or h > MAX_LAYER_WIDTH for h in self.hidden_layers):
            raise ConfigError(f"hidden widths must lie in [1, {MAX_LAYER_WIDTH}]", "hidden_layers")
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.hidden_activation!r}", "hidden_activation")
        if not (self.l2_lambda >= 0 and np.isfinite(self.l2_lambda)):
            raise ConfigError("l2_lambda must be a finite nonnegative number", "l2_lambda")
        if not (self.init_scale >= 0 and np.isfinite(self.init_scale)):
            raise ConfigError("init_scale must be a finite nonnegative number", "init_scale")
        return self

    @property
    def layout(self) -> tuple[tuple[int, int], ...]:
        """(fan_out, fan_in) per layer, input to output."""
        widths = [len(self.input_features), *self.hidden_layers, 1]
        return tuple((widths[i + 1], widths[i]) for i in range(len(widths) - 1))

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layout)


@dataclass(frozen=True, eq=False)
class WeightVector:
    values: np.ndarray
    layout: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, WeightVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)


@dataclass(eq=False)
class Network:
    spec: NetworkSpec
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.spec == other.spec
            and len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )


def init_network(spec: NetworkSpec, rng: np.random.Generator) -> Network:
    spec.validate()
    values = rng.uniform(-spec.init_scale, spec.init_scale, size=spec.n_params)
    if spec.init_scale == 0:
        values = np.zeros(spec.n_params)
    return unflatten_weights(WeightVector(values, spec.layout), spec)


def flatten_weights(net: Network) -> WeightVector:
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return WeightVector(np.concatenate(parts).astype(float), net.spec.layout)


def _split(values: np.ndarray, layout) -> tuple[list[np.ndarray], list[np.ndarray]]:
    weights, biases = [], []
    pos = 0
    for fan_out, fan_in in layout:
        n = fan_out * fan_in
        weights.append(values[pos:pos + n].reshape(fan_out, fan_in))
        pos += n
        biases.append(values[pos:pos + fan_out])
        pos += fan_out
    return weights, biases


def unflatten_weights(wv: WeightVector | np.ndarray, spec: NetworkSpec) -> Network:
    values = wv.values if isinstance(wv, WeightVector) else np.asarray(wv, dtype=float)
    if values.ndim != 1 or len(values) != spec.n_params:
        raise ShapeError(f"expected {spec.n_params} values, got {values.shape}")
    weights, biases = _split(values.copy(), spec.layout)
    return Network(spec, weights, biases)


def weight_mask(spec: NetworkSpec) -> np.ndarray:
    """1.0 at weight positions, 0.0 at bias positions of the flat vector."""
    mask = []
    for fan_out, fan_in in spec.layout:
        mask.append(np.ones(fan_out * fan_in))
        mask.append(np.zeros(fan_out))
    return np.concatenate(mask)


def features(spec: NetworkSpec, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    x1, x2 = points[:, 0], points[:, 1]
    return np.stack([FEATURES[f](x1, x2) for f in spec.input_features], axis=1)


def _forward_flat(spec: NetworkSpec, values: np.ndarray, X: np.ndarray):
    weights, biases = _split(values, spec.layout)
    act, _ = ACTIVATIONS[spec.hidden_activation]
    zs, acts = [], [X]
    a = X
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        a = np.tanh(z) if i == len(weights) - 1 else act(z)
        zs.append(z)
        acts.append(a)
    return weights, zs, acts


def predict(spec: NetworkSpec, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Batch forward pass on raw 2D points; returns outputs in [-1, 1]."""
    _, _, acts = _forward_flat(spec, values, features(spec, points))
    return acts[-1][:, 0]


def forward(net: Network, point: Sequence[float]) -> float:
    return float(predict(net.spec, flatten_weights(net).values, np.asarray([point]))[0])


def data_loss(spec: NetworkSpec, values: np.ndarray, points: np.ndarray, labels: np.ndarray) -> float:
    """Mean 0.5*(y_hat - y)^2 without the L2 term."""
    err = predict(spec, values, points) - labels
    return float(0.5 * np.mean(err * err))


def loss_and_grad_flat(
    spec: NetworkSpec, values: np.ndarray, points: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Objective and its exact gradient, working directly on a flat vector."""
    labels = np.asarray(labels, dtype=float)
    if len(labels) == 0:
        raise ValueError("batch must be nonempty")
    weights, zs, acts = _forward_flat(spec, values, features(spec, points))
    _, act_grad = ACTIVATIONS[spec.hidden_activation]
    n = len(labels)
    out = acts[-1][:, 0]
    err = out - labels
    loss = 0.5 * np.mean(err * err)
    # weights only, biases excluded from the penalty
    if spec.l2_lambda:
        loss += 0.5 * spec.l2_lambda * sum(float(np.sum(w * w)) for w in weights)

    grads_w, grads_b = [None] * len(weights), [None] * len(weights)
    delta = ((err / n) * (1.0 - out * out))[:, None]
    for i in range(len(weights) - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i] + spec.l2_lambda * weights[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i]) * act_grad(zs[i - 1], acts[i])

    flat = np.concatenate([g for pair in zip(grads_w, grads_b) for g in (pair[0].ravel(), pair[1])])
    return float(loss), flat


def loss_and_gradient(net: Network, batch) -> tuple[float, WeightVector]:
    """Loss and gradient for a batch of ``((x1, x2), label)`` pairs."""
    batch = list(batch)
    if not batch:
        raise ValueError("batch must be nonempty")
    points = np.array([p for p, _ in batch], dtype=float)
    labels = np.array([y for _, y in batch], dtype=float)
    loss, grad = loss_and_grad_flat(net.spec, flatten_weights(net).values, points, labels)
    return loss, WeightVector(grad, net.spec.layout)


def sgd_step(net: Network, grad: WeightVector | np.ndarray, lr: float) -> Network:
    g = grad.values if isinstance(grad, WeightVector) else np.asarray(grad, dtype=float)
    w = flatten_weights(net).values
    if g.shape != w.shape:
        raise ShapeError(f"gradient length {g.shape} does not match {w.shape}")
    return unflatten_weights(w - lr * g, net.spec)
