"""Transfer-learning model: a frozen random-feature base and a trainable head.

Head parameter layout (public contract): layers in forward order; for each
layer the weight matrix of shape ``(fan_in, fan_out)`` flattened row-major,
followed by its ``fan_out`` biases. Hidden layers use ReLU, the last layer
feeds a softmax.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ParamVector, SeededRng, as_generator
from .errors import ArgumentError, DimensionError, NumericError


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FrozenBase:
    """Fixed feature extractor ``tanh(x @ projection + bias)``."""

    projection: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        proj = _readonly(self.projection)
        bias = _readonly(self.bias)
        if proj.ndim != 2 or bias.shape != (proj.shape[1],):
            raise DimensionError(f"projection {proj.shape} and bias {bias.shape} disagree")
        object.__setattr__(self, "projection", proj)
        object.__setattr__(self, "bias", bias)

    @classmethod
    def random(cls, input_dim: int, feature_dim: int, rng: SeededRng | np.random.Generator | int) -> "FrozenBase":
        """Draw every entry once from N(0, 1/input_dim)."""
        if input_dim < 1 or feature_dim < 1:
            raise ArgumentError(f"dimensions must be positive, got {input_dim}x{feature_dim}")
        gen = as_generator(rng)
        std = 1.0 / np.sqrt(input_dim)
        proj = gen.normal(0.0, std, size=(input_dim, feature_dim))
        bias = gen.normal(0.0, std, size=feature_dim)
        return cls(proj, bias)

    @property
    def input_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.projection.shape[1]

    def fingerprint(self) -> bytes:
        return self.projection.tobytes() + self.bias.tobytes()


def base_features(base: FrozenBase, inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != base.input_dim:
        raise DimensionError(f"inputs of shape {x.shape} do not match base input_dim {base.input_dim}")
    return np.tanh(x @ base.projection + base.bias)


def head_param_count(input_dim: int, layer_sizes: Sequence[int]) -> int:
    total, fan_in = 0, input_dim
    for fan_out in layer_sizes:
        total += fan_in * fan_out + fan_out
        fan_in = fan_out
    return total


@dataclass(frozen=True)
class ClassifierHead:
    """Dense softmax classifier. ``layer_sizes`` lists hidden widths then the class count."""

    input_dim: int
    layer_sizes: tuple[int, ...]
    params: ParamVector = field(compare=True)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if self.input_dim < 1 or not sizes or any(s < 1 for s in sizes):
            raise ArgumentError(f"invalid head shape {self.input_dim} -> {sizes}")
        if sizes[-1] < 2:
            raise ArgumentError("a classifier head needs at least two classes")
        expected = head_param_count(self.input_dim, sizes)
        if len(self.params) != expected:
            raise DimensionError(f"head expects {expected} parameters, got {len(self.params)}")

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        hidden: Sequence[int],
        n_classes: int,
        rng: SeededRng | np.random.Generator | int,
        std: float | None = None,
    ) -> "ClassifierHead":
        """Gaussian weights, zero biases.

        With ``std=None`` each layer uses ``sqrt(2 / (fan_in + fan_out))``
        (Glorot scaling); otherwise every weight shares the given std.
        """
        sizes = tuple(hidden) + (n_classes,)
        gen = as_generator(rng)
        chunks, fan_in = [], input_dim
        for fan_out in sizes:
            layer_std = np.sqrt(2.0 / (fan_in + fan_out)) if std is None else std
            chunks.append(gen.normal(0.0, layer_std, size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
            fan_in = fan_out
        return cls(input_dim, sizes, ParamVector(np.concatenate(chunks)))

    @classmethod
    def zeros(cls, input_dim: int, hidden: Sequence[int], n_classes: int) -> "ClassifierHead":
        sizes = tuple(hidden) + (n_classes,)
        return cls(input_dim, sizes, ParamVector.zeros(head_param_count(input_dim, sizes)))

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def with_params(self, params: ParamVector) -> "ClassifierHead":
        return ClassifierHead(self.input_dim, self.layer_sizes, params)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weights, biases) views per layer, in forward order."""
        return _unflatten(self.input_dim, self.layer_sizes, self.params.values)


def _unflatten(input_dim: int, sizes: Sequence[int], flat: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    out, pos, fan_in = [], 0, input_dim
    for fan_out in sizes:
        w = flat[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = flat[pos : pos + fan_out]
        pos += fan_out
        out.append((w, b))
        fan_in = fan_out
    return out


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward(layers, x: np.ndarray):
    """Return pre-activations and activations for every layer (logits last)."""
    acts, pre = [x], []
    for i, (w, b) in enumerate(layers):
        z = acts[-1] @ w + b
        pre.append(z)
        if i < len(layers) - 1:
            acts.append(np.maximum(z, 0.0))
    return pre, acts


def _check_features(head: ClassifierHead, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != head.input_dim:
        raise DimensionError(f"features of shape {x.shape} do not match head input_dim {head.input_dim}")
    return x


def head_logits(head: ClassifierHead, features: np.ndarray) -> np.ndarray:
    x = _check_features(head, features)
    pre, _ = _forward(head.layers(), x)
    return pre[-1]


def head_forward(head: ClassifierHead, features: np.ndarray) -> np.ndarray:
    """Class-probability matrix, one row per input."""
    return np.exp(_log_softmax(head_logits(head, features)))


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ArgumentError(f"batch features must be a nonempty matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise DimensionError(f"{x.shape[0]} feature rows but labels of shape {y.shape}")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            raise ArgumentError("labels must be integers")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y.astype(np.int64))

    def __len__(self) -> int:
        return self.labels.shape[0]


def _loss_and_grad_flat(input_dim, sizes, flat, x, y):
    layers = _unflatten(input_dim, sizes, flat)
    pre, acts = _forward(layers, x)
    logp = _log_softmax(pre[-1])
    m = x.shape[0]
    loss = -float(np.mean(logp[np.arange(m), y]))
    if not np.isfinite(loss):
        raise NumericError("loss is not finite")

    delta = np.exp(logp)
    delta[np.arange(m), y] -= 1.0
    delta /= m
    grads = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads.append(delta.sum(axis=0))
        grads.append((acts[i].T @ delta).ravel())
        if i > 0:
            delta = (delta @ w.T) * (pre[i - 1] > 0)
    grads.reverse()
    return loss, np.concatenate(grads)


def _check_labels(head: ClassifierHead, batch: LabeledBatch) -> None:
    y = batch.labels
    if y.min() < 0 or y.max() >= head.n_classes:
        raise ArgumentError(f"labels must lie in [0, {head.n_classes}), got range [{y.min()}, {y.max()}]")


def loss_and_grad(head: ClassifierHead, batch: LabeledBatch) -> tuple[float, ParamVector]:
    """Mean cross-entropy over the batch and its gradient in head parameter order."""
    x = _check_features(head, batch.features)
    _check_labels(head, batch)
    loss, grad = _loss_and_grad_flat(head.input_dim, head.layer_sizes, head.params.values, x, batch.labels)
    if not np.all(np.isfinite(grad)):
        raise NumericError("gradient is not finite")
    return loss, ParamVector(grad)


def mean_loss(head: ClassifierHead, batch: LabeledBatch) -> float:
    """Mean cross-entropy without the gradient."""
    _check_labels(head, batch)
    logp = _log_softmax(head_logits(head, batch.features))
    loss = -float(np.mean(logp[np.arange(len(batch)), batch.labels]))
    if not np.isfinite(loss):
        raise NumericError("loss is not finite")
    return loss


def local_update(
    head: ClassifierHead,
    data: LabeledBatch,
    epochs: int,
    eta: float,
    batch_size: int,
    rng: SeededRng | np.random.Generator | int,
    optimizer: str = "sgd",
) -> tuple[ParamVector, int]:
    """Train a copy of ``head`` on one client's data.

    Each epoch draws ``rng.permutation(n)`` and walks it in contiguous
    mini-batches of ``batch_size`` (the last one may be short). With
    ``optimizer="sgd"`` every step is ``w = w - eta * grad``.

    Returns the trained parameters and the shard size ``n``.
    """
    if epochs < 0:
        raise ArgumentError(f"epochs must be >= 0, got {epochs}")
    if not eta >= 0:
        raise ArgumentError(f"learning rate must be >= 0, got {eta}")
    if batch_size < 1:
        raise ArgumentError(f"batch_size must be positive, got {batch_size}")
    if optimizer not in ("sgd", "adam"):
        raise ArgumentError(f"unknown optimizer {optimizer!r}")
    x = _check_features(head, data.features)
    _check_labels(head, data)
    y = data.labels
    n = len(data)
    gen = as_generator(rng)

    w = np.array(head.params.values)
    adam = _Adam(w.shape[0]) if optimizer == "adam" else None
    for _ in range(epochs):
        order = gen.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, g = _loss_and_grad_flat(head.input_dim, head.layer_sizes, w, x[idx], y[idx])
            if adam is None:
                w = w - eta * g
            else:
                w = adam.step(w, g, eta)
    if not np.all(np.isfinite(w)):
        raise NumericError("local training diverged")
    return ParamVector(w), n


class _Adam:
    """Adam state for one local_update call (moments restart every call)."""

    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-7):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, w: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return w - eta * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True, eq=False)
class FullModel:
    """Base plus head: what the server hands a new participant."""

    base: FrozenBase
    head: ClassifierHead

    def predict_proba(self, inputs: np.ndarray) -> np.ndarray:
        return head_forward(self.head, base_features(self.base, inputs))

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(inputs), axis=1)
