"""Small differentiable classifiers and local SGD.

Two model families are supported, both flattened into a single parameter
vector so the server can treat every model as a plain array:

* ``logistic``: multinomial logistic regression, layout ``[W (d x c), b (c)]``
* ``mlp``: one tanh hidden layer, layout ``[W1 (d x h), b1 (h), W2 (h x c), b2 (c)]``

All matrices are stored row-major. Training is plain mini-batch SGD on the
mean softmax cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError, DimensionError
from .param_math import ParamVector, as_params

MODEL_KINDS = ("logistic", "mlp")


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "logistic"
    input_dim: int = 20
    hidden_dim: int = 0
    num_classes: int = 10

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.num_classes < 2:
            raise ConfigError("input_dim must be >= 1 and num_classes >= 2")
        if self.kind == "mlp" and self.hidden_dim < 1:
            raise ConfigError("mlp needs hidden_dim >= 1")
        if self.kind == "logistic" and self.hidden_dim != 0:
            raise ConfigError("logistic model takes hidden_dim = 0")

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        d, h, c = self.input_dim, self.hidden_dim, self.num_classes
        if self.kind == "logistic":
            return [(d, c), (c,)]
        return [(d, h), (h,), (h, c), (c,)]

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)

    def unflatten(self, params: ParamVector) -> list[np.ndarray]:
        if params.size != self.num_params:
            raise DimensionError(f"model expects {self.num_params} parameters, got {params.size}")
        out, pos = [], 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            out.append(params[pos:pos + size].reshape(shape))
            pos += size
        return out


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.learning_rate >= 0.0:
            raise ConfigError("learning_rate must be non-negative")


@dataclass
class TrainOutcome:
    params: ParamVector
    epochs_completed: int
    samples_used: int


def init_model(spec: ModelSpec, seed: int) -> ParamVector:
    """Seeded init: N(0, 1/fan_in) weights, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
    parts = []
    for shape in spec.shapes:
        if len(shape) == 2:
            parts.append(rng.standard_normal(shape).ravel() / np.sqrt(shape[0]))
        else:
            parts.append(np.zeros(shape))
    return np.concatenate(parts)


def _forward(spec: ModelSpec, params: ParamVector, x: np.ndarray):
    if x.shape[1] != spec.input_dim:
        raise DimensionError(f"features have dim {x.shape[1]}, model expects {spec.input_dim}")
    if spec.kind == "logistic":
        w, b = spec.unflatten(params)
        return x @ w + b, None
    w1, b1, w2, b2 = spec.unflatten(params)
    hidden = np.tanh(x @ w1 + b1)
    return hidden @ w2 + b2, hidden


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_accuracy(spec: ModelSpec, params: ParamVector, data: Dataset) -> tuple[float, float]:
    """Mean cross-entropy and top-1 accuracy of ``params`` on ``data``."""
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    logits, _ = _forward(spec, as_params(params), data.features)
    logp = _log_softmax(logits)
    n = len(data)
    loss = -float(logp[np.arange(n), data.labels].mean())
    acc = float((logits.argmax(axis=1) == data.labels).mean())
    return loss, acc


def _grad_arrays(spec: ModelSpec, params: ParamVector, x: np.ndarray, y: np.ndarray) -> ParamVector:
    logits, hidden = _forward(spec, params, x)
    probs = np.exp(_log_softmax(logits))
    n = x.shape[0]
    probs[np.arange(n), y] -= 1.0
    g = probs / n  # dLoss/dlogits
    if spec.kind == "logistic":
        return np.concatenate([(x.T @ g).ravel(), g.sum(axis=0)])
    _, _, w2, _ = spec.unflatten(params)
    dz = (g @ w2.T) * (1.0 - hidden * hidden)
    return np.concatenate([
        (x.T @ dz).ravel(), dz.sum(axis=0), (hidden.T @ g).ravel(), g.sum(axis=0),
    ])


def gradient(spec: ModelSpec, params: ParamVector, batch: Dataset) -> ParamVector:
    """Analytic gradient of the mean cross-entropy over ``batch``."""
    if len(batch) == 0:
        raise DataError("gradient of an empty batch")
    return _grad_arrays(spec, as_params(params), batch.features, batch.labels)


def train_epochs(spec: ModelSpec, start: ParamVector, partition: Dataset,
                 cfg: TrainConfig) -> Iterator[ParamVector]:
    """Yield a copy of the parameters after each of ``cfg.epochs`` epochs.

    Stopping iteration early gives exactly the same prefix as running all
    epochs, which is what lets partial training and pre-computed training
    agree bit-for-bit.
    """
    n = len(partition)
    if n == 0:
        raise DataError("cannot train on an empty partition")
    rng = np.random.default_rng(cfg.seed)
    w = as_params(start).copy()
    x, y = partition.features, partition.labels
    lr = cfg.learning_rate
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        if lr != 0.0:
            for lo in range(0, n, cfg.batch_size):
                idx = np.sort(order[lo:lo + cfg.batch_size])
                w -= lr * _grad_arrays(spec, w, x[idx], y[idx])
        yield w.copy()


def local_train(spec: ModelSpec, start: ParamVector, partition: Dataset, cfg: TrainConfig,
                interrupt_after_epoch: Callable[[int], bool] | None = None) -> TrainOutcome:
    """Run up to ``cfg.epochs`` epochs of SGD from ``start``.

    ``interrupt_after_epoch(k)`` is consulted after the k-th finished epoch;
    returning True stops training there. The running epoch is never cut
    short, so at least one epoch always completes.
    """
    params, done = None, 0
    for params in train_epochs(spec, start, partition, cfg):
        done += 1
        if done < cfg.epochs and interrupt_after_epoch is not None and interrupt_after_epoch(done):
            break
    return TrainOutcome(params=params, epochs_completed=done, samples_used=done * len(partition))
