"""Client-side models, cross-entropy loss with analytic gradients, and local SGD.

Parameters are stored as one flat vector: for each layer in order, the
weight matrix (``fan_in x fan_out``, row-major) followed by its bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .numerics import ParamVector

MODEL_KINDS = ("logistic_regression", "mlp")
OUTPUTS = ("softmax", "sigmoid")


class TrainingDivergedError(FloatingPointError):
    """Loss or parameters became non-finite during local training."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    layer_sizes: tuple[int, ...]
    output: str = "softmax"
    negative_slope: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output {self.output!r}")
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError("layer_sizes needs at least input and output sizes, all positive")
        if self.kind == "logistic_regression" and len(self.layer_sizes) != 2:
            raise ValueError("logistic_regression has no hidden layers")
        if self.output == "sigmoid" and self.layer_sizes[-1] != 1:
            raise ValueError("sigmoid output needs a single output unit")
        if self.output == "softmax" and self.layer_sizes[-1] < 2:
            raise ValueError("softmax output needs at least two classes")

    @property
    def num_params(self) -> int:
        return sum(i * o + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 10
    batch_size: int = 200
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def unpack(spec: ModelSpec, params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` per layer into the flat parameter vector."""
    params = np.asarray(params)
    if params.shape != (spec.num_params,):
        raise ValueError(f"parameter vector has shape {params.shape}, model expects ({spec.num_params},)")
    layers, pos = [], 0
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w = params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ParamVector:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for weights and biases of every layer."""
    chunks = []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_out))
    return np.concatenate(chunks)


def _forward(spec: ModelSpec, layers, x: np.ndarray):
    acts, pre = [x], []
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        pre.append(z)
        if i < len(layers) - 1:
            h = np.where(z > 0, z, spec.negative_slope * z)
            acts.append(h)
    return acts, pre


def predict_scores(spec: ModelSpec, params: ParamVector, inputs: np.ndarray) -> np.ndarray:
    """Output-layer logits, shape ``(n, layer_sizes[-1])``."""
    _, pre = _forward(spec, unpack(spec, params), np.asarray(inputs, dtype=np.float64))
    return pre[-1]


def loss_and_grad(spec: ModelSpec, params: ParamVector, batch: LabeledDataset,
                  batch_index: int | None = None) -> tuple[float, ParamVector]:
    """Mean cross-entropy over ``batch`` and its exact gradient."""
    layers = unpack(spec, params)
    x, y = batch.inputs, batch.labels
    if x.shape[1] != spec.layer_sizes[0]:
        raise ValueError(f"batch has {x.shape[1]} features, model expects {spec.layer_sizes[0]}")
    n = x.shape[0]
    acts, pre = _forward(spec, layers, x)
    logits = pre[-1]

    if spec.output == "sigmoid":
        z = logits[:, 0]
        # -[y log s(z) + (1-y) log(1-s(z))] = log(1 + e^z) - y z
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        prob = np.exp(-np.logaddexp(0.0, -z))
        delta = ((prob - y) / n)[:, None]
    else:
        if y.min() < 0 or y.max() >= logits.shape[1]:
            raise ValueError("labels out of range for the softmax output")
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        log_prob = shifted - log_norm[:, None]
        loss = float(-np.mean(log_prob[np.arange(n), y]))
        delta = np.exp(log_prob)
        delta[np.arange(n), y] -= 1.0
        delta /= n

    if not np.isfinite(loss):
        where = "" if batch_index is None else f" at batch {batch_index}"
        raise TrainingDivergedError(f"non-finite loss{where}")

    grads = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads.append(delta.sum(axis=0))
        grads.append((acts[i].T @ delta).ravel())
        if i > 0:
            back = delta @ w.T
            delta = back * np.where(pre[i - 1] > 0, 1.0, spec.negative_slope)
    grads.reverse()
    return loss, np.concatenate(grads)


def sgd_local_train(spec: ModelSpec, start: ParamVector, shard: LabeledDataset, cfg: TrainingConfig,
                    rng: np.random.Generator | None = None) -> ParamVector:
    """Momentum SGD over seeded shuffles of ``shard``, starting from ``start``.

    Runs ``epochs * ceil(n / batch_size)`` steps; the last batch of an epoch
    may be short. Momentum (``v <- mu v + g; w <- w - lr v``) starts at zero
    on every call. Without ``rng`` the stream is seeded from ``cfg.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    w = np.array(start, dtype=np.float64)
    if w.shape != (spec.num_params,):
        raise ValueError(f"start vector has shape {w.shape}, model expects ({spec.num_params},)")
    velocity = np.zeros_like(w)
    n = len(shard)
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            _, g = loss_and_grad(spec, w, LabeledDataset(shard.inputs[idx], shard.labels[idx]), batch_index=step)
            velocity = cfg.momentum * velocity + g
            w -= cfg.learning_rate * velocity
            if not np.all(np.isfinite(w)):
                raise TrainingDivergedError(f"parameters became non-finite at step {step}")
            step += 1
    return w


def predict(spec: ModelSpec, params: ParamVector, inputs: np.ndarray) -> np.ndarray:
    scores = predict_scores(spec, params, inputs)
    if spec.output == "sigmoid":
        # sigmoid(z) >= 0.5  <=>  z >= 0
        return (scores[:, 0] >= 0.0).astype(np.int64)
    return np.argmax(scores, axis=1)  # argmax returns the first maximum on ties


def evaluate(spec: ModelSpec, params: ParamVector, test: LabeledDataset) -> float:
    """Fraction of misclassified points in ``test``."""
    return float(np.mean(predict(spec, params, test.inputs) != test.labels))
