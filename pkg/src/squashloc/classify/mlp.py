"""Binary feed-forward networks trained by backpropagation (numpy only)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from squashloc.classify.features import FeatureKind, normalize

# hidden-layer shapes that worked best for each feature kind
T1_HIDDEN = (10,) * 20
T2_HIDDEN = (10,) * 10


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became NaN at epoch {epoch}")
        self.epoch = epoch


class DegenerateLabelsError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    lr: float = 1e-3
    epochs: int = 200
    batch: int = 32
    seed: int = 0


@dataclass
class MlpModel:
    """ReLU hidden layers, logistic output unit."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    normalization: str = "none"  # "T1", "T2" or "none"
    history: list[float] = field(default_factory=list, repr=False)

    @classmethod
    def zeros(cls, layer_sizes, normalization: str = "none") -> "MlpModel":
        sizes = list(layer_sizes)
        weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(b) for b in sizes[1:]]
        return cls(sizes, weights, biases, normalization=normalization)

    @classmethod
    def init(cls, layer_sizes, rng: np.random.Generator, normalization: str = "none") -> "MlpModel":
        sizes = list(layer_sizes)
        weights = [rng.normal(0.0, np.sqrt(2.0 / a), (a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(b) for b in sizes[1:]]
        return cls(sizes, weights, biases, normalization=normalization)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    def parameters(self) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(self.weights, self.biases)])

    def set_parameters(self, flat) -> None:
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for i, (a, b) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            self.weights[i] = flat[pos:pos + a * b].reshape(a, b)
            pos += a * b
            self.biases[i] = flat[pos:pos + b].copy()
            pos += b
        if pos != flat.size:
            raise ValueError(f"expected {pos} parameters, got {flat.size}")

    def prepare(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_inputs:
            raise ValueError(f"input has {X.shape[1]} features, model expects {self.n_inputs}")
        if self.normalization != "none":
            X = normalize(X, FeatureKind(self.normalization))
        return X

    def logits(self, X) -> np.ndarray:
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        return (h @ self.weights[-1] + self.biases[-1])[:, 0]

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.logits(self.prepare(X)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _bce_from_logits(z, y) -> float:
    # log(1 + e^z) - y z, computed without overflow
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _backward(model: MlpModel, X, y):
    activations = [X]
    h = X
    for W, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        activations.append(h)
    z = (h @ model.weights[-1] + model.biases[-1])[:, 0]
    delta = ((_sigmoid(z) - y) / len(y))[:, None]
    grads_W, grads_b = [], []
    for layer in range(len(model.weights) - 1, -1, -1):
        a = activations[layer]
        grads_W.append(a.T @ delta)
        grads_b.append(delta.sum(axis=0))
        if layer:
            delta = (delta @ model.weights[layer].T) * (a > 0)
    return grads_W[::-1], grads_b[::-1]


def train_binary(features, labels, hidden=(10, 10), hyper: TrainingConfig | None = None,
                 normalization: str = "none") -> MlpModel:
    """Mini-batch gradient descent on binary cross-entropy.

    ``features`` is an (n, d) array or a list of FeatureVectors; ``labels``
    holds 0/1. Per-epoch full-data loss is kept in ``model.history`` with the
    loss at initialisation first.
    """
    hyper = hyper or TrainingConfig()
    X = np.asarray([getattr(f, "values", f) for f in features], dtype=float)
    y = np.asarray(labels, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be an (n, d) array matching labels")
    n_pos = int(np.sum(y == 1))
    if n_pos < 2 or len(y) - n_pos < 2:
        raise DegenerateLabelsError("need at least two examples of each class")

    rng = np.random.default_rng(hyper.seed)
    model = MlpModel.init([X.shape[1], *hidden, 1], rng, normalization)
    Xn = model.prepare(X)
    model.history.append(_bce_from_logits(model.logits(Xn), y))
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(len(y))
        # overflow shows up as a non-finite loss, reported below
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, len(y), hyper.batch):
                batch = order[start:start + hyper.batch]
                gW, gb = _backward(model, Xn[batch], y[batch])
                for i in range(len(model.weights)):
                    model.weights[i] -= hyper.lr * gW[i]
                    model.biases[i] -= hyper.lr * gb[i]
            loss = _bce_from_logits(model.logits(Xn), y)
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        model.history.append(loss)
    return model


def predict(model: MlpModel, x) -> float:
    """Confidence in [0, 1] that ``x`` belongs to the model's class."""
    values = np.asarray(getattr(x, "values", x), dtype=float)
    if values.ndim != 1:
        raise ValueError("predict takes a single feature vector")
    return float(model.predict_proba(values[None, :])[0])
