"""A small feed-forward softmax classifier with manual forward/backward passes.

Hidden layers use tanh so the log-probability surface stays smooth; the
input-gradient and representation-gradient operations below differentiate
through it exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ModelFormatError, TrainingError, UnsupportedVariantError

__all__ = [
    "TrainConfig",
    "MLPClassifier",
    "train",
    "save_model",
    "load_model",
    "fnv1a_64",
]

MODEL_MAGIC = b"HDXM"
MODEL_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass
class TrainConfig:
    """Hyperparameters for mini-batch gradient descent with momentum.

    The step size follows a cosine decay from ``learning_rate`` to 0 over
    ``epochs``.
    """

    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    l2_weight_decay: float = 1e-3
    validation_fraction: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.l2_weight_decay < 0:
            raise ValueError("l2_weight_decay must be non-negative")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class MLPClassifier:
    """Feed-forward tanh network with a softmax output layer.

    ``layer_dims`` is ``[d, h_1, ..., h_L, l]``. Weight matrices are stored
    as ``(fan_in, fan_out)``; a forward pass computes
    ``a_{i} = tanh(a_{i-1} @ W_i + b_i)`` for hidden layers followed by an
    affine map into class logits. Instances are treated as immutable after
    construction; the fingerprint is cached on first use.
    """

    def __init__(self, layer_dims, weights, biases):
        self.layer_dims = [int(v) for v in layer_dims]
        if len(self.layer_dims) < 2:
            raise ValueError("layer_dims needs at least input and output sizes")
        if any(v < 1 for v in self.layer_dims):
            raise ValueError("layer dimensions must be positive")
        if len(weights) != len(self.layer_dims) - 1 or len(biases) != len(weights):
            raise ValueError("weights/biases inconsistent with layer_dims")
        self.weights = []
        self.biases = []
        for i, (w, b) in enumerate(zip(weights, biases)):
            w = np.ascontiguousarray(w, dtype=np.float64)
            b = np.ascontiguousarray(b, dtype=np.float64)
            if w.shape != (self.layer_dims[i], self.layer_dims[i + 1]):
                raise ValueError(f"weight {i} has shape {w.shape}, expected "
                                 f"({self.layer_dims[i]}, {self.layer_dims[i + 1]})")
            if b.shape != (self.layer_dims[i + 1],):
                raise ValueError(f"bias {i} has shape {b.shape}")
            if not np.all(np.isfinite(w)) or not np.all(np.isfinite(b)):
                raise ValueError("model parameters must be finite")
            w.setflags(write=False)
            b.setflags(write=False)
            self.weights.append(w)
            self.biases.append(b)
        self._fingerprint: int | None = None
        self.train_accuracy: float | None = None
        self.validation_accuracy: float | None = None
        self.train_loss_history: list[float] = []

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_hidden_layers(self) -> int:
        return len(self.layer_dims) - 2

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"input has {x.shape[-1]} features, model expects {self.input_dim}")
        return x, single

    def _hidden_activations(self, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            acts.append(np.tanh(acts[-1] @ w + b))
        return acts

    def logits(self, x):
        x, single = self._check_input(x)
        h = self._hidden_activations(x)[-1]
        out = h @ self.weights[-1] + self.biases[-1]
        return out[0] if single else out

    def predict_proba(self, x):
        """Class probabilities, softmax of the logits with max-subtraction."""
        out = _softmax(self.logits(x))
        return out

    def predict_log_proba(self, x):
        """Log-probabilities computed as logit minus logsumexp (never log of softmax)."""
        return _log_softmax(self.logits(x))

    def input_gradient(self, x, y):
        """Gradient of ``log predict_proba(x)[y]`` with respect to ``x``.

        Accepts a single ``(d,)`` vector with an integer label or an
        ``(n, d)`` batch with an ``(n,)`` label vector.
        """
        x, single = self._check_input(x)
        y = np.atleast_1d(np.asarray(y, dtype=np.int64))
        if y.shape != (x.shape[0],):
            raise ValueError("labels must match the number of input rows")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"class index out of range [0, {self.num_classes})")
        acts = self._hidden_activations(x)
        logits = acts[-1] @ self.weights[-1] + self.biases[-1]
        probs = _softmax(logits)
        grad = -probs
        grad[np.arange(x.shape[0]), y] += 1.0
        grad = grad @ self.weights[-1].T
        for i in range(len(self.weights) - 2, -1, -1):
            grad = grad * (1.0 - acts[i + 1] ** 2)
            grad = grad @ self.weights[i].T
        return grad[0] if single else grad

    def representation(self, x):
        """Activations of the final hidden layer."""
        if self.num_hidden_layers < 1:
            raise UnsupportedVariantError("model has no hidden layer to read a representation from")
        x, single = self._check_input(x)
        h = self._hidden_activations(x)[-1]
        return h[0] if single else h

    @property
    def representation_dim(self) -> int:
        if self.num_hidden_layers < 1:
            raise UnsupportedVariantError("model has no hidden layer")
        return self.layer_dims[-2]

    def rep_gradient(self, h, y):
        """Gradient of ``log softmax(W h + b)[y]`` with respect to ``h``.

        Closed form ``(e_y - p) @ W.T`` where ``W`` is the final-layer weight
        matrix and ``p`` the softmax of the final logits.
        """
        h = np.asarray(h, dtype=np.float64)
        single = h.ndim == 1
        if single:
            h = h[None, :]
        if h.shape[1] != self.layer_dims[-2]:
            raise ValueError(f"representation has {h.shape[1]} entries, expected {self.layer_dims[-2]}")
        y = np.atleast_1d(np.asarray(y, dtype=np.int64))
        if y.shape != (h.shape[0],):
            raise ValueError("labels must match the number of representation rows")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"class index out of range [0, {self.num_classes})")
        probs = _softmax(h @ self.weights[-1] + self.biases[-1])
        resid = -probs
        resid[np.arange(h.shape[0]), y] += 1.0
        grad = resid @ self.weights[-1].T
        return grad[0] if single else grad

    def serialize(self) -> bytes:
        """Model binary: magic, version u32 LE, layer count u32, layer_dims
        u32 each, then per layer row-major f64 LE weights followed by biases."""
        parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(self.layer_dims))]
        parts.append(struct.pack(f"<{len(self.layer_dims)}I", *self.layer_dims))
        for w, b in zip(self.weights, self.biases):
            parts.append(w.astype("<f8").tobytes(order="C"))
            parts.append(b.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def deserialize(cls, data: bytes) -> "MLPClassifier":
        if len(data) < 12:
            raise ModelFormatError("model binary truncated before header")
        if data[:4] != MODEL_MAGIC:
            raise ModelFormatError(f"bad model magic {data[:4]!r}, expected {MODEL_MAGIC!r}")
        version, n_dims = struct.unpack("<II", data[4:12])
        if version != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        offset = 12
        if len(data) < offset + 4 * n_dims:
            raise ModelFormatError("model binary truncated in layer_dims")
        dims = list(struct.unpack(f"<{n_dims}I", data[offset:offset + 4 * n_dims]))
        offset += 4 * n_dims
        weights = []
        biases = []
        for i in range(n_dims - 1):
            w_count = dims[i] * dims[i + 1]
            need = 8 * (w_count + dims[i + 1])
            if len(data) < offset + need:
                raise ModelFormatError(f"model binary truncated in layer {i} parameters")
            w = np.frombuffer(data, dtype="<f8", count=w_count, offset=offset).reshape(dims[i], dims[i + 1])
            offset += 8 * w_count
            b = np.frombuffer(data, dtype="<f8", count=dims[i + 1], offset=offset)
            offset += 8 * dims[i + 1]
            weights.append(w.copy())
            biases.append(b.copy())
        if offset != len(data):
            raise ModelFormatError("model binary has trailing bytes")
        return cls(dims, weights, biases)

    def fingerprint(self) -> int:
        """64-bit FNV-1a over the serialized bytes; cached (models are immutable)."""
        if self._fingerprint is None:
            self._fingerprint = fnv1a_64(self.serialize())
        return self._fingerprint


def _init_parameters(dims, rng):
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _mean_cross_entropy(weights, biases, x, y):
    h = x
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ w + b)
    logp = _log_softmax(h @ weights[-1] + biases[-1])
    return float(-logp[np.arange(len(y)), y].mean())


def train(dataset: Dataset, config: TrainConfig, hidden_dims=None) -> MLPClassifier:
    """Train a classifier by mini-batch gradient descent with momentum on mean
    cross-entropy.

    Deterministic for a fixed ``config.seed`` (seeded init and shuffling).
    ``hidden_dims`` defaults to ``(32, 32)``, or ``(128, 64)`` for image
    datasets. The returned model carries ``train_accuracy``,
    ``validation_accuracy`` (when a split is held out) and the per-epoch
    ``train_loss_history``.
    """
    present = np.unique(dataset.labels)
    if present.size < 2:
        raise TrainingError("training requires at least 2 classes present in the data")
    if hidden_dims is None:
        hidden_dims = (128, 64) if dataset.image_shape is not None else (32, 32)
    dims = [dataset.d, *[int(v) for v in hidden_dims], dataset.num_classes]

    rng = np.random.default_rng(config.seed)
    weights, biases = _init_parameters(dims, rng)
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]

    order = rng.permutation(dataset.n)
    n_val = int(round(config.validation_fraction * dataset.n))
    val_idx = order[dataset.n - n_val:]
    train_idx = order[:dataset.n - n_val]
    x_train = dataset.features[train_idx]
    y_train = dataset.labels[train_idx]
    n_train = len(train_idx)
    if np.unique(y_train).size < 2:
        raise TrainingError("training split has fewer than 2 classes; lower validation_fraction")

    history = []
    for epoch in range(config.epochs):
        # cosine step-size decay keeps the end-of-training loss descent smooth
        lr = config.learning_rate * 0.5 * (1.0 + np.cos(np.pi * epoch / config.epochs))
        perm = rng.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            batch = perm[start:start + config.batch_size]
            xb = x_train[batch]
            yb = y_train[batch]

            acts = [xb]
            for w, b in zip(weights[:-1], biases[:-1]):
                acts.append(np.tanh(acts[-1] @ w + b))
            probs = _softmax(acts[-1] @ weights[-1] + biases[-1])

            delta = probs
            delta[np.arange(len(yb)), yb] -= 1.0
            delta /= len(yb)
            grads_w = [None] * len(weights)
            grads_b = [None] * len(weights)
            for i in range(len(weights) - 1, -1, -1):
                grads_w[i] = acts[i].T @ delta
                grads_b[i] = delta.sum(axis=0)
                if i > 0:
                    delta = (delta @ weights[i].T) * (1.0 - acts[i] ** 2)

            for i in range(len(weights)):
                gw = grads_w[i]
                if config.l2_weight_decay > 0:
                    gw = gw + config.l2_weight_decay * weights[i]
                vel_w[i] = config.momentum * vel_w[i] - lr * gw
                vel_b[i] = config.momentum * vel_b[i] - lr * grads_b[i]
                weights[i] = weights[i] + vel_w[i]
                biases[i] = biases[i] + vel_b[i]

        epoch_loss = _mean_cross_entropy(weights, biases, x_train, y_train)
        if not np.isfinite(epoch_loss):
            raise TrainingError(f"training diverged at epoch {epoch + 1}: loss is not finite")
        history.append(epoch_loss)

    model = MLPClassifier(dims, weights, biases)
    model.train_loss_history = history
    preds = model.predict_proba(x_train).argmax(axis=1)
    model.train_accuracy = float((preds == y_train).mean())
    if n_val > 0:
        val_preds = model.predict_proba(dataset.features[val_idx]).argmax(axis=1)
        model.validation_accuracy = float((val_preds == dataset.labels[val_idx]).mean())
    return model


def save_model(model: MLPClassifier, path) -> None:
    data = model.serialize()
    with open(path, "wb") as fh:
        fh.write(data)


def load_model(path) -> MLPClassifier:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    return MLPClassifier.deserialize(data)
