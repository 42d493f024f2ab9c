"""Softmax classifiers trained from scratch with numpy.

Two architectures are supported:

* ``linear``: multinomial logistic regression, ``logits = W x + b``.
* ``mlp1``: one tanh hidden layer, ``logits = W2 tanh(W1 x + b1) + b2``.

The training objective is the batch mean of ``CE(y, p) + alpha * KL(q || p)``
where ``q`` is an optional teacher distribution. Gradients are analytic.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ArgumentError, ShapeError, TrainingError

PROB_FLOOR = 1e-12
ARCHS = ("linear", "mlp1")


class NumericalFloorWarning(RuntimeWarning):
    """A probability hit the log floor inside a loss."""


@dataclass(frozen=True, eq=False)
class ModelParams:
    arch: str
    weights: Mapping[str, np.ndarray]

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ArgumentError(f"unknown architecture {self.arch!r}")
        expected = ("W", "b") if self.arch == "linear" else ("W1", "b1", "W2", "b2")
        if tuple(self.weights) != expected:
            raise ShapeError(f"{self.arch} expects weights {expected}, got {tuple(self.weights)}")
        for name, w in self.weights.items():
            if not np.all(np.isfinite(w)):
                raise ArgumentError(f"non-finite entries in {name}")
        if self.arch == "linear":
            C, d = self.weights["W"].shape
            if self.weights["b"].shape != (C,):
                raise ShapeError("bias shape does not match W")
        else:
            h, d = self.weights["W1"].shape
            C, h2 = self.weights["W2"].shape
            if h2 != h or self.weights["b1"].shape != (h,) or self.weights["b2"].shape != (C,):
                raise ShapeError("mlp1 weight shapes are inconsistent")

    @property
    def input_dim(self) -> int:
        return self.weights["W" if self.arch == "linear" else "W1"].shape[1]

    @property
    def num_classes(self) -> int:
        return self.weights["W" if self.arch == "linear" else "W2"].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.input_dim if self.arch == "linear" else self.weights["W1"].shape[0]

    def __eq__(self, other):
        if not isinstance(other, ModelParams) or other.arch != self.arch:
            return NotImplemented
        return all(np.array_equal(self.weights[k], other.weights[k]) for k in self.weights)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.weights.items()})

    def to_dict(self) -> dict:
        """JSON-ready form: a shape header plus row-major flat data per tensor."""
        return {
            "arch": self.arch,
            "tensors": [
                {"name": k, "shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in self.weights.items()
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelParams":
        weights = {}
        for t in obj["tensors"]:
            data = np.asarray(t["data"], dtype=np.float64)
            if data.size != math.prod(t["shape"]):
                raise ShapeError(f"tensor {t['name']}: {data.size} values for shape {t['shape']}")
            weights[t["name"]] = data.reshape(t["shape"])
        return cls(obj["arch"], weights)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.001
    epochs: int = 10
    batch_size: int = 50
    alpha: float = 0.75
    seed: int = 0
    arch: str = "mlp1"
    hidden: int = 32

    def __post_init__(self):
        if self.optimizer != "adam":
            raise ArgumentError(f"only the adam optimizer is supported, got {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ArgumentError("learning_rate must be positive")
        if self.epochs < 1:
            raise ArgumentError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ArgumentError("batch_size must be at least 1")
        if not self.alpha >= 0:
            raise ArgumentError("alpha must be non-negative")
        if self.arch not in ARCHS:
            raise ArgumentError(f"unknown architecture {self.arch!r}")
        if self.hidden < 1:
            raise ArgumentError("hidden width must be positive")


@dataclass(frozen=True)
class ForwardOutput:
    logits: np.ndarray
    probs: np.ndarray
    penult: np.ndarray


def init_params(arch: str, d: int, C: int, hidden: int = 32, seed=None) -> ModelParams:
    """Xavier-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)

    def xavier(fan_out, fan_in):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    if arch == "linear":
        return ModelParams(arch, {"W": xavier(C, d), "b": np.zeros(C)})
    if arch == "mlp1":
        W1 = xavier(hidden, d)
        W2 = xavier(C, hidden)
        return ModelParams(arch, {"W1": W1, "b1": np.zeros(hidden), "W2": W2, "b2": np.zeros(C)})
    raise ArgumentError(f"unknown architecture {arch!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(params: ModelParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(logits, probs, penult)`` for a 2-D batch ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {params.input_dim}), got {X.shape}")
    w = params.weights
    if params.arch == "linear":
        penult = X
        logits = X @ w["W"].T + w["b"]
    else:
        penult = np.tanh(X @ w["W1"].T + w["b1"])
        logits = penult @ w["W2"].T + w["b2"]
    return logits, softmax(logits), penult


def forward(params: ModelParams, x) -> ForwardOutput:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a feature vector, got shape {x.shape}")
    logits, probs, penult = forward_batch(params, x[None, :])
    return ForwardOutput(logits[0], probs[0], penult[0])


def predict_proba(params: ModelParams, X) -> np.ndarray:
    return forward_batch(params, X)[1]


def predict(params: ModelParams, X) -> np.ndarray:
    """Argmax labels; ties go to the lowest class index."""
    return np.argmax(forward_batch(params, X)[1], axis=1)


def accuracy(params: ModelParams, X, y) -> float:
    return float(np.mean(predict(params, X) == np.asarray(y)))


def loss_ce(probs, label: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < len(probs):
        raise ArgumentError(f"label {label} outside [0, {len(probs)})")
    p = probs[label]
    if p < PROB_FLOOR:
        warnings.warn(f"probability {p} floored to {PROB_FLOOR}", NumericalFloorWarning, stacklevel=2)
        p = PROB_FLOOR
    return float(-math.log(p))


def loss_kl(teacher, student) -> float:
    """``KL(teacher || student)`` in nats, with both sides floored at 1e-12.

    Terms where the teacher puts zero mass contribute nothing.
    """
    q = np.asarray(teacher, dtype=np.float64)
    p = np.asarray(student, dtype=np.float64)
    if q.shape != p.shape:
        raise ShapeError(f"teacher shape {q.shape} != student shape {p.shape}")
    mask = q > 0
    qm = np.maximum(q[mask], PROB_FLOOR)
    pm = np.maximum(p[mask], PROB_FLOOR)
    return max(0.0, float(np.sum(qm * (np.log(qm) - np.log(pm)))))


def _check_batch(params, X, y, teacher_probs, teacher_mask):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ShapeError(f"expected inputs of shape (n, {params.input_dim}), got {X.shape}")
    if y.shape != (X.shape[0],):
        raise ShapeError("labels and inputs disagree on batch size")
    C = params.num_classes
    if np.any(y < 0) or np.any(y >= C):
        raise ArgumentError("label outside the class range")
    if teacher_probs is not None:
        teacher_probs = np.asarray(teacher_probs, dtype=np.float64)
        if teacher_probs.shape != (X.shape[0], C):
            raise ShapeError(f"teacher probs must have shape {(X.shape[0], C)}, got {teacher_probs.shape}")
        if teacher_mask is not None:
            teacher_mask = np.asarray(teacher_mask, dtype=np.float64)
            if teacher_mask.shape != (X.shape[0],):
                raise ShapeError("teacher mask must have one entry per sample")
    elif teacher_mask is not None:
        raise ShapeError("teacher mask given without teacher probs")
    return X, y, teacher_probs, teacher_mask


def objective(params: ModelParams, X, y, teacher_probs=None, alpha: float = 0.0, teacher_mask=None) -> float:
    """Batch mean of ``CE + alpha * KL``, evaluated sample by sample."""
    X, y, teacher_probs, teacher_mask = _check_batch(params, X, y, teacher_probs, teacher_mask)
    _, probs, _ = forward_batch(params, X)
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NumericalFloorWarning)
        for n in range(len(y)):
            total += loss_ce(probs[n], int(y[n]))
            if teacher_probs is not None and alpha != 0:
                m = 1.0 if teacher_mask is None else float(teacher_mask[n])
                if m:
                    total += alpha * m * loss_kl(teacher_probs[n], probs[n])
    return total / len(y)


def grad_batch(params: ModelParams, X, y, teacher_probs=None, alpha: float = 0.0,
               teacher_mask=None) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`objective` with respect to every weight.

    Teacher probabilities are given for the whole batch or not at all;
    ``teacher_mask`` (0/1 per sample) switches the KL term off for rows
    that should be trained on the oracle label only.
    """
    if alpha < 0:
        raise ArgumentError("alpha must be non-negative")
    X, y, teacher_probs, teacher_mask = _check_batch(params, X, y, teacher_probs, teacher_mask)
    B = X.shape[0]
    _, probs, penult = forward_batch(params, X)
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    # d KL(q||p) / d logits = p - q; skipped outright at alpha == 0 so the
    # result is bit-identical to teacher-free training
    if teacher_probs is not None and alpha != 0:
        dkl = probs - teacher_probs
        if teacher_mask is not None:
            dkl *= teacher_mask[:, None]
        dlogits += alpha * dkl
    dlogits /= B

    w = params.weights
    if params.arch == "linear":
        return {"W": dlogits.T @ X, "b": dlogits.sum(axis=0)}
    dh = dlogits @ w["W2"]
    dz = dh * (1.0 - penult ** 2)
    return {
        "W1": dz.T @ X,
        "b1": dz.sum(axis=0),
        "W2": dlogits.T @ penult,
        "b2": dlogits.sum(axis=0),
    }


class Adam:
    def __init__(self, params: ModelParams, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.weights.items()}

    def step(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update ``weights`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            weights[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    params: ModelParams
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def __iter__(self):
        # allows ``best, curve = train(...)``
        return iter((self.params, self.val_accuracy))


def train(params_init: ModelParams, X, y, config: TrainConfig, dev_eval: Callable[[ModelParams], float],
          teacher_probs=None, teacher_mask=None, rng=None) -> TrainResult:
    """Mini-batch Adam on the distillation objective with best-epoch selection.

    Each epoch shuffles the labeled rows with ``rng`` (defaults to a stream
    seeded by ``config.seed``), then ``dev_eval`` scores the weights. The
    snapshot with the highest dev accuracy wins; ties keep the earliest.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise TrainingError("cannot train on an empty labeled pool")
    X, y, teacher_probs, teacher_mask = _check_batch(params_init, X, y, teacher_probs, teacher_mask)
    rng = np.random.default_rng(config.seed) if rng is None else rng

    weights = {k: v.copy() for k, v in params_init.weights.items()}
    opt = Adam(params_init, lr=config.learning_rate)
    n = X.shape[0]
    bs = config.batch_size
    result = TrainResult(params=params_init)
    best = -1.0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            current = ModelParams(params_init.arch, weights)
            tp = None if teacher_probs is None else teacher_probs[idx]
            tm = None if teacher_mask is None else teacher_mask[idx]
            grads = grad_batch(current, X[idx], y[idx], tp, config.alpha, tm)
            opt.step(weights, grads)
        snapshot = ModelParams(params_init.arch, {k: v.copy() for k, v in weights.items()})
        acc = float(dev_eval(snapshot))
        result.val_accuracy.append(acc)
        if acc > best:
            best = acc
            result.params = snapshot
            result.best_epoch = epoch
    return result
