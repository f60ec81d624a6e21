"""Task learners: linear softmax classifier and linear regressor trained by SGD.

Both expose the same small contract used by the stream policies::

    train_step(X, y)        one gradient step on the mean loss
    predict(X)              class probabilities / real predictions (pure)
    metric(pred, y)         per-sample task metric
    uncertainty(X, rng)     dropout-style stochastic disagreement
    snapshot() / restore()  parameter checkpoints
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

TaskKind = Literal["classification", "regression"]


class LearnerError(ValueError):
    pass


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def entropy(p: np.ndarray) -> np.ndarray:
    return -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=-1)


def _as_2d(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[None] if X.ndim == 1 else X


@dataclass
class _LinearBase:
    n_features: int
    lr: float = 0.1
    seed: int = 0
    init_scale: float = 0.01
    input_shift: float = 0.5
    rng: np.random.Generator = field(init=False, repr=False)

    kind: TaskKind = field(init=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self._init_params()

    def _init_params(self):
        raise NotImplementedError

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = _as_2d(X)
        if X.shape[1] != self.n_features:
            raise LearnerError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def _inputs(self, X: np.ndarray) -> np.ndarray:
        # fixed centering: raw features live in [0, 1]
        return self._check(X) - self.input_shift

    # parameter plumbing shared by both models
    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        self.W = np.array(params["W"], dtype=np.float64)
        self.b = np.array(params["b"], dtype=np.float64)

    def snapshot(self) -> "_LinearBase":
        snap = copy.deepcopy(self)
        snap.W.setflags(write=False)
        snap.b.setflags(write=False)
        return snap

    def restore(self, snap: "_LinearBase") -> None:
        self.set_params(snap.params())

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), np.ravel(self.b)])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "W": self.W.tolist(), "b": np.ravel(self.b).tolist()}

    def train_step(self, X: np.ndarray, y: np.ndarray) -> float:
        X = self._inputs(X)
        y = np.asarray(y)
        if len(X) == 0:
            raise LearnerError("empty training batch")
        loss, dW, db = self.loss_and_grad(X, y)
        self.W = self.W - self.lr * dW
        self.b = self.b - self.lr * db
        return loss

    def fit_epochs(self, X: np.ndarray, y: np.ndarray, epochs: int, batch_size: int = 16) -> None:
        """Conventional epoch training: shuffled mini-batch passes over a labelled set."""
        X = self._check(X)
        y = np.asarray(y)
        if len(X) == 0:
            raise LearnerError("empty training set")
        for _ in range(epochs):
            order = self.rng.permutation(len(X))
            for start in range(0, len(X), batch_size):
                idx = order[start:start + batch_size]
                self.train_step(X[idx], y[idx])

    def mean_metric(self, X: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.metric(self.predict(X), y)))


@dataclass
class SgdClassifier(_LinearBase):
    n_classes: int = 3
    kind: TaskKind = field(init=False, default="classification")

    def _init_params(self):
        self.W = self.rng.normal(0.0, self.init_scale, size=(self.n_classes, self.n_features))
        self.b = np.zeros(self.n_classes)

    def logits(self, X: np.ndarray, W: np.ndarray | None = None, b: np.ndarray | None = None) -> np.ndarray:
        W = self.W if W is None else W
        b = self.b if b is None else b
        return X @ W.T + b

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = self._inputs(X)
        return softmax(self.logits(X))

    def loss_and_grad(self, X: np.ndarray, y: np.ndarray, W=None, b=None):
        y = np.asarray(y, dtype=int)
        p = softmax(self.logits(X, W, b))
        n = len(X)
        loss = -np.mean(np.log(np.clip(p[np.arange(n), y], 1e-300, None)))
        g = p.copy()
        g[np.arange(n), y] -= 1.0
        g /= n
        return float(loss), g.T @ X, g.sum(axis=0)

    @staticmethod
    def metric(pred: np.ndarray, y) -> np.ndarray:
        pred = np.asarray(pred)
        return (np.argmax(pred, axis=-1) == np.asarray(y)).astype(np.float64)

    def uncertainty(self, X: np.ndarray, rng: np.random.Generator, k: int = 10, p_drop: float = 0.25) -> np.ndarray:
        """Predictive entropy of the mean softmax over ``k`` feature-dropout passes."""
        if k < 2:
            raise LearnerError("uncertainty needs at least 2 stochastic passes")
        X = self._inputs(X)
        keep = 1.0 - p_drop
        probs = np.zeros((len(X), self.n_classes))
        for _ in range(k):
            mask = rng.random(X.shape) < keep
            probs += softmax(self.logits(X * mask / keep))
        return entropy(probs / k)


@dataclass
class SgdRegressor(_LinearBase):
    kind: TaskKind = field(init=False, default="regression")

    def _init_params(self):
        self.W = self.rng.normal(0.0, self.init_scale, size=self.n_features)
        self.b = np.zeros(())

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = self._inputs(X)
        return X @ self.W + self.b

    def loss_and_grad(self, X: np.ndarray, y: np.ndarray, W=None, b=None):
        W = self.W if W is None else W
        b = self.b if b is None else b
        r = X @ W + b - np.asarray(y, dtype=np.float64)
        n = len(X)
        # 0.5 * mean squared error
        return float(0.5 * np.mean(r ** 2)), X.T @ r / n, np.asarray(r.sum() / n)

    @staticmethod
    def metric(pred: np.ndarray, y) -> np.ndarray:
        return np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(y, dtype=np.float64))

    def uncertainty(self, X: np.ndarray, rng: np.random.Generator, k: int = 10, p_drop: float = 0.25) -> np.ndarray:
        """Standard deviation of ``k`` feature-dropout predictions."""
        if k < 2:
            raise LearnerError("uncertainty needs at least 2 stochastic passes")
        X = self._inputs(X)
        keep = 1.0 - p_drop
        preds = np.stack([(X * (rng.random(X.shape) < keep) / keep) @ self.W + self.b for _ in range(k)])
        return preds.std(axis=0)


def make_learner(task: TaskKind, n_features: int, lr: float, seed: int, n_classes: int = 3) -> _LinearBase:
    if task == "classification":
        return SgdClassifier(n_features=n_features, lr=lr, seed=seed, n_classes=n_classes)
    if task == "regression":
        return SgdRegressor(n_features=n_features, lr=lr, seed=seed)
    raise LearnerError(f"unknown task kind {task!r}")


def higher_is_better(task: TaskKind) -> bool:
    return task == "classification"
