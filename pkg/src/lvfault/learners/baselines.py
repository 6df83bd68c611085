"""Classical baselines on per-window summary statistics: logistic regression and k-NN,
plus the majority-vote decision rule used to aggregate per-window predictions."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

FEATURE_NAMES = ("mean", "std", "min", "max", "lag1_autocorr")


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: np.ndarray | float

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.intercept


def feature_summary(sample) -> np.ndarray:
    """[mean, population std, min, max, lag-1 autocorrelation]; a constant series has autocorrelation 0."""
    x = np.asarray(sample, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("feature summary needs a 1-D series of length >= 2")
    return summary_features(x[None, :])[0]


def summary_features(X) -> np.ndarray:
    """Row-wise ``feature_summary`` for a (n, length) array."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("expected (n, length >= 2) windows")
    mean = X.mean(axis=1)
    dev = X - mean[:, None]
    denom = np.sum(dev * dev, axis=1)
    num = np.sum(dev[:, 1:] * dev[:, :-1], axis=1)
    ac = np.divide(num, denom, out=np.zeros_like(num), where=denom > 1e-24)
    return np.column_stack([mean, X.std(axis=1), X.min(axis=1), X.max(axis=1), ac])


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logistic_fit(features, labels, lr: float = 0.1, epochs: int = 1000, l2: float = 1e-4) -> LinearModel:
    """Full-batch gradient descent on mean cross-entropy + (l2/2)·|w|², from zero weights."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels, dtype=float)
    if set(np.unique(y)) != {0.0, 1.0}:
        raise ValueError("logistic regression needs at least one example of each class")
    w = np.zeros(X.shape[1])
    b = 0.0
    n = y.size
    for _ in range(epochs):
        err = _sigmoid(X @ w + b) - y
        w -= lr * (X.T @ err / n + l2 * w)
        b -= lr * err.mean()
    return LinearModel(w, b)


def logistic_proba(model: LinearModel, features) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return _sigmoid(X @ model.weights + model.intercept)


def logistic_predict(model: LinearModel, features) -> np.ndarray:
    return (logistic_proba(model, features) >= 0.5).astype(int)


def knn_predict(train_X, train_y, k: int, x) -> int:
    """Majority label of the k Euclidean-nearest training points; a tied vote goes to label 1."""
    train_X = np.asarray(train_X, dtype=float)
    if train_X.ndim == 1:
        train_X = train_X[:, None]
    train_y = np.asarray(train_y)
    if train_y.size == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= train_y.size:
        raise ValueError(f"k={k} must be in 1..{train_y.size}")
    d = np.linalg.norm(train_X - np.atleast_1d(np.asarray(x, dtype=float)), axis=1)
    nearest = np.argsort(d, kind="stable")[:k]
    votes = Counter(train_y[nearest].tolist())
    top = max(votes.values())
    winners = [lab for lab, c in votes.items() if c == top]
    if len(winners) > 1:
        log.debug("k-NN vote tied between %s; flagging as malfunction", winners)
        return 1 if 1 in winners else max(winners)
    return winners[0]


def knn_predict_many(train_X, train_y, k: int, X) -> np.ndarray:
    return np.array([knn_predict(train_X, train_y, k, x) for x in np.asarray(X, dtype=float)])


def majority_vote(labels) -> int:
    """Most frequent label; an exact tie is resolved to 1 so the device gets inspected."""
    labels = list(labels)
    if not labels:
        raise ValueError("majority vote over no labels")
    ones = sum(1 for v in labels if v == 1)
    return 1 if 2 * ones >= len(labels) else 0
