"""Regressors for load estimation: ordinary least squares and a one-hidden-layer MLP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import LinearModel
from .training import TrainConfig, TrainingError, sgd_epochs

RIDGE_EPS = 1e-8
COND_LIMIT = 1e12


def ols_fit(X, y) -> LinearModel:
    """Least squares with intercept via the normal equations.

    When the Gram matrix is near-singular (condition number above 1e12) a ridge
    term of 1e-8 is added to its diagonal so a finite solution always exists.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if X.shape[0] < 1:
        raise ValueError("need at least one row")
    D = np.column_stack([X, np.ones(X.shape[0])])
    G = D.T @ D
    rhs = D.T @ y
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        G = G + RIDGE_EPS * np.eye(G.shape[0])
    coef = np.linalg.solve(G, rhs)
    return LinearModel(coef[:-1], coef[-1])


def rmse(y_true, y_pred) -> float:
    d = np.asarray(y_true, dtype=float) - np.asarray(y_pred, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


@dataclass
class MLPConfig(TrainConfig):
    hidden: int = 32
    epochs: int = 500
    learning_rate: float = 0.05
    batch_size: int = 16
    warmup_fraction: float = 0.0
    early_stopping: bool = False
    k_folds: int = 1


@dataclass
class MLPRegressor:
    """tanh hidden layer, linear output."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    single_output: bool = False
    history: dict = field(default_factory=dict, repr=False)

    @classmethod
    def initialized(cls, n_in: int, n_out: int, hidden: int = 32, seed: int = 0) -> MLPRegressor:
        """Hidden layer uniform in ±1/sqrt(n_in), output layer uniform in ±0.1.

        A ±0.1 hidden layer keeps every tanh unit in its linear range, which is a
        saddle for even targets such as y = x²; SGD then needs thousands of epochs
        to find any curvature.
        """
        rng = np.random.default_rng(seed)
        k = 1.0 / np.sqrt(n_in)
        return cls(
            rng.uniform(-k, k, (hidden, n_in)),
            rng.uniform(-k, k, hidden),
            rng.uniform(-0.1, 0.1, (n_out, hidden)),
            rng.uniform(-0.1, 0.1, n_out),
        )

    def parameters(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return np.tanh(X @ self.W1.T + self.b1) @ self.W2.T + self.b2

    def loss_and_gradients(self, X, Y):
        A = np.tanh(X @ self.W1.T + self.b1)
        E = A @ self.W2.T + self.b2 - Y
        n = X.shape[0]
        loss = float(np.mean(np.sum(E * E, axis=1)))
        dE = 2.0 * E / n
        gW2 = dE.T @ A
        gb2 = dE.sum(axis=0)
        dZ = (dE @ self.W2) * (1.0 - A * A)
        return loss, [dZ.T @ X, dZ.sum(axis=0), gW2, gb2]


def mlp_fit(X, y, config: MLPConfig = MLPConfig()) -> MLPRegressor:
    """Minibatch SGD on mean squared error. A 1-D ``y`` gives a single-output model."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    Y = y[:, None] if y.ndim == 1 else y
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows vs {Y.shape[0]} targets")
    model = MLPRegressor.initialized(X.shape[1], Y.shape[1], config.hidden, config.seed)
    hist = sgd_epochs(model.parameters(), lambda rows: model.loss_and_gradients(X[rows], Y[rows]), X.shape[0], config)
    if not np.all(np.isfinite(model.W1)) or not np.all(np.isfinite(model.W2)):
        raise TrainingError("MLP parameters became non-finite")
    model.history = {"epoch_loss": hist.epoch_loss, "lr": hist.lr}
    model.single_output = y.ndim == 1
    return model


def mlp_predict(model: MLPRegressor, X) -> np.ndarray:
    out = model.predict(X)
    return out[:, 0] if model.single_output else out
