"""Stacked Elman recurrent classifier trained with backpropagation through time.

Each layer computes h[t] = act(W_in x[t] + W_rec h[t-1] + b) with h[0] = 0; the last
layer's final hidden state is projected to two class scores and softmaxed.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..evaluation import kfold, score_predictions, train_test_split
from .training import History, TrainConfig, TrainingError, sgd_epochs

ACTIVATIONS = ("relu", "tanh")


@dataclass
class RecurrentModel:
    input_dim: int
    hidden_dim: int
    layers: int
    activation: str = "relu"
    W_in: list = field(default_factory=list)
    W_rec: list = field(default_factory=list)
    b: list = field(default_factory=list)
    W_out: np.ndarray | None = None
    b_out: np.ndarray | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.input_dim < 1 or self.hidden_dim < 1 or self.layers < 1:
            raise ValueError("dimensions and layer count must be positive")
        if not self.W_in:
            self.W_in = [np.zeros((self.hidden_dim, self.input_dim if l == 0 else self.hidden_dim)) for l in range(self.layers)]
            self.W_rec = [np.zeros((self.hidden_dim, self.hidden_dim)) for _ in range(self.layers)]
            self.b = [np.zeros(self.hidden_dim) for _ in range(self.layers)]
        if self.W_out is None:
            self.W_out = np.zeros((2, self.hidden_dim))
            self.b_out = np.zeros(2)
        self._check_dims()

    def _check_dims(self):
        H = self.hidden_dim
        if len(self.W_in) != self.layers or len(self.W_rec) != self.layers or len(self.b) != self.layers:
            raise ValueError("per-layer parameter lists must have one entry per layer")
        for l in range(self.layers):
            want = (H, self.input_dim if l == 0 else H)
            if self.W_in[l].shape != want or self.W_rec[l].shape != (H, H) or self.b[l].shape != (H,):
                raise ValueError(f"layer {l}: parameter shapes inconsistent with hidden dim {H}")
        if self.W_out.shape != (2, H) or self.b_out.shape != (2,):
            raise ValueError("output projection must map hidden -> 2 classes")

    @classmethod
    def initialized(cls, input_dim=1, hidden_dim=2, layers=1, activation="relu", seed=0) -> RecurrentModel:
        """Uniform(-1/sqrt(H), 1/sqrt(H)) initialization from a seeded generator."""
        rng = np.random.default_rng(seed)
        k = 1.0 / np.sqrt(hidden_dim)
        m = cls(input_dim, hidden_dim, layers, activation)
        for l in range(layers):
            m.W_in[l] = rng.uniform(-k, k, m.W_in[l].shape)
            m.W_rec[l] = rng.uniform(-k, k, m.W_rec[l].shape)
            m.b[l] = rng.uniform(-k, k, hidden_dim)
        m.W_out = rng.uniform(-k, k, (2, hidden_dim))
        m.b_out = rng.uniform(-k, k, 2)
        return m

    def parameters(self) -> list[np.ndarray]:
        return [*self.W_in, *self.W_rec, *self.b, self.W_out, self.b_out]

    def set_parameters(self, params) -> None:
        L = self.layers
        params = [np.array(p, dtype=float) for p in params]
        self.W_in, self.W_rec, self.b = params[:L], params[L : 2 * L], params[2 * L : 3 * L]
        self.W_out, self.b_out = params[3 * L], params[3 * L + 1]
        self._check_dims()

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def copy(self) -> RecurrentModel:
        return copy.deepcopy(self)

    def predict_proba(self, X) -> np.ndarray:
        return _forward(self, _as_batch(X, self.input_dim))[0]

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)


def _as_batch(X, input_dim):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim == 2:
        if input_dim != 1:
            raise ValueError(f"model expects {input_dim} input channels, got scalar sequences")
        X = X[:, :, None]
    if X.shape[2] != input_dim:
        raise ValueError(f"model expects {input_dim} input channels, got {X.shape[2]}")
    if X.shape[1] < 1:
        raise ValueError("sequences must have length >= 1")
    return X


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, h, kind):
    return (z > 0).astype(float) if kind == "relu" else 1.0 - h * h


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(model: RecurrentModel, X: np.ndarray):
    """X: (B, T, input_dim). Returns probabilities and the per-layer caches."""
    B, T, _ = X.shape
    H = model.hidden_dim
    inputs = X
    caches = []
    for l in range(model.layers):
        Z = np.empty((B, T, H))
        Hs = np.empty((B, T, H))
        h = np.zeros((B, H))
        Win, Wrec, b = model.W_in[l], model.W_rec[l], model.b[l]
        for t in range(T):
            z = inputs[:, t] @ Win.T + h @ Wrec.T + b
            h = _act(z, model.activation)
            Z[:, t] = z
            Hs[:, t] = h
        caches.append((inputs, Z, Hs))
        inputs = Hs
    logits = inputs[:, -1] @ model.W_out.T + model.b_out
    return softmax(logits), caches


def rnn_forward(model: RecurrentModel, sequence) -> np.ndarray:
    """Class probabilities (2 values) for a single sequence."""
    seq = np.asarray(sequence, dtype=float)
    return model.predict_proba(seq[None, ...])[0]


def loss_and_gradients(model: RecurrentModel, X, y):
    """Mean cross-entropy over the batch and its gradient for every parameter (BPTT)."""
    X = _as_batch(X, model.input_dim)
    y = np.asarray(y, dtype=int)
    B, T, _ = X.shape
    probs, caches = _forward(model, X)
    loss = -np.mean(np.log(np.clip(probs[np.arange(B), y], 1e-300, None)))
    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    h_last = caches[-1][2][:, -1]
    gW_out = dlogits.T @ h_last
    gb_out = dlogits.sum(axis=0)

    L = model.layers
    gW_in, gW_rec, gb = [None] * L, [None] * L, [None] * L
    dH_above = np.zeros((B, T, model.hidden_dim))
    dH_above[:, -1] = dlogits @ model.W_out
    for l in reversed(range(L)):
        inputs, Z, Hs = caches[l]
        Win, Wrec = model.W_in[l], model.W_rec[l]
        g_in = np.zeros_like(Win)
        g_rec = np.zeros_like(Wrec)
        g_b = np.zeros_like(model.b[l])
        d_inputs = np.zeros_like(inputs) if l > 0 else None
        dh_next = np.zeros((B, model.hidden_dim))
        for t in reversed(range(T)):
            dz = (dH_above[:, t] + dh_next) * _act_grad(Z[:, t], Hs[:, t], model.activation)
            g_in += dz.T @ inputs[:, t]
            if t > 0:
                g_rec += dz.T @ Hs[:, t - 1]
            g_b += dz.sum(axis=0)
            if d_inputs is not None:
                d_inputs[:, t] = dz @ Win
            dh_next = dz @ Wrec
        gW_in[l], gW_rec[l], gb[l] = g_in, g_rec, g_b
        dH_above = d_inputs
    return float(loss), [*gW_in, *gW_rec, *gb, gW_out, gb_out]


def _loss(model, X, y):
    probs, _ = _forward(model, _as_batch(X, model.input_dim))
    y = np.asarray(y, dtype=int)
    return float(-np.mean(np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))))


def min_abs_preactivation(model: RecurrentModel, X) -> float:
    _, caches = _forward(model, _as_batch(X, model.input_dim))
    return float(min(np.abs(Z).min() for _, Z, _ in caches))


def gradient_check(model: RecurrentModel, sample, label: int = 1, epsilon: float = 1e-5, seed: int = 0) -> float:
    """Max relative error |analytic - numeric| / max(|analytic| + |numeric|, 1e-6) over all parameters.

    For relu models the sample is jittered until every pre-activation sits at least
    1e-3 away from the kink, where the central difference is not meaningful.
    """
    X = _as_batch(sample, model.input_dim)
    y = np.array([label] * X.shape[0])
    if model.activation == "relu":
        rng = np.random.default_rng(seed)
        tries = 0
        while min_abs_preactivation(model, X) < 1e-3:
            tries += 1
            if tries > 100:
                raise RuntimeError("could not move pre-activations away from the relu kink")
            X = X + rng.normal(scale=0.05, size=X.shape)
    _, grads = loss_and_gradients(model, X, y)
    worst = 0.0
    params = model.parameters()
    for p, g in zip(params, grads):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + epsilon
            lp = _loss(model, X, y)
            p[i] = old - epsilon
            lm = _loss(model, X, y)
            p[i] = old
            num = (lp - lm) / (2 * epsilon)
            rel = abs(g[i] - num) / max(abs(g[i]) + abs(num), 1e-6)
            worst = max(worst, rel)
    return worst


def _fit(model: RecurrentModel, X, y, cfg: TrainConfig) -> History:
    if cfg.early_stopping and len(np.unique(y)) == 2 and min(np.bincount(y)) >= 2:
        tr, va = train_test_split(y, cfg.validation_fraction, cfg.seed)
    else:
        tr, va = np.arange(y.size), None
    Xtr, ytr = X[tr], y[tr]
    params = model.parameters()

    def grad_fn(rows):
        return loss_and_gradients(model, Xtr[rows], ytr[rows])

    val_fn = (lambda: _loss(model, X[va], y[va])) if va is not None else None
    return sgd_epochs(params, grad_fn, ytr.size, cfg, val_fn)


def rnn_train(model: RecurrentModel, X, y, cfg: TrainConfig = TrainConfig()):
    """Train a copy of ``model`` with minibatch SGD; returns (trained model, history).

    With ``k_folds > 1`` each fold is trained from the same initial weights and
    scored on its held-out part (``history.fold_scores``) before the returned model
    is trained on all rows.
    """
    X = _as_batch(X, model.input_dim)
    y = np.asarray(y, dtype=int)
    if y.size == 0:
        raise TrainingError("empty training set")
    if set(np.unique(y)) != {0, 1}:
        raise TrainingError(f"training needs both classes, got {sorted(set(y.tolist()))}")
    history = History()
    if cfg.k_folds > 1:
        for f, (tr, te) in enumerate(kfold(y, cfg.k_folds, cfg.seed, cfg.split)):
            m = model.copy()
            _fit(m, X[tr], y[tr], cfg)
            history.fold_scores.append(score_predictions(y[te], m.predict(X[te]), fold=f))
    final = model.copy()
    h = _fit(final, X, y, cfg)
    history.epoch_loss, history.val_loss, history.lr, history.stopped_epoch = (
        h.epoch_loss,
        h.val_loss,
        h.lr,
        h.stopped_epoch,
    )
    return final, history
