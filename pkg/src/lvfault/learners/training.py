"""Minibatch SGD loop shared by the recurrent classifier and the MLP regressor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..evaluation import lr_schedule


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-6
    batch_size: int = 60
    optimizer: str = "SGD"
    warmup_fraction: float = 0.10
    early_stopping: bool = True
    patience: int = 3
    validation_fraction: float = 0.1
    k_folds: int = 5
    split: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.split < 1:
            raise ValueError("train/test split must be in (0, 1)")
        if self.k_folds < 1:
            raise ValueError("k folds must be >= 1")
        if self.optimizer != "SGD":
            raise ValueError(f"only plain SGD is implemented, got {self.optimizer!r}")


@dataclass
class History:
    epoch_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stopped_epoch: int | None = None
    fold_scores: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "epoch_loss": self.epoch_loss,
            "val_loss": self.val_loss,
            "lr": self.lr,
            "stopped_epoch": self.stopped_epoch,
            "fold_scores": [r.to_dict() for r in self.fold_scores],
        }


def sgd_epochs(params, grad_fn, n_rows, cfg: TrainConfig, val_fn=None, history=None):
    """Shared minibatch SGD loop with the warm-up schedule and early stopping.

    ``grad_fn(rows)`` returns (loss, grads) for a row-index batch and ``val_fn()`` a
    validation loss. Parameters are updated in place. When early stopping triggers,
    the parameters of the best validation epoch are restored.
    """
    history = history or History()
    best, best_params, stale = np.inf, None, 0
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_schedule(epoch, cfg.epochs, cfg.learning_rate, cfg.warmup_fraction)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n_rows)
        total = 0.0
        for start in range(0, n_rows, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            loss, grads = grad_fn(rows)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            for p, g in zip(params, grads):
                p -= lr * g
            total += loss * rows.size
        history.epoch_loss.append(total / n_rows)
        history.lr.append(lr)
        if val_fn is not None:
            v = val_fn()
            history.val_loss.append(v)
            if v < best - 1e-12:
                best, best_params, stale = v, [p.copy() for p in params], 0
            else:
                stale += 1
                if cfg.early_stopping and stale >= cfg.patience:
                    history.stopped_epoch = epoch
                    break
    if cfg.early_stopping and best_params is not None:
        for p, b in zip(params, best_params):
            p[...] = b
    return history
