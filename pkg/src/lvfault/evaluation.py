"""Binary-classification metrics, stratified splitting, the warm-up LR schedule and
single-parameter grid search."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

SCORE_COLUMNS = ("param", "accuracy", "precision_macro", "recall_macro", "f1_macro")


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: tuple[tuple[int, int], tuple[int, int]]  # [true][predicted]

    @property
    def total(self) -> int:
        return sum(map(sum, self.counts))

    def as_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=int)


@dataclass
class ScoreReport:
    accuracy: float
    precision_macro: float
    recall_macro: float
    f1_macro: float
    confusion: ConfusionMatrix
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = [list(r) for r in self.confusion.counts]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> ScoreReport:
        cm = ConfusionMatrix(tuple(tuple(int(x) for x in row) for row in d["confusion"]))
        return cls(d["accuracy"], d["precision_macro"], d["recall_macro"], d["f1_macro"], cm, d.get("metadata", {}))

    def csv_row(self, param="") -> str:
        return ",".join(
            [str(param)] + [repr(float(getattr(self, k))) for k in SCORE_COLUMNS[1:]]
        )


def confusion(y_true, y_pred) -> ConfusionMatrix:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} true vs {y_pred.size} predicted labels")
    for arr, name in ((y_true, "true"), (y_pred, "predicted")):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} labels must be 0 or 1")
    counts = tuple(tuple(int(np.sum((y_true == t) & (y_pred == p))) for p in (0, 1)) for t in (0, 1))
    return ConfusionMatrix(counts)


def per_class_scores(cm: ConfusionMatrix):
    """Per-class (precision, recall, f1); zero-division yields 0."""
    m = cm.as_array()
    out = []
    for c in (0, 1):
        tp = m[c, c]
        pred = m[:, c].sum()
        true = m[c, :].sum()
        p = tp / pred if pred else 0.0
        r = tp / true if true else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out.append((float(p), float(r), float(f)))
    return out


def scores(cm: ConfusionMatrix, **metadata) -> ScoreReport:
    if cm.total <= 0:
        raise ValueError("cannot score an empty confusion matrix")
    per = per_class_scores(cm)
    m = cm.as_array()
    return ScoreReport(
        accuracy=float(np.trace(m) / m.sum()),
        precision_macro=(per[0][0] + per[1][0]) / 2,
        recall_macro=(per[0][1] + per[1][1]) / 2,
        f1_macro=(per[0][2] + per[1][2]) / 2,
        confusion=cm,
        metadata=metadata,
    )


def score_predictions(y_true, y_pred, **metadata) -> ScoreReport:
    return scores(confusion(y_true, y_pred), **metadata)


def _labels(data) -> np.ndarray:
    return np.asarray(getattr(data, "labels", data), dtype=int)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_test_split(data, ratio: float, seed: int):
    """Stratified seeded split; returns (train_indices, test_indices), both sorted."""
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    labels = _labels(data)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            raise ValueError(f"class {c} has {idx.size} sample(s); a stratified split needs at least 2")
        idx = idx[rng.permutation(idx.size)]
        n_test = min(max(_round_half_up(ratio * idx.size), 1), idx.size - 1)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def kfold(data, k: int, seed: int, ratio: float = 0.3):
    """Stratified folds as a list of (train_indices, test_indices).

    ``k == 1`` means no cross-validation: a single split at ``ratio``.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k == 1:
        return [train_test_split(data, ratio, seed)]
    labels = _labels(data)
    classes, counts = np.unique(labels, return_counts=True)
    if k > counts.min():
        raise ValueError(f"k={k} exceeds the smallest class count {counts.min()}")
    rng = np.random.default_rng(seed)
    ordered = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in classes])
    fold_of = np.empty(labels.size, dtype=int)
    fold_of[ordered] = np.arange(ordered.size) % k
    all_idx = np.arange(labels.size)
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(k)]


def warmup_epochs(total_epochs: int, warmup_fraction: float) -> int:
    # round() guards against 0.3 * 10 = 3.0000000000000004
    return math.ceil(round(warmup_fraction * total_epochs, 9))


def lr_schedule(epoch: int, total_epochs: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear warm-up from base/w at epoch 1 to base at epoch w, then constant (epochs count from 1)."""
    if not 1 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside 1..{total_epochs}")
    w = warmup_epochs(total_epochs, warmup_fraction)
    if w > 0 and epoch <= w:
        return base_lr * epoch / w
    return base_lr


@dataclass(frozen=True)
class GridSearchSpec:
    parameter: str
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise ValueError("grid search needs at least one value")
        object.__setattr__(self, "values", tuple(self.values))


@dataclass
class GridSearchResult:
    spec: GridSearchSpec
    rows: list  # (value, ScoreReport | None, error message)
    best_value: object
    best_report: ScoreReport | None

    def csv_rows(self) -> list[str]:
        return [r.csv_row(v) for v, r, _ in self.rows if r is not None]


def grid_search(
    spec: GridSearchSpec,
    evaluator: Callable[[object], ScoreReport],
    on_best: Callable[[object, ScoreReport], None] | None = None,
) -> GridSearchResult:
    """Evaluate every value in order; the best macro F1 wins, ties go to the earlier value.

    A failing evaluation is recorded with its error and the search moves on.
    ``on_best`` is called whenever a new best is found (e.g. to persist the model).
    """
    rows = []
    best_value, best = None, None
    for value in spec.values:
        try:
            report = evaluator(value)
        except Exception as exc:
            log.warning("grid search: %s=%r failed: %s", spec.parameter, value, exc)
            rows.append((value, None, f"{type(exc).__name__}: {exc}"))
            continue
        report.metadata.setdefault(spec.parameter, value)
        rows.append((value, report, ""))
        if best is None or report.f1_macro > best.f1_macro:
            best_value, best = value, report
            if on_best is not None:
                on_best(value, report)
    return GridSearchResult(spec, rows, best_value, best)
