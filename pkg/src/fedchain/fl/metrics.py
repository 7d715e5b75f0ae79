from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .model import Method, TrainConfig, local_train, predict
from .weights import WeightVector, init_weights


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: tuple
    recall: tuple
    f1: tuple
    support: tuple
    macro_f1: float
    weighted_f1: float

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "precision": list(self.precision),
            "recall": list(self.recall),
            "f1": list(self.f1),
            "support": list(self.support),
        }


def confusion_matrix(y_true, y_pred, n_classes) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros(len(num)), where=den > 0)


def metrics_from_predictions(y_true, y_pred, n_classes) -> MetricsReport:
    """Per-class precision/recall/F1 from a confusion matrix; 0 where undefined."""
    y_true = np.asarray(y_true)
    if y_true.size == 0:
        raise ValueError("cannot score an empty test set")
    cm = confusion_matrix(y_true, np.asarray(y_pred), n_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = _ratio(tp, predicted.astype(np.float64))
    recall = _ratio(tp, support.astype(np.float64))
    f1 = _ratio(2 * precision * recall, precision + recall)
    return MetricsReport(
        accuracy=float(tp.sum() / y_true.size),
        precision=tuple(float(x) for x in precision),
        recall=tuple(float(x) for x in recall),
        f1=tuple(float(x) for x in f1),
        support=tuple(int(x) for x in support),
        macro_f1=float(f1.mean()),
        weighted_f1=float(np.dot(f1, support) / support.sum()),
    )


def evaluate(w: WeightVector, test: Dataset) -> MetricsReport:
    return metrics_from_predictions(test.labels, predict(w, test.features), test.n_classes)


def centralized_baseline(dataset: Dataset, cfg: TrainConfig, shapes, epochs=None,
                         init_seed=None) -> tuple[WeightVector, MetricsReport]:
    """Train the same network on the whole training split and score it.

    ``epochs`` defaults to ``cfg.local_epochs``; the proximal term is never
    applied since there is no global anchor to pull towards.
    """
    w0 = init_weights(shapes, cfg.rng_seed if init_seed is None else init_seed)
    run_cfg = replace(cfg, method=Method.FEDAVG,
                      local_epochs=cfg.local_epochs if epochs is None else epochs)
    w = local_train(w0, dataset.train, run_cfg)
    return w, evaluate(w, dataset.test)
