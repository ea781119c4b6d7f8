"""Linear one-vs-rest SVM over part features, plus fusion of the two
attention streams and the evaluation metrics.

The SVM is trained by deterministic full-batch subgradient descent on the
L2-regularized hinge loss with the classic 1/(C t) step schedule. Single
subgradient steps are not descent moves, so each class keeps its best
iterate seen so far; the reported per-epoch objective is that of the best
iterate and is therefore non-increasing, and the returned model is the best
iterate itself. Training is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import softmax, softmax_rows

__all__ = [
    "SvmConfig",
    "LinearSvmModel",
    "FusionConfig",
    "svm_train",
    "svm_objective",
    "svm_predict",
    "svm_predict_batch",
    "fuse",
    "top1_error",
    "tune_alpha",
    "save_svm",
    "load_svm",
]

SVM_MAGIC = b"TLSV1"


@dataclass(frozen=True)
class SvmConfig:
    C: float = 1.0
    epochs: int = 200
    seed: int = 0


@dataclass
class LinearSvmModel:
    weights: np.ndarray  # (classes, dim)
    bias: np.ndarray  # (classes,)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @property
    def classes(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.5  # weight of the object-level stream

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0,1]")


def _objective_terms(x, targets, w, b, c):
    # per-class J = (C/2)|w|^2 + mean hinge
    margins = x @ w.T + b
    hinge = np.maximum(0.0, 1.0 - targets * margins)
    return 0.5 * c * (w * w).sum(axis=1) + hinge.mean(axis=0), hinge


def svm_objective(model: LinearSvmModel, features, labels, c: float = 1.0) -> float:
    x = np.asarray(features, dtype=np.float64)
    targets = _ovr_targets(np.asarray(labels, dtype=np.int64), model.classes)
    per_class, _ = _objective_terms(x, targets, model.weights, model.bias, c)
    return float(per_class.mean())


def _ovr_targets(labels: np.ndarray, classes: int) -> np.ndarray:
    t = -np.ones((labels.shape[0], classes))
    t[np.arange(labels.shape[0]), labels] = 1.0
    return t


def svm_train(features, labels, config: SvmConfig = SvmConfig()):
    """One-vs-rest hinge-loss training; returns (model, per-epoch objectives).

    The epoch objective is the mean over classes of the best regularized
    hinge objective reached so far on each binary problem; the returned
    model is assembled from those per-class best iterates.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("features and labels misaligned")
    if np.unique(y).size < 2:
        raise ValueError("need at least 2 classes")
    n, dim = x.shape
    classes = int(y.max()) + 1
    targets = _ovr_targets(y, classes)
    c = float(config.C)
    if c <= 0:
        raise ValueError("C must be positive")

    w = np.zeros((classes, dim))
    b = np.zeros(classes)
    best_obj, hinge = _objective_terms(x, targets, w, b, c)
    best_w = w.copy()
    best_b = b.copy()
    history = []
    for t in range(1, config.epochs + 1):
        viol = (hinge > 0) * (-targets)  # d hinge / d margin
        gw = c * w + (viol.T @ x) / n
        gb = viol.mean(axis=0)
        eta = 1.0 / (c * t)
        w = w - eta * gw
        b = b - eta * gb
        obj, hinge = _objective_terms(x, targets, w, b, c)
        better = obj < best_obj
        best_w[better] = w[better]
        best_b[better] = b[better]
        best_obj = np.where(better, obj, best_obj)
        history.append(float(best_obj.mean()))
    return LinearSvmModel(best_w, best_b), history


def svm_predict(model: LinearSvmModel, feature) -> np.ndarray:
    """Class distribution via softmax over margins; argmax equals the raw
    margin argmax."""
    x = np.asarray(feature, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValueError(f"feature dim {x.shape} does not match model dim {model.dim}")
    return softmax(model.weights @ x + model.bias)


def svm_predict_batch(model: LinearSvmModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ValueError(f"feature dim {x.shape} does not match model dim {model.dim}")
    return softmax_rows(x @ model.weights.T + model.bias)


def fuse(p_obj, p_part, cfg: FusionConfig) -> np.ndarray:
    p_obj = np.asarray(p_obj, dtype=np.float64)
    p_part = np.asarray(p_part, dtype=np.float64)
    if p_obj.shape != p_part.shape:
        raise ValueError("distribution length mismatch")
    return cfg.alpha * p_obj + (1.0 - cfg.alpha) * p_part


def top1_error(predictions, labels) -> float:
    """Fraction misclassified; argmax ties resolve to the lowest class."""
    preds = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if preds.ndim != 2 or preds.shape[0] != y.shape[0]:
        raise ValueError("predictions and labels misaligned")
    if preds.shape[0] == 0:
        raise ValueError("empty input")
    return float((preds.argmax(axis=1) != y).mean())


ALPHA_GRID = tuple(round(0.05 * i, 2) for i in range(21))


def tune_alpha(val_obj, val_part, labels) -> FusionConfig:
    """Grid-search the fusion weight on validation error.

    Ties prefer the alpha closest to 0.5 (an even blend), then the smaller
    alpha.
    """
    p_obj = np.asarray(val_obj, dtype=np.float64)
    p_part = np.asarray(val_part, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p_obj.shape != p_part.shape or p_obj.shape[0] != y.shape[0] or p_obj.shape[0] == 0:
        raise ValueError("misaligned validation inputs")
    best = None
    for alpha in ALPHA_GRID:
        err = top1_error(alpha * p_obj + (1.0 - alpha) * p_part, y)
        key = (err, abs(alpha - 0.5), alpha)
        if best is None or key < best[0]:
            best = (key, alpha)
    return FusionConfig(best[1])


def save_svm(model: LinearSvmModel) -> bytes:
    parts = [
        SVM_MAGIC,
        int(model.classes).to_bytes(4, "little"),
        int(model.dim).to_bytes(4, "little"),
        np.ascontiguousarray(model.weights, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.bias, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def load_svm(data: bytes) -> LinearSvmModel:
    if data[: len(SVM_MAGIC)] != SVM_MAGIC:
        raise ValueError(f"bad magic {data[:5]!r}")
    pos = len(SVM_MAGIC)
    if len(data) < pos + 8:
        raise ValueError("truncated header")
    classes = int.from_bytes(data[pos : pos + 4], "little")
    dim = int.from_bytes(data[pos + 4 : pos + 8], "little")
    pos += 8
    need = classes * dim * 8 + classes * 8
    if len(data) != pos + need:
        raise ValueError(f"expected {need} weight bytes, found {len(data) - pos}")
    w = np.frombuffer(data[pos : pos + classes * dim * 8], dtype="<f8").reshape(classes, dim)
    b = np.frombuffer(data[pos + classes * dim * 8 :], dtype="<f8")
    return LinearSvmModel(w.copy(), b.copy())
