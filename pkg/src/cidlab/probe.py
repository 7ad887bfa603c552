"""Linear probe: multinomial logistic regression on frozen representations.

The probe never touches encoder parameters; it consumes raw base-network
outputs. Training is plain SGD on softmax cross-entropy (full batch by
default), weights start at zero, and top-k scoring breaks ties toward the
lower class index so every number here is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateLabelsError, ShapeMismatchError


@dataclass
class ProbeModel:
    """Fitted weights plus the label order its score columns follow."""

    weights: np.ndarray
    bias: np.ndarray
    class_labels: np.ndarray
    loss_curve: list = field(default_factory=list)

    def scores(self, representations) -> np.ndarray:
        x = np.asarray(representations, dtype=np.float64)
        if x.shape[1] != self.weights.shape[0]:
            raise ShapeMismatchError(
                f"representations have {x.shape[1]} dims, probe expects {self.weights.shape[0]}")
        return x @ self.weights + self.bias

    def predict(self, representations) -> np.ndarray:
        scores = self.scores(representations)
        return self.class_labels[np.argmax(scores, axis=1)]


@dataclass
class ProbeResult:
    top1: float
    top5: float
    per_class_accuracy: dict
    train_loss_curve: list


def _softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _mean_cross_entropy(logits, class_idx):
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    true = shifted[np.arange(len(class_idx)), class_idx]
    return float(np.mean(lse - true))


def fit_linear_probe(representations, labels, epochs: int = 100, lr: float = 0.1,
                     rng=None, batch_size: int = None) -> ProbeModel:
    """Fit the probe by SGD on softmax cross-entropy.

    Full-batch gradient descent when ``batch_size`` is None (no randomness
    at all); otherwise seeded mini-batch SGD reshuffled per epoch via
    ``rng``. Weights start at zero, so zero epochs yields the zero-weight
    classifier. Raises DegenerateLabelsError with fewer than two classes.
    """
    x = np.asarray(representations, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.shape[0] != labels.shape[0]:
        raise ShapeMismatchError("representations and labels differ in length")
    classes = np.unique(labels)
    if classes.size < 2:
        raise DegenerateLabelsError(f"need at least 2 classes, got {classes.size}")
    class_idx = np.searchsorted(classes, labels)
    n, d = x.shape
    c = classes.size
    w = np.zeros((d, c))
    b = np.zeros(c)
    loss_curve = []
    if batch_size is not None and rng is None:
        raise ValueError("mini-batch fitting needs an rng for the shuffle")
    for _ in range(int(epochs)):
        if batch_size is None:
            logits = x @ w + b
            loss_curve.append(_mean_cross_entropy(logits, class_idx))
            p = _softmax_rows(logits)
            p[np.arange(n), class_idx] -= 1.0
            w -= lr * (x.T @ p) / n
            b -= lr * p.sum(axis=0) / n
        else:
            order = rng.permutation(n)
            epoch_loss = 0.0
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                logits = x[idx] @ w + b
                epoch_loss += _mean_cross_entropy(logits, class_idx[idx]) * len(idx)
                p = _softmax_rows(logits)
                p[np.arange(len(idx)), class_idx[idx]] -= 1.0
                w -= lr * (x[idx].T @ p) / len(idx)
                b -= lr * p.sum(axis=0) / len(idx)
            loss_curve.append(epoch_loss / n)
    return ProbeModel(weights=w, bias=b, class_labels=classes, loss_curve=loss_curve)


def top_k_accuracy(scores, labels, k: int, class_labels=None) -> float:
    """Fraction of rows whose true label sits among the k highest scores.

    Ties are broken toward the lower class index (stable sort), so equal
    scores admit the earliest columns. ``class_labels`` maps score columns
    to labels; defaults to 0..C-1.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise ShapeMismatchError("scores must be (n, n_classes) matching labels")
    n, c = scores.shape
    if not 1 <= k <= c:
        raise ValueError(f"k must lie in [1, {c}], got {k}")
    if class_labels is None:
        class_labels = np.arange(c)
    class_labels = np.asarray(class_labels)
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    hits = (class_labels[top] == labels[:, None]).any(axis=1)
    return float(np.mean(hits))


def evaluate_probe(model: ProbeModel, representations, labels) -> ProbeResult:
    """Top-1 / top-5 accuracy and per-class top-1 on a labeled set.

    Top-5 uses k = min(5, n_classes), so it is always defined and never
    below top-1.
    """
    labels = np.asarray(labels, dtype=np.int64)
    scores = model.scores(representations)
    top1 = top_k_accuracy(scores, labels, 1, model.class_labels)
    top5 = top_k_accuracy(scores, labels, min(5, model.class_labels.size),
                          model.class_labels)
    predicted = model.predict(representations)
    per_class = {}
    for label in np.unique(labels):
        mask = labels == label
        per_class[int(label)] = float(np.mean(predicted[mask] == label))
    return ProbeResult(top1=top1, top5=top5, per_class_accuracy=per_class,
                       train_loss_curve=list(model.loss_curve))
