"""Scikit-learn style estimators wrapping the training loop and the probe.

``ContrastiveEncoder`` is a transformer: ``fit(X, y=None)`` runs momentum
contrastive pre-training on the rows of X (labels are optional and only
consulted by class-relation filter policies and the queue telemetry), and
``transform(X)`` returns the frozen learned representations.
``LinearProbe`` is the matching classifier for those representations. Both
follow the get_params/set_params contract, so they compose with pipelines
and model selection.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .contrastive import (Band, ContrastiveConfig, FilterPolicy, SENTINEL_LABEL)
from .data import AugmentConfig, Dataset
from .encoder import EncoderConfig, embed, forward_base
from .probe import evaluate_probe, fit_linear_probe, top_k_accuracy
from .numerics import rng_from_seed
from .trainer import TrainConfig, train


def _as_float_matrix(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains NaN or Inf")
    return X


class ContrastiveEncoder(BaseEstimator, TransformerMixin):
    """Momentum-contrast representation learner.

    Parameters mirror the training config: encoder widths, the negative
    queue, the InfoNCE temperature, the filter policy (a FilterPolicy or a
    string like "drop:hardest:0.001:same:replace_with_older" built from
    mode:band:class:replacement), and the optimization schedule. ``seed``
    fixes every random choice, so fits replay exactly.
    """

    def __init__(self, base_hidden_dims=(256, 256), repr_dim=128,
                 head_hidden_dim=256, embed_dim=64, momentum=0.999,
                 temperature=0.2, queue_capacity=1024, queue_reserve=64,
                 policy=None, epochs=60, batch_size=64, learning_rate=0.03,
                 sgd_momentum=0.9, weight_decay=1e-4, noise_sigma=0.3,
                 scale_jitter=0.1, dropout_prob=0.1, seed=0):
        self.base_hidden_dims = base_hidden_dims
        self.repr_dim = repr_dim
        self.head_hidden_dim = head_hidden_dim
        self.embed_dim = embed_dim
        self.momentum = momentum
        self.temperature = temperature
        self.queue_capacity = queue_capacity
        self.queue_reserve = queue_reserve
        self.policy = policy
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.sgd_momentum = sgd_momentum
        self.weight_decay = weight_decay
        self.noise_sigma = noise_sigma
        self.scale_jitter = scale_jitter
        self.dropout_prob = dropout_prob
        self.seed = seed

    def _resolved_policy(self):
        if self.policy is None:
            return FilterPolicy()
        if isinstance(self.policy, FilterPolicy):
            return self.policy
        parts = str(self.policy).split(":")
        if len(parts) < 4:
            raise ValueError(
                "policy string must be mode:band...:class:replacement, "
                f"got {self.policy!r}")
        mode, class_relation, replacement = parts[0], parts[-2], parts[-1]
        band = Band.from_string(":".join(parts[1:-2]))
        return FilterPolicy(mode=mode, band=band, class_relation=class_relation,
                            replacement=replacement)

    def fit(self, X, y=None):
        X = _as_float_matrix(X)
        policy = self._resolved_policy()
        if y is None:
            if policy.class_relation != "any":
                raise ValueError(
                    "a class-relation filter policy needs labels; pass y to fit")
            labels = np.full(X.shape[0], SENTINEL_LABEL, dtype=np.int64)
        else:
            labels = np.asarray(y, dtype=np.int64)
            if labels.shape[0] != X.shape[0]:
                raise ValueError("X and y differ in length")
        config = TrainConfig(
            encoder=EncoderConfig(input_dim=X.shape[1],
                                  base_hidden_dims=tuple(self.base_hidden_dims),
                                  repr_dim=self.repr_dim,
                                  head_hidden_dim=self.head_hidden_dim,
                                  embed_dim=self.embed_dim,
                                  momentum_coeff=self.momentum),
            contrastive=ContrastiveConfig(temperature=self.temperature,
                                          queue_capacity=self.queue_capacity,
                                          queue_reserve=self.queue_reserve,
                                          policy=policy),
            augment=AugmentConfig(noise_sigma=self.noise_sigma,
                                  scale_jitter=self.scale_jitter,
                                  coordinate_dropout_prob=self.dropout_prob),
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, sgd_momentum=self.sgd_momentum,
            weight_decay=self.weight_decay, seed=self.seed)
        dataset = Dataset(features=X, labels=labels,
                          instance_ids=np.arange(X.shape[0]))
        self.pair_, self.history_ = train(config, dataset)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        """Frozen learned representations (base-network outputs)."""
        check_is_fitted(self, "pair_")
        return forward_base(self.pair_.query_encoder, _as_float_matrix(X))

    def embed(self, X, use_momentum_encoder=False):
        """Unit-norm contrastive-space embeddings."""
        check_is_fitted(self, "pair_")
        params = (self.pair_.key_encoder if use_momentum_encoder
                  else self.pair_.query_encoder)
        return embed(params, _as_float_matrix(X))

    def loss_curve(self):
        check_is_fitted(self, "pair_")
        return [record.loss for record in self.history_]


class LinearProbe(BaseEstimator, ClassifierMixin):
    """Multinomial logistic regression trained by plain SGD on frozen
    representations; zero-initialized and deterministic under ``seed``."""

    def __init__(self, epochs=100, learning_rate=0.1, batch_size=None, seed=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.seed = seed

    def fit(self, X, y):
        X = _as_float_matrix(X)
        rng = rng_from_seed(self.seed) if self.batch_size is not None else None
        self.model_ = fit_linear_probe(X, np.asarray(y), epochs=self.epochs,
                                       lr=self.learning_rate, rng=rng,
                                       batch_size=self.batch_size)
        self.classes_ = self.model_.class_labels
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.scores(_as_float_matrix(X))

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(_as_float_matrix(X))

    def predict_proba(self, X):
        scores = self.decision_function(X)
        shifted = np.exp(scores - scores.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)

    def top_k_score(self, X, y, k):
        """Top-k accuracy under the lower-class-index tie rule."""
        return top_k_accuracy(self.decision_function(X), np.asarray(y), k,
                              self.model_.class_labels)

    def evaluate(self, X, y):
        """Full ProbeResult (top-1, top-5, per-class accuracy)."""
        check_is_fitted(self, "model_")
        return evaluate_probe(self.model_, _as_float_matrix(X), np.asarray(y))
