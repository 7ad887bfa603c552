"""Contrastive pre-training loop.

Each step, in this exact order: (1) draw two augmented views per instance,
(2) embed view A with the query encoder and view B with the momentum
encoder, (3) per query, rank the active queue, apply the filter policy, and
take the InfoNCE loss and its query gradient, (4) backpropagate the
batch-mean gradient through the query encoder only, (5) SGD step, (6) EMA
update of the key encoder, (7) enqueue the batch's positives. Gradients
never reach the key encoder; the queue is never differentiated through.

All randomness derives from the config seed through tagged substreams:
parameter init, queue fill, the per-epoch shuffle (seed, epoch), and one
augmentation stream per (epoch, instance, view). Identical configs replay
bit-for-bit.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .contrastive import (ContrastiveConfig, NegativeQueue, init_queue,
                          info_nce_from_dots, select_retained,
                          softmax_weights_from_dots)
from .data import AugmentConfig, Dataset, augment
from .encoder import (EncoderConfig, EncoderPair, EncoderParams, backward_batch,
                      ema_update, embed, forward_cached, init_pair)
from .numerics import OptimizerState, rng_from_seed, sgd_momentum_step

STREAM_PARAMS = 0
STREAM_QUEUE = 1
STREAM_SHUFFLE = 2
STREAM_AUGMENT = 3


@dataclass(frozen=True)
class TrainConfig:
    encoder: EncoderConfig
    contrastive: ContrastiveConfig = ContrastiveConfig()
    augment: AugmentConfig = AugmentConfig()
    epochs: int = 60
    batch_size: int = 64
    learning_rate: float = 0.03
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    snapshot_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.batch_size > self.contrastive.queue_capacity:
            raise ValueError(
                f"batch_size {self.batch_size} exceeds queue capacity "
                f"{self.contrastive.queue_capacity}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class StepRecord:
    step: int
    loss: float
    retained_counts: list
    band_edges: tuple
    lr: float


@dataclass
class TrainState:
    config: TrainConfig
    pair: EncoderPair
    optimizer: OptimizerState
    queue: NegativeQueue


def init_train_state(config: TrainConfig, total_steps: int = 0) -> TrainState:
    pair = init_pair(config.encoder, rng_from_seed(config.seed, STREAM_PARAMS))
    optimizer = OptimizerState.for_params(
        pair.query_encoder.flat(),
        learning_rate_base=config.learning_rate,
        momentum_coeff=config.sgd_momentum,
        weight_decay=config.weight_decay,
        total_steps=total_steps)
    queue = init_queue(config.contrastive.queue_capacity,
                       config.contrastive.queue_reserve,
                       config.encoder.embed_dim,
                       rng_from_seed(config.seed, STREAM_QUEUE))
    return TrainState(config=config, pair=pair, optimizer=optimizer, queue=queue)


def _augment_views(config: TrainConfig, features, instance_ids, epoch):
    views_a = np.empty_like(features)
    views_b = np.empty_like(features)
    for i, instance_id in enumerate(instance_ids):
        for view, out in ((0, views_a), (1, views_b)):
            rng = rng_from_seed(config.seed, STREAM_AUGMENT, epoch, instance_id, view)
            out[i] = augment(features[i], config.augment, rng)
    return views_a, views_b


def _batched_loss_and_grads(queries, positives, neg_dots, gather, active, tau):
    """Vectorized InfoNCE over per-query negative index rows of equal size.

    ``neg_dots`` is (b, r) with rows in ascending active-index order;
    ``gather`` holds the matching index rows into ``active`` (None when every
    row uses the whole active region in storage order). The negative term of
    the gradient runs as one scatter + matmul instead of a per-row gather.
    """
    pos_dots = np.einsum("ij,ij->i", queries, positives)
    logits = np.concatenate([pos_dots[:, None], neg_dots], axis=1) / tau
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    denom = e.sum(axis=1, keepdims=True)
    losses = m[:, 0] + np.log(denom[:, 0]) - logits[:, 0]
    w = e / denom
    acc = (w[:, :1] - 1.0) * positives
    if neg_dots.shape[1]:
        if gather is None:
            acc = acc + w[:, 1:] @ active
        else:
            w_full = np.zeros((queries.shape[0], active.shape[0]))
            np.put_along_axis(w_full, gather, w[:, 1:], axis=1)
            acc = acc + w_full @ active
    return losses, acc / tau


def train_step(state: TrainState, features, labels, instance_ids,
               epoch: int = 0) -> StepRecord:
    """One optimization step on a batch; mutates ``state`` and returns telemetry."""
    config = state.config
    policy = config.contrastive.policy
    tau = config.contrastive.temperature
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    instance_ids = np.asarray(instance_ids, dtype=np.int64)
    b = features.shape[0]

    views_a, views_b = _augment_views(config, features, instance_ids, epoch)
    cache = forward_cached(state.pair.query_encoder, views_a)
    queries = cache.embeddings
    positives = embed(state.pair.key_encoder, views_b)

    queue = state.queue
    active = queue.active_vectors
    active_ages = queue.active_ages
    active_labels = queue.active_class_labels
    n_active = active.shape[0]
    n_reserve = queue.reserve_size
    dots = queries @ active.T

    edge_lo = []
    edge_hi = []
    banded = policy.band.kind != "all"
    simple = policy.class_relation == "any" and policy.replacement == "omit"
    if policy.is_keep_all():
        # Every query sees the whole active region in storage order.
        losses, grad_embeddings = _batched_loss_and_grads(
            queries, positives, dots, None, active, tau)
        retained_counts = [n_active] * b
    elif simple:
        # Band-only policy: every row retains the same count, so the whole
        # batch reduces to one gather. Active rows are age-ordered, so a
        # stable argsort on -dots reproduces the older-first tie rule.
        order = np.argsort(-dots, axis=1, kind="stable")
        start, stop = policy.band.bounds(n_active)
        if policy.mode == "keep":
            window = order[:, start:stop]
        else:
            keep_mask = np.ones((b, n_active), dtype=bool)
            np.put_along_axis(keep_mask, order[:, start:stop], False, axis=1)
            window = np.nonzero(keep_mask)[1].reshape(b, -1) if keep_mask.any() \
                else np.empty((b, 0), dtype=np.int64)
        gather = np.sort(window, axis=1)
        losses, grad_embeddings = _batched_loss_and_grads(
            queries, positives, np.take_along_axis(dots, gather, axis=1),
            gather, active, tau)
        retained_counts = [gather.shape[1]] * b
        if banded and stop > start:
            edge_lo = dots[np.arange(b), order[:, start]].tolist()
            edge_hi = dots[np.arange(b), order[:, stop - 1]].tolist()
    else:
        grad_embeddings = np.empty_like(queries)
        losses = np.empty(b)
        retained_counts = []
        for i in range(b):
            retained, pulls, order = select_retained(
                dots[i], active_ages, active_labels, labels[i], policy, n_reserve)
            neg_dots = dots[i][retained]
            neg_vecs = active[retained]
            if pulls:
                pulled = queue.reserve_vectors(pulls)
                neg_dots = np.concatenate([neg_dots, pulled @ queries[i]])
                neg_vecs = np.concatenate([neg_vecs, pulled])
            pos_dot = float(queries[i] @ positives[i])
            losses[i] = info_nce_from_dots(pos_dot, neg_dots, tau)
            w = softmax_weights_from_dots(pos_dot, neg_dots, tau)
            acc = (w[0] - 1.0) * positives[i]
            if neg_vecs.shape[0]:
                acc = acc + w[1:] @ neg_vecs
            grad_embeddings[i] = acc / tau
            retained_counts.append(int(retained.shape[0]) + pulls)
            if banded:
                start, stop = policy.band.bounds(len(order))
                if stop > start:
                    edge_lo.append(dots[i][order[start]])
                    edge_hi.append(dots[i][order[stop - 1]])

    lr_used = state.optimizer.current_lr()
    grads = backward_batch(state.pair.query_encoder, cache, grad_embeddings)
    grads = [g / b for g in grads.flat()]
    new_flat, _ = sgd_momentum_step(state.pair.query_encoder.flat(), grads,
                                    state.optimizer)
    state.pair.query_encoder = EncoderParams.from_flat(config.encoder, new_flat)
    ema_update(state.pair)
    queue.enqueue_arrays(positives, instance_ids, labels)

    band_edges = (float(np.mean(edge_lo)), float(np.mean(edge_hi))) if edge_lo else None
    return StepRecord(step=state.optimizer.step_count, loss=float(losses.mean()),
                      retained_counts=retained_counts, band_edges=band_edges,
                      lr=lr_used)


def train(config: TrainConfig, dataset: Dataset, out_dir=None):
    """Full pre-training run; returns (pair, step records).

    Epochs reshuffle with a stream keyed by (seed, epoch). When ``out_dir``
    is given, a final checkpoint and the per-step metrics CSV are written
    there, plus periodic checkpoints every ``snapshot_every`` epochs.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    n = len(dataset)
    steps_per_epoch = math.ceil(n / config.batch_size)
    state = init_train_state(config, total_steps=config.epochs * steps_per_epoch)
    records = []
    for epoch in range(config.epochs):
        perm = rng_from_seed(config.seed, STREAM_SHUFFLE, epoch).permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            records.append(train_step(state, dataset.features[idx],
                                      dataset.labels[idx],
                                      dataset.instance_ids[idx], epoch=epoch))
        if (out_dir is not None and config.snapshot_every > 0
                and (epoch + 1) % config.snapshot_every == 0
                and (epoch + 1) < config.epochs):
            _save(state, os.path.join(out_dir, f"checkpoint_epoch{epoch + 1:04d}.ckpt"))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _save(state, os.path.join(out_dir, "checkpoint.ckpt"))
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), records)
    return state.pair, records


def _save(state: TrainState, path):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    save_checkpoint(state.pair, state.optimizer, path,
                    rng_state={"seed": state.config.seed},
                    global_step=state.optimizer.step_count)


def write_metrics_csv(path, records):
    """One row per step: StepRecord fields in declared order.

    ``retained_counts`` and ``band_edges`` are semicolon-joined within their
    cells.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "retained_counts", "band_edges", "lr"])
        for r in records:
            edges = "" if r.band_edges is None else ";".join(repr(e) for e in r.band_edges)
            writer.writerow([r.step, repr(r.loss),
                             ";".join(str(c) for c in r.retained_counts),
                             edges, repr(r.lr)])
