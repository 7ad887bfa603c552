"""InfoNCE loss, the FIFO negative queue with a reserve region, per-query
difficulty ranking, and the filter-policy algebra over difficulty bands.

Difficulty of a negative for a query is the dot product of their unit
embeddings: closer to 1 is harder. Percentile coordinates for bands run
from 0 (easiest end) to 1 (hardest end), so the band (0.95, 1.00] is the
hardest 5%. A policy names a band, a class relation, and whether the
selected set is kept or dropped; dropped negatives either simply vanish
from the loss (omit) or are replaced by the oldest reserve entries so the
denominator keeps a constant size (replace_with_older).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (BatchTooLargeError, EmptyNegativesError,
                         ReserveExhaustedError)
from .numerics import l2_normalize_rows

MODES = ("keep", "drop")
CLASS_RELATIONS = ("any", "same", "different")
REPLACEMENTS = ("omit", "replace_with_older")

SENTINEL_LABEL = -1
SENTINEL_INSTANCE = -1


def round_half_away(x: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def band_count(fraction: float, total: int) -> int:
    """Number of negatives in a fractional band of a queue of ``total``.

    max(1, round(fraction * total)) with round-half-away-from-zero, so a
    nominal 0.1% band never vanishes on a small queue.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    return max(1, round_half_away(fraction * total))


@dataclass(frozen=True)
class Band:
    """A contiguous difficulty range, resolved to ranked positions per query.

    kinds: "all"; "hardest" / "easiest" with ``fraction``; "range" with
    percentile bounds ``lo`` < ``hi`` in [0, 1] (1 = hardest end).
    """

    kind: str
    fraction: float = None
    lo: float = None
    hi: float = None

    def __post_init__(self):
        if self.kind not in ("all", "hardest", "easiest", "range"):
            raise ValueError(f"unknown band kind {self.kind!r}")
        if self.kind in ("hardest", "easiest"):
            if self.fraction is None or not 0.0 < self.fraction <= 1.0:
                raise ValueError(f"band fraction must lie in (0, 1], got {self.fraction}")
        if self.kind == "range":
            if self.lo is None or self.hi is None or not 0.0 <= self.lo < self.hi <= 1.0:
                raise ValueError(f"band range needs 0 <= lo < hi <= 1, got ({self.lo}, {self.hi})")

    @classmethod
    def all(cls):
        return cls(kind="all")

    @classmethod
    def hardest(cls, fraction):
        return cls(kind="hardest", fraction=float(fraction))

    @classmethod
    def easiest(cls, fraction):
        return cls(kind="easiest", fraction=float(fraction))

    @classmethod
    def range(cls, lo, hi):
        return cls(kind="range", lo=float(lo), hi=float(hi))

    @classmethod
    def from_string(cls, text: str) -> "Band":
        """Parse "all", "hardest:F", "easiest:F", or "range:LO:HI"."""
        parts = text.strip().lower().split(":")
        try:
            if parts[0] == "all" and len(parts) == 1:
                return cls.all()
            if parts[0] == "hardest" and len(parts) == 2:
                return cls.hardest(float(parts[1]))
            if parts[0] == "easiest" and len(parts) == 2:
                return cls.easiest(float(parts[1]))
            if parts[0] == "range" and len(parts) == 3:
                return cls.range(float(parts[1]), float(parts[2]))
        except ValueError as exc:
            raise ValueError(f"bad band spec {text!r}: {exc}") from None
        raise ValueError(f"bad band spec {text!r}")

    def to_string(self) -> str:
        if self.kind == "all":
            return "all"
        if self.kind == "range":
            return f"range:{self.lo!r}:{self.hi!r}"
        return f"{self.kind}:{self.fraction!r}"

    def bounds(self, total: int):
        """Half-open window [start, stop) of ranked positions (0 = hardest).

        Range bands share boundary arithmetic, so adjacent ranges tile the
        queue exactly; fractional bands use band_count and never come back
        empty, while a narrow range may.
        """
        if self.kind == "all":
            return 0, total
        if self.kind == "hardest":
            return 0, band_count(self.fraction, total)
        if self.kind == "easiest":
            return total - band_count(self.fraction, total), total
        start = round_half_away((1.0 - self.hi) * total)
        stop = round_half_away((1.0 - self.lo) * total)
        return start, stop


@dataclass(frozen=True)
class FilterPolicy:
    """Which negatives a query sees: (keep|drop) x band x class relation,
    plus what happens to the dropped ones."""

    mode: str = "keep"
    band: Band = field(default_factory=Band.all)
    class_relation: str = "any"
    replacement: str = "omit"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.class_relation not in CLASS_RELATIONS:
            raise ValueError(f"class_relation must be one of {CLASS_RELATIONS}, got {self.class_relation!r}")
        if self.replacement not in REPLACEMENTS:
            raise ValueError(f"replacement must be one of {REPLACEMENTS}, got {self.replacement!r}")

    def is_keep_all(self) -> bool:
        return self.mode == "keep" and self.band.kind == "all" and self.class_relation == "any"


KEEP_ALL = FilterPolicy()


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.2
    queue_capacity: int = 1024
    queue_reserve: int = 64
    policy: FilterPolicy = KEEP_ALL

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.queue_capacity < 1:
            raise ValueError(f"queue capacity must be >= 1, got {self.queue_capacity}")
        if self.queue_reserve < 0:
            raise ValueError(f"queue reserve must be >= 0, got {self.queue_reserve}")


@dataclass
class Embedding:
    """Unit-norm contrastive-space vector with its provenance."""

    vector: np.ndarray
    instance_id: int
    class_label: int
    age: int = 0

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        norm = float(np.linalg.norm(self.vector))
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"embedding must be unit norm, got ||v|| = {norm!r}")


def _vectors_of(negatives) -> np.ndarray:
    if isinstance(negatives, np.ndarray):
        return np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if len(negatives) == 0:
        return np.empty((0, 0))
    return np.stack([np.asarray(n.vector if isinstance(n, Embedding) else n,
                                dtype=np.float64) for n in negatives])


def _query_vector(query) -> np.ndarray:
    return np.asarray(query.vector if isinstance(query, Embedding) else query,
                      dtype=np.float64)


def rank_order(dots: np.ndarray, ages: np.ndarray) -> np.ndarray:
    """Indices sorted hardest first (dot descending), ties older-age first."""
    return np.lexsort((ages, -dots))


def rank_difficulty(query, negatives):
    """Difficulty ranking of ``negatives`` against ``query``.

    Returns (order, ranked_dots): ``order`` permutes the negatives hardest
    first with ties broken toward older entries; ``ranked_dots`` are the dot
    products in that order, clipped into [-1, 1].
    """
    vecs = _vectors_of(negatives)
    if vecs.shape[0] == 0:
        raise EmptyNegativesError("cannot rank an empty negative set")
    q = _query_vector(query)
    dots = vecs @ q
    ages = np.array([n.age if isinstance(n, Embedding) else i
                     for i, n in enumerate(negatives)], dtype=np.int64)
    order = rank_order(dots, ages)
    return order, np.clip(dots[order], -1.0, 1.0)


def select_retained(dots, ages, labels, query_label, policy: FilterPolicy,
                    reserve_len: int = 0):
    """Core per-query policy evaluation on raw arrays.

    Returns (retained, pulls, order): ``retained`` holds the surviving
    indices into the active negatives in ascending (age) order, ``pulls``
    how many oldest reserve entries replace dropped ones, and ``order`` the
    full difficulty ranking (reused by telemetry).
    """
    dots = np.asarray(dots, dtype=np.float64)
    n = dots.shape[0]
    if n == 0:
        raise EmptyNegativesError("policy applied to an empty negative set")
    order = rank_order(dots, np.asarray(ages))
    start, stop = policy.band.bounds(n)
    in_band = order[start:stop]
    if policy.class_relation == "any":
        selected = in_band
    else:
        band_labels = np.asarray(labels)[in_band]
        mask = band_labels == query_label
        if policy.class_relation == "different":
            mask = ~mask
        selected = in_band[mask]
    if policy.mode == "keep":
        retained = np.sort(selected)
    else:
        keep_mask = np.ones(n, dtype=bool)
        keep_mask[selected] = False
        retained = np.nonzero(keep_mask)[0]
    pulls = 0
    if policy.replacement == "replace_with_older":
        pulls = n - retained.shape[0]
        if pulls > reserve_len:
            raise ReserveExhaustedError(
                f"policy drops {pulls} negatives but the reserve holds only {reserve_len}")
    return retained, pulls, order


def apply_policy(query, negatives, policy: FilterPolicy, reserve=()):
    """Retained negatives for one query under ``policy``.

    ``negatives`` is the active region of the queue (a list of Embedding);
    ``reserve`` the next-older region, oldest first. With replacement, the
    dropped count is refilled from the oldest reserve entries so the
    retained total equals the active count.
    """
    vecs = _vectors_of(negatives)
    if vecs.shape[0] == 0:
        raise EmptyNegativesError("policy applied to an empty negative set")
    q = _query_vector(query)
    dots = vecs @ q
    ages = np.array([n.age for n in negatives], dtype=np.int64)
    labels = np.array([n.class_label for n in negatives], dtype=np.int64)
    query_label = query.class_label if isinstance(query, Embedding) else SENTINEL_LABEL
    retained, pulls, _ = select_retained(dots, ages, labels, query_label,
                                         policy, reserve_len=len(reserve))
    out = [negatives[i] for i in retained]
    out.extend(reserve[i] for i in range(pulls))
    return out


class NegativeQueue:
    """FIFO ring of embeddings: the newest ``capacity`` entries are the
    active negatives, the next-older ``reserve`` entries only ever serve as
    replacements for dropped negatives.

    Storage is oldest-first parallel arrays so a whole batch of queries can
    rank the active region with one matrix product.
    """

    def __init__(self, capacity: int, reserve: int, embed_dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        if reserve < 0:
            raise ValueError(f"reserve must be >= 0, got {reserve}")
        self.capacity = int(capacity)
        self.reserve = int(reserve)
        self.embed_dim = int(embed_dim)
        self.vectors = np.empty((0, embed_dim))
        self.instance_ids = np.empty(0, dtype=np.int64)
        self.class_labels = np.empty(0, dtype=np.int64)
        self.ages = np.empty(0, dtype=np.int64)
        self.next_age = 0

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def _active_start(self):
        return max(0, len(self) - self.capacity)

    @property
    def active_vectors(self):
        return self.vectors[self._active_start:]

    @property
    def active_instance_ids(self):
        return self.instance_ids[self._active_start:]

    @property
    def active_class_labels(self):
        return self.class_labels[self._active_start:]

    @property
    def active_ages(self):
        return self.ages[self._active_start:]

    @property
    def reserve_size(self):
        return self._active_start

    def reserve_vectors(self, count: int = None):
        stop = self._active_start if count is None else min(count, self._active_start)
        return self.vectors[:stop]

    def _slice_entries(self, start, stop):
        return [Embedding(vector=self.vectors[i].copy(),
                          instance_id=int(self.instance_ids[i]),
                          class_label=int(self.class_labels[i]),
                          age=int(self.ages[i]))
                for i in range(start, stop)]

    @property
    def entries(self):
        """All stored embeddings, oldest first."""
        return self._slice_entries(0, len(self))

    def active_entries(self):
        return self._slice_entries(self._active_start, len(self))

    def reserve_entries(self):
        return self._slice_entries(0, self._active_start)

    def enqueue_arrays(self, vectors, instance_ids, class_labels):
        """Append a batch (given as arrays) and evict beyond capacity+reserve."""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        b = vectors.shape[0]
        if b > self.capacity:
            raise BatchTooLargeError(
                f"batch of {b} exceeds queue capacity {self.capacity}")
        if vectors.shape[1] != self.embed_dim:
            raise ValueError(f"expected embed_dim {self.embed_dim}, got {vectors.shape[1]}")
        new_ages = np.arange(self.next_age, self.next_age + b, dtype=np.int64)
        self.next_age += b
        self.vectors = np.concatenate([self.vectors, vectors])
        self.instance_ids = np.concatenate(
            [self.instance_ids, np.asarray(instance_ids, dtype=np.int64)])
        self.class_labels = np.concatenate(
            [self.class_labels, np.asarray(class_labels, dtype=np.int64)])
        self.ages = np.concatenate([self.ages, new_ages])
        overflow = len(self) - (self.capacity + self.reserve)
        if overflow > 0:
            self.vectors = self.vectors[overflow:]
            self.instance_ids = self.instance_ids[overflow:]
            self.class_labels = self.class_labels[overflow:]
            self.ages = self.ages[overflow:]

    def enqueue(self, batch):
        """Append a batch of Embedding objects (their ages are reassigned)."""
        if len(batch) == 0:
            return
        self.enqueue_arrays(np.stack([e.vector for e in batch]),
                            [e.instance_id for e in batch],
                            [e.class_label for e in batch])


def init_queue(capacity: int, reserve: int, embed_dim: int, rng) -> NegativeQueue:
    """Cold-start queue filled with random unit vectors.

    The fillers carry the sentinel label -1 (never matched by a same-class
    relation against real labels) and sentinel instance id -1.
    """
    queue = NegativeQueue(capacity, reserve, embed_dim)
    total = capacity + reserve
    vectors = l2_normalize_rows(rng.standard_normal((total, embed_dim)))
    for start in range(0, total, capacity):
        stop = min(start + capacity, total)
        queue.enqueue_arrays(vectors[start:stop],
                             np.full(stop - start, SENTINEL_INSTANCE, dtype=np.int64),
                             np.full(stop - start, SENTINEL_LABEL, dtype=np.int64))
    return queue


def info_nce_from_dots(positive_dot: float, negative_dots, temperature: float) -> float:
    """InfoNCE loss from precomputed dot products, max-shifted for stability."""
    logits = np.concatenate(([positive_dot], np.asarray(negative_dots,
                                                        dtype=np.float64))) / temperature
    m = logits.max()
    return float(m + math.log(np.exp(logits - m).sum()) - logits[0])


def info_nce_loss(query, positive, retained_negatives, temperature: float) -> float:
    """-log( exp(q.k+/t) / (exp(q.k+/t) + sum_i exp(q.k_i/t)) ).

    Computed via a max-shifted log-sum-exp; always >= 0, and exactly 0 when
    no negatives remain.
    """
    q = _query_vector(query)
    k_pos = _query_vector(positive)
    vecs = _vectors_of(retained_negatives)
    neg_dots = vecs @ q if vecs.shape[0] else np.empty(0)
    return info_nce_from_dots(float(q @ k_pos), neg_dots, temperature)


def softmax_weights_from_dots(positive_dot, negative_dots, temperature):
    """Softmax over {positive} + negatives of dots/temperature (stable)."""
    logits = np.concatenate(([positive_dot], np.asarray(negative_dots,
                                                        dtype=np.float64))) / temperature
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def info_nce_grad_query(query, positive, retained_negatives, temperature: float) -> np.ndarray:
    """Gradient of the InfoNCE loss with respect to the query embedding.

    dL/dq = (1/t) * ( sum over {positive} + negatives of w_j k_j - k_+ )
    with w the softmax of dots/t over that same set.
    """
    q = _query_vector(query)
    k_pos = _query_vector(positive)
    vecs = _vectors_of(retained_negatives)
    if vecs.shape[0]:
        neg_dots = vecs @ q
        w = softmax_weights_from_dots(float(q @ k_pos), neg_dots, temperature)
        acc = (w[0] - 1.0) * k_pos + w[1:] @ vecs
    else:
        acc = np.zeros_like(k_pos)
    return acc / temperature
