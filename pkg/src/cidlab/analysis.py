"""Post-training measurements over query/negative difficulty.

All analyses are pure functions of a DifficultyMatrix (plus labels and the
class tree): band class-overlap fractions, band mean LCA depth, the
difficulty/dot-product curve, hard-frequency consistency histograms against
shuffled baselines, and class-pair mean dot-product league tables. Each has
a CSV emitter with a fixed, documented column set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .contrastive import Band, band_count, rank_order
from .data import ClassTree, Dataset
from .encoder import EncoderPair, embed
from .exceptions import EmptyInputError, InsufficientInstancesError


@dataclass
class DifficultyMatrix:
    """All query-negative dot products plus per-query difficulty rankings.

    ``ranks[i]`` orders the valid negative columns for query i hardest
    first; self-pairs (same instance id) are excluded from rankings, so a
    row's rank array may be shorter than the negative count.
    """

    query_vectors: np.ndarray
    negative_vectors: np.ndarray
    query_labels: np.ndarray
    negative_labels: np.ndarray
    query_ids: np.ndarray
    negative_ids: np.ndarray
    dots: np.ndarray
    ranks: list

    @property
    def n_queries(self):
        return self.dots.shape[0]

    @property
    def n_negatives(self):
        return self.dots.shape[1]


def build_difficulty_matrix(pair: EncoderPair, query_instances: Dataset,
                            negative_instances: Dataset,
                            use_momentum_encoder: bool = False) -> DifficultyMatrix:
    """Embed both sides and rank every negative per query.

    Both sides use the trained (non-momentum) encoder by default; pass
    ``use_momentum_encoder=True`` to use the key encoder instead. Ties in
    difficulty break toward the lower negative index.
    """
    if len(query_instances) == 0 or len(negative_instances) == 0:
        raise EmptyInputError("need at least one query and one negative")
    params = pair.key_encoder if use_momentum_encoder else pair.query_encoder
    q_vecs = embed(params, query_instances.features)
    n_vecs = embed(params, negative_instances.features)
    dots = np.clip(q_vecs @ n_vecs.T, -1.0, 1.0)
    positions = np.arange(len(negative_instances))
    ranks = []
    for i in range(len(query_instances)):
        valid = negative_instances.instance_ids != query_instances.instance_ids[i]
        cols = positions[valid]
        ranks.append(cols[rank_order(dots[i, valid], cols)])
    return DifficultyMatrix(query_vectors=q_vecs, negative_vectors=n_vecs,
                            query_labels=query_instances.labels.copy(),
                            negative_labels=negative_instances.labels.copy(),
                            query_ids=query_instances.instance_ids.copy(),
                            negative_ids=negative_instances.instance_ids.copy(),
                            dots=dots, ranks=ranks)


def band_same_class_fraction(dm: DifficultyMatrix, band: Band) -> float:
    """Fraction of band-member negatives sharing the query's class, pooled
    over all queries."""
    same = 0
    total = 0
    for i, row in enumerate(dm.ranks):
        start, stop = band.bounds(len(row))
        members = row[start:stop]
        same += int(np.sum(dm.negative_labels[members] == dm.query_labels[i]))
        total += len(members)
    return same / total if total else 0.0


def band_mean_lca(dm: DifficultyMatrix, tree: ClassTree, band: Band) -> float:
    """Mean LCA depth between query and negative labels over band members."""
    labels = sorted(set(dm.query_labels) | set(dm.negative_labels))
    index = {label: i for i, label in enumerate(labels)}
    table = np.array([[tree.lca_depth(a, b) for b in labels] for a in labels],
                     dtype=np.float64)
    total = 0.0
    count = 0
    for i, row in enumerate(dm.ranks):
        start, stop = band.bounds(len(row))
        members = row[start:stop]
        qi = index[dm.query_labels[i]]
        total += table[qi, [index[l] for l in dm.negative_labels[members]]].sum()
        count += len(members)
    return total / count if count else 0.0


def difficulty_dot_curve(dm: DifficultyMatrix, n_points: int = 20) -> np.ndarray:
    """Mean dot product at evenly spaced rank percentiles, hardest to easiest.

    Returns an (n_points, 2) array of (rank_pct, mean_dot) with rank_pct 0
    at the hardest end and 1 at the easiest; the mean_dot column is
    non-increasing because every per-query ranked row is.
    """
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    pcts = np.linspace(0.0, 1.0, n_points)
    sums = np.zeros(n_points)
    for i, row in enumerate(dm.ranks):
        idx = np.rint(pcts * (len(row) - 1)).astype(int)
        sums += dm.dots[i, row[idx]]
    return np.column_stack([pcts, sums / len(dm.ranks)])


@dataclass
class HardFrequencyResult:
    """Per-negative hard frequencies with their histogram.

    ``frequencies`` holds, for each negative (and each shuffle, when this is
    a shuffled baseline), the fraction of queries for which it fell in the
    hardest band; ``counts`` the raw integer tallies; ``pdf`` the histogram
    mass per fixed-width bin on [0, 1].
    """

    frequencies: np.ndarray
    counts: np.ndarray
    pdf: np.ndarray
    bin_edges: np.ndarray

    @property
    def mean(self):
        return float(self.frequencies.mean())

    @property
    def variance(self):
        return float(self.frequencies.var())


def _histogram(values, n_bins):
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return counts / values.size, edges


def hard_frequency_histogram(dm: DifficultyMatrix, frac: float,
                             n_bins: int = 50) -> HardFrequencyResult:
    """For each negative, the fraction of queries ranking it in the hardest
    ``frac`` band, histogrammed over [0, 1].

    Each query marks exactly band_count(frac, N) negatives, so the mean
    frequency is band_count(frac, N)/N by counting.
    """
    if not 0.0 < frac < 1.0:
        raise ValueError(f"frac must lie in (0, 1), got {frac}")
    n = dm.n_negatives
    top = band_count(frac, n)
    counts = np.zeros(n, dtype=np.int64)
    for row in dm.ranks:
        counts[row[:top]] += 1
    freqs = counts / dm.n_queries
    pdf, edges = _histogram(freqs, n_bins)
    return HardFrequencyResult(frequencies=freqs, counts=counts, pdf=pdf,
                               bin_edges=edges)


def shuffled_baseline_histogram(dm: DifficultyMatrix, frac: float,
                                n_bins: int = 50, rng=None,
                                n_shuffles: int = 10) -> HardFrequencyResult:
    """Chance baseline: each query's ranking replaced by a uniform shuffle.

    Every query still marks exactly band_count(frac, N) negatives per
    shuffle (drawn uniformly among its valid columns), so the mean matches
    the real histogram's exactly; frequencies pool all shuffles.
    """
    if n_shuffles < 1:
        raise ValueError(f"n_shuffles must be >= 1, got {n_shuffles}")
    if rng is None:
        raise ValueError("shuffled baseline needs an rng")
    n = dm.n_negatives
    top = band_count(frac, n)
    counts = np.zeros((n_shuffles, n), dtype=np.int64)
    for s in range(n_shuffles):
        for row in dm.ranks:
            marked = row[rng.permutation(len(row))[:top]]
            counts[s, marked] += 1
    freqs = counts.reshape(-1) / dm.n_queries
    pdf, edges = _histogram(freqs, n_bins)
    return HardFrequencyResult(frequencies=freqs, counts=counts.reshape(-1),
                               pdf=pdf, bin_edges=edges)


@dataclass
class ClassPairDots:
    """Symmetric class-by-class mean pairwise dot products with the ranked
    extreme pairs (over distinct class pairs)."""

    class_labels: np.ndarray
    matrix: np.ndarray
    most_negative: list
    most_positive: list
    nearest_zero: list


def class_pair_mean_dots(embeddings, labels, top_n: int = 10) -> ClassPairDots:
    """Mean dot product over all cross pairs (x in a, y in b, x != y) for
    every class pair, plus the most anti-correlated, most correlated, and
    most orthogonal distinct pairs.

    Every class must contribute at least 2 instances so the within-class
    diagonal is defined.
    """
    vecs = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    counts = np.array([int(np.sum(labels == c)) for c in classes])
    if np.any(counts < 2):
        bad = classes[counts < 2]
        raise InsufficientInstancesError(
            f"classes {bad.tolist()} have fewer than 2 instances")
    sums = np.stack([vecs[labels == c].sum(axis=0) for c in classes])
    sq_norms = np.array([float(np.sum(vecs[labels == c] ** 2)) for c in classes])
    gram = sums @ sums.T
    matrix = gram / np.outer(counts, counts)
    diag = (np.diag(gram) - sq_norms) / (counts * (counts - 1.0))
    np.fill_diagonal(matrix, diag)

    pairs = [(int(classes[i]), int(classes[j]), float(matrix[i, j]))
             for i in range(len(classes)) for j in range(i + 1, len(classes))]
    by_value = sorted(pairs, key=lambda p: p[2])
    by_magnitude = sorted(pairs, key=lambda p: abs(p[2]))
    return ClassPairDots(class_labels=classes, matrix=matrix,
                         most_negative=by_value[:top_n],
                         most_positive=list(reversed(by_value[-top_n:])),
                         nearest_zero=by_magnitude[:top_n])


def sample_difficulty_instances(dataset: Dataset, n_queries: int, n_negatives: int,
                                rng) -> tuple:
    """Random query/negative subsets for the difficulty analyses.

    Draws without replacement within each side; the two sides may overlap
    (self-pairs are excluded during ranking).
    """
    n = len(dataset)
    queries = dataset.subset(rng.permutation(n)[:min(n_queries, n)])
    negatives = dataset.subset(rng.permutation(n)[:min(n_negatives, n)])
    return queries, negatives


def write_csv(path, header, rows):
    """Plain CSV with a header; floats are rendered with repr for exact
    round-trips."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_curve_csv(path, curve):
    """Columns: rank_pct,mean_dot."""
    write_csv(path, ["rank_pct", "mean_dot"],
              [(float(p), float(d)) for p, d in curve])


def write_band_semantics_csv(path, rows):
    """Columns: band_lo,band_hi,same_class_fraction,mean_lca (mean_lca empty
    when no tree is available)."""
    out = []
    for lo, hi, frac, lca in rows:
        out.append((float(lo), float(hi), float(frac),
                    "" if lca is None else float(lca)))
    write_csv(path, ["band_lo", "band_hi", "same_class_fraction", "mean_lca"], out)


def write_consistency_csv(path, real: HardFrequencyResult,
                          shuffled: HardFrequencyResult):
    """Columns: bin_lo,bin_hi,real_pdf,shuffled_pdf."""
    rows = [(float(real.bin_edges[i]), float(real.bin_edges[i + 1]),
             float(real.pdf[i]), float(shuffled.pdf[i]))
            for i in range(real.pdf.size)]
    write_csv(path, ["bin_lo", "bin_hi", "real_pdf", "shuffled_pdf"], rows)


def write_class_pairs_csv(path, result: ClassPairDots):
    """Columns: class_a,class_b,mean_dot — full upper triangle including the
    within-class diagonal."""
    rows = []
    for i, a in enumerate(result.class_labels):
        for j in range(i, len(result.class_labels)):
            rows.append((int(a), int(result.class_labels[j]),
                         float(result.matrix[i, j])))
    write_csv(path, ["class_a", "class_b", "mean_dot"], rows)


def write_class_pair_extremes_csv(path, result: ClassPairDots):
    """Columns: kind,rank,class_a,class_b,mean_dot with kind in
    {most_negative, most_positive, nearest_zero}."""
    rows = []
    for kind, pairs in (("most_negative", result.most_negative),
                        ("most_positive", result.most_positive),
                        ("nearest_zero", result.nearest_zero)):
        for rank, (a, b, v) in enumerate(pairs):
            rows.append((kind, rank, a, b, float(v)))
    write_csv(path, ["kind", "rank", "class_a", "class_b", "mean_dot"], rows)
