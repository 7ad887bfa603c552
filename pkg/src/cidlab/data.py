"""Desk-scale datasets with ground-truth class hierarchies.

The synthetic generator draws a balanced binary hierarchy of Gaussian
classes: every node contributes an offset to the means of the leaves below
it, so leaves sharing a deep ancestor share most of their mean vector and
semantic similarity (least-common-ancestor depth) correlates with mean
cosine similarity by construction. A CIFAR-10 binary reader covers the
real-image path; augmentation produces the two views of an instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import MalformedRecordError, UnknownLabelError

CIFAR_RECORD_BYTES = 3073
CIFAR_PIXELS = 3072


@dataclass
class Instance:
    instance_id: int
    features: np.ndarray
    class_label: int


@dataclass
class Dataset:
    """Column-oriented instance store: features (n, d), labels and ids (n,)."""

    features: np.ndarray
    labels: np.ndarray
    instance_ids: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64)
        if not (len(self.features) == len(self.labels) == len(self.instance_ids)):
            raise ValueError("features, labels, and instance_ids must have equal length")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], self.instance_ids[idx])

    def instances(self):
        for i in range(len(self)):
            yield Instance(instance_id=int(self.instance_ids[i]),
                           features=self.features[i],
                           class_label=int(self.labels[i]))

    @classmethod
    def from_instances(cls, instances) -> "Dataset":
        instances = list(instances)
        return cls(features=np.stack([inst.features for inst in instances]),
                   labels=np.array([inst.class_label for inst in instances]),
                   instance_ids=np.array([inst.instance_id for inst in instances]))


class ClassTree:
    """Rooted labeled hierarchy over class labels; the root has depth 0 and
    each class label maps to exactly one leaf."""

    def __init__(self, parents: dict, leaf_labels: dict):
        self.parents = dict(parents)
        roots = [n for n, p in self.parents.items() if p is None]
        if len(roots) != 1:
            raise ValueError(f"tree must have exactly one root, found {len(roots)}")
        self.root = roots[0]
        for node, parent in self.parents.items():
            if parent is not None and parent not in self.parents:
                raise ValueError(f"parent {parent!r} of {node!r} is not a node")
        self.leaf_for_label = {int(k): v for k, v in leaf_labels.items()}
        children = {n: 0 for n in self.parents}
        for node, parent in self.parents.items():
            if parent is not None:
                children[parent] += 1
        for label, leaf in self.leaf_for_label.items():
            if leaf not in self.parents:
                raise ValueError(f"label {label} maps to unknown node {leaf!r}")
            if children[leaf] != 0:
                raise ValueError(f"label {label} maps to internal node {leaf!r}")
        self._depths = {}
        for node in self.parents:
            self._depths[node] = self._compute_depth(node)

    def _compute_depth(self, node):
        depth = 0
        seen = set()
        while self.parents[node] is not None:
            if node in seen:
                raise ValueError("cycle detected in tree parents")
            seen.add(node)
            node = self.parents[node]
            depth += 1
        return depth

    def depth(self, node) -> int:
        return self._depths[node]

    @property
    def labels(self):
        return sorted(self.leaf_for_label)

    def _leaf(self, label):
        try:
            return self.leaf_for_label[int(label)]
        except (KeyError, TypeError, ValueError):
            raise UnknownLabelError(f"label {label!r} has no leaf in the tree") from None

    def ancestors(self, node):
        """Path from ``node`` (inclusive) up to the root."""
        path = [node]
        while self.parents[node] is not None:
            node = self.parents[node]
            path.append(node)
        return path

    def lca_depth(self, a, b) -> int:
        """Depth of the deepest common ancestor of the leaves of labels a, b.

        A leaf counts as its own ancestor, so lca_depth(a, a) is the leaf's
        depth. Deeper means more semantically similar.
        """
        leaf_a = self._leaf(a)
        leaf_b = self._leaf(b)
        if leaf_a == leaf_b:
            return self._depths[leaf_a]
        ancestors_a = set(self.ancestors(leaf_a))
        node = leaf_b
        while node not in ancestors_a:
            node = self.parents[node]
        return self._depths[node]

    @classmethod
    def balanced_binary(cls, depth: int) -> "ClassTree":
        """Balanced binary tree with 2**depth leaf classes labeled 0..2**depth-1.

        Node names are bit-path strings under the root, so the LCA depth of
        two distinct leaves is the length of their common bit prefix.
        """
        if depth < 1:
            raise ValueError(f"depth must be >= 1, got {depth}")
        parents = {"root": None}
        for level in range(1, depth + 1):
            for i in range(2 ** level):
                bits = format(i, f"0{level}b")
                parents[bits] = bits[:-1] if level > 1 else "root"
        leaf_labels = {i: format(i, f"0{depth}b") for i in range(2 ** depth)}
        return cls(parents, leaf_labels)

    @classmethod
    def from_edge_list(cls, lines) -> "ClassTree":
        """Build from "parent child" pairs, one per line.

        Leaves must be named by their integer class labels. Accepts an
        iterable of lines or a path.
        """
        if isinstance(lines, (str, bytes)) or hasattr(lines, "__fspath__"):
            with open(lines, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        parents = {}
        mentioned_parents = set()
        for raw in lines:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"expected 'parent child' per line, got {raw!r}")
            parent, child = parts
            parents.setdefault(parent, None)
            if child in parents and parents[child] is not None:
                raise ValueError(f"node {child!r} has two parents")
            parents[child] = parent
            mentioned_parents.add(parent)
        leaves = [n for n in parents if n not in mentioned_parents]
        leaf_labels = {}
        for leaf in leaves:
            try:
                leaf_labels[int(leaf)] = leaf
            except ValueError:
                raise ValueError(f"leaf {leaf!r} is not an integer class label") from None
        return cls(parents, leaf_labels)


def lca_depth(tree: ClassTree, a, b) -> int:
    return tree.lca_depth(a, b)


def gen_hierarchical_gaussian(tree_depth: int, dims: int, level_sigmas,
                              within_class_sigma: float, instances_per_class: int,
                              rng) -> tuple:
    """Synthetic dataset over a balanced binary class hierarchy.

    Each node at level L (1-based) contributes an offset drawn from
    N(0, level_sigmas[L-1]^2 I); a leaf class mean is the sum of offsets on
    its root-to-leaf path, and instances are drawn N(mean, within^2 I).
    Returns (dataset, tree). Instances are laid out class by class with
    sequential ids.
    """
    level_sigmas = [float(s) for s in level_sigmas]
    if tree_depth < 1:
        raise ValueError(f"tree_depth must be >= 1, got {tree_depth}")
    if len(level_sigmas) != tree_depth:
        raise ValueError(f"need {tree_depth} level sigmas, got {len(level_sigmas)}")
    if any(s < 0 for s in level_sigmas):
        raise ValueError("level sigmas must be non-negative")
    tree = ClassTree.balanced_binary(tree_depth)
    means = {"root": np.zeros(dims)}
    for level in range(1, tree_depth + 1):
        sigma = level_sigmas[level - 1]
        for i in range(2 ** level):
            node = format(i, f"0{level}b")
            parent = tree.parents[node]
            means[node] = means[parent] + sigma * rng.standard_normal(dims)
    n_classes = 2 ** tree_depth
    features = np.empty((n_classes * instances_per_class, dims))
    labels = np.empty(n_classes * instances_per_class, dtype=np.int64)
    for label in range(n_classes):
        mean = means[tree.leaf_for_label[label]]
        start = label * instances_per_class
        features[start:start + instances_per_class] = (
            mean + within_class_sigma * rng.standard_normal((instances_per_class, dims)))
        labels[start:start + instances_per_class] = label
    dataset = Dataset(features=features, labels=labels,
                      instance_ids=np.arange(len(labels)))
    return dataset, tree


def class_means(dataset: Dataset) -> dict:
    return {int(label): dataset.features[dataset.labels == label].mean(axis=0)
            for label in np.unique(dataset.labels)}


@dataclass(frozen=True)
class AugmentConfig:
    """Flat-vector stand-ins for the image augmentations: additive Gaussian
    noise, multiplicative scale jitter, and coordinate dropout."""

    noise_sigma: float = 0.3
    scale_jitter: float = 0.1
    coordinate_dropout_prob: float = 0.1

    def __post_init__(self):
        if self.noise_sigma < 0 or self.scale_jitter < 0:
            raise ValueError("noise_sigma and scale_jitter must be >= 0")
        if not 0.0 <= self.coordinate_dropout_prob < 1.0:
            raise ValueError("coordinate_dropout_prob must lie in [0, 1)")


def augment(x, cfg: AugmentConfig, rng) -> np.ndarray:
    """One view: dropout_mask * (scale * x) + noise.

    Draw order is fixed (scale, then mask, then noise) so a given rng
    substream always produces the same view. With an all-zero config the
    view equals ``x`` exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    scale = rng.uniform(1.0 - cfg.scale_jitter, 1.0 + cfg.scale_jitter)
    mask = rng.random(x.shape) >= cfg.coordinate_dropout_prob
    noise = rng.normal(0.0, cfg.noise_sigma, size=x.shape) if cfg.noise_sigma > 0 else 0.0
    return mask * (scale * x) + noise


def load_cifar10_batch(path) -> list:
    """Parse a CIFAR-10 binary batch: 3073-byte records of one label byte
    (0-9) followed by 1024 R + 1024 G + 1024 B pixel bytes.

    Pixels are scaled to [0, 1]; instance ids are record indices within the
    file. Raises MalformedRecordError on a bad length or label.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
        raise MalformedRecordError(
            f"file length {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES}")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0]
    if labels.max(initial=0) > 9:
        bad = int(np.argmax(labels > 9))
        raise MalformedRecordError(
            f"record {bad} has label byte {int(labels[bad])} > 9")
    pixels = records[:, 1:].astype(np.float64) / 255.0
    return [Instance(instance_id=i, features=pixels[i], class_label=int(labels[i]))
            for i in range(records.shape[0])]
