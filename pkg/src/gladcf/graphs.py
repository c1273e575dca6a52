"""Core graph containers, batch padding, and stratified splitting.

Graphs are small frozen records around numpy arrays; arrays are marked
read-only at construction so instances are safe to share across folds and
worker processes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, SizeError

Array = np.ndarray


class Provenance(enum.Enum):
    """Where a graph came from: loaded from disk, or synthesized."""

    ORIGINAL_NORMAL = "original_normal"
    ORIGINAL_ABNORMAL = "original_abnormal"
    GENERATED = "generated"


def _freeze(a: Array) -> Array:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Graph:
    """One undirected graph with binary adjacency and dense node features.

    Invariants (checked): adjacency is square, binary, symmetric, with a zero
    diagonal; ``degrees`` equals the adjacency row sums; ``node_features`` has
    one row per node (zero columns are allowed before features are built).
    """

    adjacency: Array
    node_features: Array
    degrees: Array
    label: int
    provenance: Provenance
    node_labels: Array | None = None

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=np.float64)
        feats = np.asarray(self.node_features, dtype=np.float64)
        degs = np.asarray(self.degrees, dtype=np.float64).reshape(-1)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise SizeError(f"adjacency must be square, got {adj.shape}")
        n = adj.shape[0]
        if not np.isin(adj, (0.0, 1.0)).all():
            raise ConfigError("adjacency entries must be 0 or 1")
        if not np.array_equal(adj, adj.T):
            raise ConfigError("adjacency must be symmetric")
        if n and np.trace(adj) != 0:
            raise ConfigError("adjacency diagonal must be zero")
        if feats.ndim != 2 or feats.shape[0] != n:
            raise SizeError(
                f"node_features must have {n} rows, got shape {feats.shape}")
        if degs.shape[0] != n or not np.array_equal(degs, adj.sum(axis=1)):
            raise ConfigError("degrees must equal adjacency row sums")
        if self.label not in (0, 1):
            raise ConfigError(f"label must be 0 or 1, got {self.label!r}")
        object.__setattr__(self, "adjacency", _freeze(adj))
        object.__setattr__(self, "node_features", _freeze(feats))
        object.__setattr__(self, "degrees", _freeze(degs))
        if self.node_labels is not None:
            object.__setattr__(
                self, "node_labels",
                _freeze(np.asarray(self.node_labels, dtype=np.int64)))

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]


def make_graph(adjacency: Array, node_features: Array, label: int,
               provenance: Provenance,
               node_labels: Array | None = None) -> Graph:
    """Build a Graph, deriving degrees from the adjacency row sums."""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    return Graph(adjacency=adjacency, node_features=node_features,
                 degrees=adjacency.sum(axis=1), label=label,
                 provenance=provenance, node_labels=node_labels)


@dataclass(frozen=True)
class GraphDataset:
    """A named collection of graphs sharing one feature space."""

    name: str
    graphs: tuple[Graph, ...]
    feature_mode: str | None = None
    n_max: int = field(default=0)

    def __post_init__(self):
        graphs = tuple(self.graphs)
        object.__setattr__(self, "graphs", graphs)
        if graphs:
            dims = {g.feature_dim for g in graphs}
            if len(dims) > 1:
                raise ConfigError(
                    f"inconsistent feature dims across dataset: {sorted(dims)}")
            biggest = max(g.num_nodes for g in graphs)
            if self.n_max == 0:
                object.__setattr__(self, "n_max", biggest)
            elif self.n_max < biggest:
                raise SizeError(
                    f"n_max={self.n_max} smaller than largest graph ({biggest})")

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, index: int) -> Graph:
        return self.graphs[index]

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].feature_dim if self.graphs else 0

    def label_counts(self) -> dict[int, int]:
        counts = {0: 0, 1: 0}
        for g in self.graphs:
            counts[g.label] += 1
        return counts

    def provenance_counts(self) -> dict[Provenance, int]:
        counts = {p: 0 for p in Provenance}
        for g in self.graphs:
            counts[g.provenance] += 1
        return counts

    def majority_label(self) -> int:
        counts = self.label_counts()
        return 0 if counts[0] >= counts[1] else 1


@dataclass(frozen=True)
class PaddedBatch:
    """Dense zero-padded stacks for a list of graphs.

    Shapes: adjacency ``(B, n, n)``, features ``(B, n, h)``, degrees
    ``(B, n, 1)``, node_mask ``(B, n)``, labels ``(B,)``. Padded rows are
    exactly zero everywhere and the mask marks real nodes with 1.
    """

    adjacency_stack: Array
    feature_stack: Array
    degree_stack: Array
    node_mask: Array
    labels: Array

    @property
    def size(self) -> int:
        return self.adjacency_stack.shape[0]

    @property
    def n_max(self) -> int:
        return self.adjacency_stack.shape[1]


def pad_batch(graphs: Sequence[Graph], n_max: int) -> PaddedBatch:
    """Stack graphs into dense padded arrays of node capacity ``n_max``."""
    batch = len(graphs)
    h = graphs[0].feature_dim if batch else 0
    adjacency = np.zeros((batch, n_max, n_max))
    features = np.zeros((batch, n_max, h))
    degrees = np.zeros((batch, n_max, 1))
    mask = np.zeros((batch, n_max))
    labels = np.zeros(batch, dtype=np.int64)
    for i, g in enumerate(graphs):
        n = g.num_nodes
        if n > n_max:
            raise SizeError(
                f"graph {i} has {n} nodes, exceeding n_max={n_max}")
        if g.feature_dim != h:
            raise ConfigError(
                f"graph {i} feature dim {g.feature_dim} != {h}")
        adjacency[i, :n, :n] = g.adjacency
        features[i, :n, :] = g.node_features
        degrees[i, :n, 0] = g.degrees
        mask[i, :n] = 1.0
        labels[i] = g.label
    return PaddedBatch(adjacency_stack=adjacency, feature_stack=features,
                       degree_stack=degrees, node_mask=mask, labels=labels)


def stratified_kfold(dataset: GraphDataset, k: int,
                     seed: int) -> list[tuple[Array, Array]]:
    """Deterministic stratified k-fold split over original graphs.

    Returns ``k`` pairs of sorted index arrays ``(train, test)``. Each class is
    shuffled with its own view of the seeded generator and dealt round-robin,
    so test folds preserve the class ratio within one sample per class.
    """
    if k < 2:
        raise ConfigError(f"k must be at least 2, got {k}")
    for i, g in enumerate(dataset.graphs):
        if g.provenance is Provenance.GENERATED:
            raise ConfigError(
                f"graph {i} is GENERATED; folds must be built before augmentation")
    labels = np.array([g.label for g in dataset.graphs])
    rng = np.random.default_rng(seed)
    fold_members: list[list[int]] = [[] for _ in range(k)]
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise ConfigError(
                f"class {cls} has {len(members)} graphs, fewer than k={k}")
        rng.shuffle(members)
        for fold in range(k):
            fold_members[fold].extend(members[fold::k])
    splits = []
    everything = set(range(len(dataset)))
    for fold in range(k):
        test = np.array(sorted(fold_members[fold]), dtype=np.int64)
        train = np.array(sorted(everything - set(fold_members[fold])),
                         dtype=np.int64)
        splits.append((train, test))
    return splits
