"""Directed graphs, ordered-pair indexing and train/test pair splits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


class DomainError(ValueError):
    """Raised when an argument lies outside an operation's domain."""


@dataclass(frozen=True, eq=False)
class DirectedGraph:
    """Binary adjacency over ``p`` nodes; ``adj[i, j] == 1`` iff ``i -> j``."""

    adj: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adj, dtype=np.int8, copy=True)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise DomainError(f"adjacency must be square, got shape {adj.shape}")
        if adj.shape[0] < 1:
            raise DomainError("graph needs at least one node")
        if not np.isin(adj, (0, 1)).all():
            raise DomainError("adjacency entries must be 0 or 1")
        if np.any(np.diagonal(adj)):
            raise DomainError("self-loops are not allowed")
        adj.setflags(write=False)
        object.__setattr__(self, "adj", adj)

    @property
    def p(self) -> int:
        return self.adj.shape[0]

    @classmethod
    def empty(cls, p: int) -> "DirectedGraph":
        return cls(np.zeros((p, p), dtype=np.int8))

    @classmethod
    def from_edges(cls, p: int, edges: Iterable[tuple[int, int]]) -> "DirectedGraph":
        adj = np.zeros((p, p), dtype=np.int8)
        for i, j in edges:
            if not (0 <= i < p and 0 <= j < p):
                raise DomainError(f"edge ({i}, {j}) out of range for p={p}")
            adj[i, j] = 1
        return cls(adj)

    def edges(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.adj))]

    @property
    def n_edges(self) -> int:
        return int(self.adj.sum())

    def parents(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.adj[:, j])

    def children(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adj[i])

    def __eq__(self, other):
        if not isinstance(other, DirectedGraph):
            return NotImplemented
        return self.adj.shape == other.adj.shape and bool(np.array_equal(self.adj, other.adj))

    def __hash__(self):
        return hash((self.p, self.adj.tobytes()))

    def __repr__(self):
        return f"DirectedGraph(p={self.p}, edges={self.n_edges})"


def topological_order(g: DirectedGraph) -> np.ndarray:
    """Kahn's algorithm; raises ``DomainError`` if ``g`` has a cycle."""
    indeg = g.adj.sum(axis=0).astype(np.int64)
    ready = sorted(np.flatnonzero(indeg == 0).tolist())
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for c in np.flatnonzero(g.adj[v]):
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(int(c))
    if len(order) != g.p:
        raise DomainError("graph contains a directed cycle")
    return np.asarray(order, dtype=np.int64)


def is_acyclic(g: DirectedGraph) -> bool:
    try:
        topological_order(g)
    except DomainError:
        return False
    return True


# -- pair indexing -----------------------------------------------------------

def n_pairs(p: int) -> int:
    return p * (p - 1)


def linear_index(i: int, j: int, p: int) -> int:
    """Row-major index of the ordered pair ``(i, j)`` skipping the diagonal."""
    if not (0 <= i < p and 0 <= j < p):
        raise DomainError(f"pair ({i}, {j}) out of range for p={p}")
    if i == j:
        raise DomainError(f"self-pair ({i}, {i}) has no index")
    return i * (p - 1) + (j if j < i else j - 1)


def pair_of(k: int, p: int) -> tuple[int, int]:
    if not (0 <= k < n_pairs(p)):
        raise DomainError(f"pair index {k} out of range for p={p}")
    i, r = divmod(k, p - 1)
    return i, (r if r < i else r + 1)


def linear_indices(i, j, p: int) -> np.ndarray:
    """Vectorised :func:`linear_index` (no validation)."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    return i * (p - 1) + np.where(j < i, j, j - 1)


def pairs_of(ks, p: int) -> tuple[np.ndarray, np.ndarray]:
    ks = np.asarray(ks, dtype=np.int64)
    i, r = np.divmod(ks, p - 1)
    return i, np.where(r < i, r, r + 1)


def pairs_from_sources(sources: Iterable[int], p: int) -> np.ndarray:
    """All pair indices ``k(i, .)`` with ``i`` in ``sources``, ascending."""
    src = np.unique(np.asarray(list(sources), dtype=np.int64))
    if src.size and (src.min() < 0 or src.max() >= p):
        raise DomainError("source node out of range")
    if src.size == 0:
        return np.zeros(0, dtype=np.int64)
    return (src[:, None] * (p - 1) + np.arange(p - 1)[None, :]).ravel()


# -- closure -----------------------------------------------------------------

def transitive_closure(g: DirectedGraph) -> DirectedGraph:
    """Ancestral graph: ``i -> j`` iff a directed path of length >= 1 exists.

    Expands all rows' reachability frontiers at once, one matrix product per
    path length.  The diagonal is cleared even when ``g`` is cyclic.
    """
    a = g.adj.astype(bool)
    af = a.astype(np.float32)
    reach = a.copy()
    frontier = a.copy()
    while frontier.any():
        nxt = (frontier.astype(np.float32) @ af) > 0
        frontier = nxt & ~reach
        reach |= nxt
    np.fill_diagonal(reach, False)
    return DirectedGraph(reach.astype(np.int8))


# -- knowledge and splits ----------------------------------------------------

@dataclass(frozen=True)
class KnowledgeSet:
    """Labelled pairs: ``pairs[t]`` is a linear index, ``labels[t]`` in {0, 1}."""

    p: int
    pairs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).copy()
        labels = np.asarray(self.labels, dtype=np.int8).copy()
        if pairs.shape != labels.shape or pairs.ndim != 1:
            raise DomainError("pairs and labels must be 1-d and equal length")
        if np.unique(pairs).size != pairs.size:
            raise DomainError("duplicate pair indices in knowledge set")
        if not np.isin(labels, (0, 1)).all():
            raise DomainError("labels must be 0 or 1")
        if pairs.size and (pairs.min() < 0 or pairs.max() >= n_pairs(self.p)):
            raise DomainError("pair index out of range")
        pairs.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return int(self.pairs.size)

    @classmethod
    def from_graph(cls, g: DirectedGraph, pairs) -> "KnowledgeSet":
        pairs = np.asarray(pairs, dtype=np.int64)
        i, j = pairs_of(pairs, g.p)
        return cls(g.p, pairs, g.adj[i, j])

    def sources(self) -> np.ndarray:
        return np.unique(pairs_of(self.pairs, self.p)[0])

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.pairs.tolist(), self.labels.tolist()))

    def subset(self, mask) -> "KnowledgeSet":
        return KnowledgeSet(self.p, self.pairs[mask], self.labels[mask])


@dataclass(frozen=True)
class EvalSplit:
    """Training knowledge plus held-out test pairs with their true labels."""

    train: KnowledgeSet
    test_pairs: np.ndarray
    test_labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        test = np.asarray(self.test_pairs, dtype=np.int64)
        if np.intersect1d(test, self.train.pairs).size:
            raise DomainError("train and test pairs overlap")
        train_src = set(self.train.sources().tolist())
        test_src = set(pairs_of(test, self.train.p)[0].tolist())
        if train_src & test_src:
            raise DomainError("test pairs share a source node with training pairs")
        object.__setattr__(self, "test_pairs", test)
        object.__setattr__(self, "test_labels", np.asarray(self.test_labels, dtype=np.int8))


def make_split(g_star: DirectedGraph, intervened_sources: Iterable[int],
               test_sources: Iterable[int]) -> EvalSplit:
    """Full rows of ``g_star`` for intervened sources train; test rows are held out."""
    train_src = set(int(s) for s in intervened_sources)
    test_src = set(int(s) for s in test_sources)
    overlap = train_src & test_src
    if overlap:
        raise DomainError(f"source sets overlap on nodes {sorted(overlap)}")
    p = g_star.p
    train = KnowledgeSet.from_graph(g_star, pairs_from_sources(train_src, p))
    test = pairs_from_sources(test_src, p)
    ti, tj = pairs_of(test, p)
    return EvalSplit(train, test, g_star.adj[ti, tj])


def derive_seed(seed: int, *tags: int) -> int:
    """Independent child seed for a named stream of ``seed``."""
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(1)[0])


def random_source_split(p: int, train_fraction: float, seed: int,
                        test_fraction: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Partition nodes into intervened (train) and test sources."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(p)
    m = int(round(train_fraction * p))
    rest = perm[m:]
    if test_fraction is not None:
        rest = rest[: int(round(test_fraction * p))]
    return np.sort(perm[:m]), np.sort(rest)


def perturb_labels(ks: KnowledgeSet, rate: float, seed: int) -> KnowledgeSet:
    """Flip exactly ``round(rate * len(ks))`` labels chosen uniformly at random."""
    if not 0.0 <= rate <= 1.0:
        raise DomainError(f"rate must lie in [0, 1], got {rate}")
    m = int(round(rate * len(ks)))
    if m == 0:
        return ks
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(ks), size=m, replace=False)
    labels = ks.labels.copy()
    labels[idx] = 1 - labels[idx]
    return KnowledgeSet(ks.p, ks.pairs, labels)


# -- CSV interchange ---------------------------------------------------------

def write_edge_list(g: DirectedGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target"])
        w.writerows(g.edges())


def read_edge_list(path, p: int) -> DirectedGraph:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["source", "target"]:
        raise DomainError(f"{path}: expected header 'source,target'")
    edges = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise DomainError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        edges.append((int(row[0]), int(row[1])))
    return DirectedGraph.from_edges(p, edges)


def write_knowledge(ks: KnowledgeSet, path) -> None:
    i, j = pairs_of(ks.pairs, ks.p)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target", "label"])
        w.writerows(zip(i.tolist(), j.tolist(), ks.labels.tolist()))


def read_knowledge(path, p: int) -> KnowledgeSet:
    """Parse a ``source,target,label`` CSV, rejecting bad rows with their line number."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["source", "target", "label"]:
        raise DomainError(f"{path}: expected header 'source,target,label'")
    pairs, labels = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise DomainError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
        try:
            i, j, y = (int(c) for c in row)
        except ValueError:
            raise DomainError(f"{path}:{lineno}: non-integer field") from None
        if y not in (0, 1):
            raise DomainError(f"{path}:{lineno}: label must be 0 or 1, got {y}")
        if not (0 <= i < p and 0 <= j < p):
            raise DomainError(f"{path}:{lineno}: node id out of range for p={p}")
        if i == j:
            raise DomainError(f"{path}:{lineno}: self-pair ({i}, {j})")
        pairs.append(linear_index(i, j, p))
        labels.append(y)
    return KnowledgeSet(p, np.asarray(pairs, dtype=np.int64), np.asarray(labels, dtype=np.int8))
