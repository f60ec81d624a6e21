"""Outlier memory: unassigned samples waiting to crystallize into a new pseudo-domain."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np


@dataclass
class OutlierEntry:
    sample: Any
    embedding: np.ndarray
    age: int = 0


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.clip(d2, 0.0, None))


def _max_cliques(adj: np.ndarray, min_size: int) -> list[frozenset[int]]:
    """All cliques of maximum size (at least ``min_size``) in the graph ``adj``.

    Bron-Kerbosch with Tomita pivoting; branches that cannot beat the best
    size found so far are pruned.  Vertices are visited in decreasing degree
    order so the greedy "most neighbours first" group is found early.
    """
    n = len(adj)
    nbrs = [frozenset(np.flatnonzero(adj[i]).tolist()) for i in range(n)]
    best: list[frozenset[int]] = []
    best_size = min_size - 1

    def expand(r: frozenset[int], p: set[int], x: set[int]):
        nonlocal best, best_size
        if not p and not x:
            if len(r) > best_size:
                best, best_size = [r], len(r)
            elif len(r) == best_size:
                best.append(r)
            return
        if len(r) + len(p) < best_size:
            return
        pivot = max(p | x, key=lambda u: len(nbrs[u] & p))
        for v in sorted(p - nbrs[pivot], key=lambda u: -len(nbrs[u])):
            expand(r | {v}, p & nbrs[v], x & nbrs[v])
            p = p - {v}
            x = x | {v}

    expand(frozenset(), set(range(n)), set())
    return [c for c in best if len(c) >= min_size]


def find_group(embeddings: np.ndarray, t: float, min_group: int) -> list[int] | None:
    """Indices of the largest set whose pairwise distances are all ``< t``.

    Ties between equally large sets go to the one with the smallest sum of
    pairwise distances.  Returns ``None`` when no set of ``min_group`` exists.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if len(x) < max(min_group, 1):
        return None
    dist = pairwise_distances(x)
    adj = dist < t
    np.fill_diagonal(adj, False)
    cliques = _max_cliques(adj, max(min_group, 1))
    if not cliques:
        return None

    def spread(c):
        idx = sorted(c)
        return float(dist[np.ix_(idx, idx)].sum()), idx

    return min(spread(c) for c in cliques)[1]


class OutlierMemory:
    def __init__(self):
        self.entries: list[OutlierEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, sample, embedding: np.ndarray) -> None:
        self.entries.append(OutlierEntry(sample, np.asarray(embedding, dtype=np.float64)))

    def tick_and_evict(self, z: int) -> list[Any]:
        """Age every entry by one step and drop those that reach ``z``."""
        if z < 1:
            raise ValueError("z must be at least 1")
        kept, evicted = [], []
        for e in self.entries:
            e.age += 1
            (evicted if e.age >= z else kept).append(e)
        self.entries = kept
        return [e.sample for e in evicted]

    def discover(self, t: float, min_group: int = 4) -> list[OutlierEntry] | None:
        """Remove and return the densest qualifying group, or ``None``."""
        if t <= 0:
            raise ValueError("distance threshold t must be positive")
        if not self.entries:
            return None
        idx = find_group(np.stack([e.embedding for e in self.entries]), t, min_group)
        if idx is None:
            return None
        chosen = set(idx)
        group = [self.entries[i] for i in idx]
        self.entries = [e for i, e in enumerate(self.entries) if i not in chosen]
        return group
