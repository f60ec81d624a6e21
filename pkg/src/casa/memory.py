"""Rehearsal memories.

:class:`BalancedMemory` keeps labelled samples balanced across pseudo-domains:
arrival of a new domain flags surplus entries of the older ones, flagged slots
are handed to under-quota domains, and a domain at quota replaces its own
entry closest in style to the newcomer.

:class:`ReservoirMemory` is the unbalanced store used by the baseline policies.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np


class RehearsalMemoryError(ValueError):
    pass


@dataclass
class MemoryEntry:
    sample: Any
    label: Any
    pseudo_domain: int
    embedding: np.ndarray | None = None
    flagged: bool = False


class _MemoryBase:
    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 1:
            raise RehearsalMemoryError("memory capacity M must be at least 1")
        self.capacity = capacity
        self.rng = rng
        self.entries: list[MemoryEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    def sample_batch(self, size: int) -> list[MemoryEntry]:
        """``size`` entries drawn uniformly with replacement."""
        if not self.entries:
            raise RehearsalMemoryError("cannot sample from an empty memory")
        idx = self.rng.integers(0, len(self.entries), size=size)
        return [self.entries[i] for i in idx]

    def _choose_base(self, base: Sequence[Any], count: int) -> list[int]:
        if count > self.capacity:
            raise RehearsalMemoryError(f"cannot initialize {count} entries into a memory of capacity {self.capacity}")
        if count > len(base):
            raise RehearsalMemoryError(f"base set has only {len(base)} items, {count} requested")
        return sorted(self.rng.choice(len(base), size=count, replace=False).tolist())

    def counts_by_domain(self) -> Counter:
        return Counter(e.pseudo_domain for e in self.entries)


class BalancedMemory(_MemoryBase):
    def init_from_base(
        self,
        base: Sequence[Any],
        labels: Sequence[Any],
        count: int,
        pseudo_domain: int = 0,
        embeddings: np.ndarray | None = None,
    ) -> None:
        picked = self._choose_base(base, count)
        self.entries = [
            MemoryEntry(base[i], labels[i], pseudo_domain, None if embeddings is None else embeddings[i])
            for i in picked
        ]

    def unflagged_counts(self) -> Counter:
        return Counter(e.pseudo_domain for e in self.entries if not e.flagged)

    def members(self, pd_id: int) -> list[MemoryEntry]:
        return [e for e in self.entries if e.pseudo_domain == pd_id]

    def on_new_domain(self, n_domains: int, new_domain: int | None = None) -> int:
        """Flag surplus entries of every older domain down to ``floor(M / D)``.

        Returns the number of entries newly flagged.
        """
        quota = self.capacity // n_domains
        by_domain: dict[int, list[int]] = {}
        for i, e in enumerate(self.entries):
            if not e.flagged and e.pseudo_domain != new_domain:
                by_domain.setdefault(e.pseudo_domain, []).append(i)
        flagged = 0
        for pd_id in sorted(by_domain):
            idx = by_domain[pd_id]
            excess = len(idx) - quota
            if excess > 0:
                for i in self.rng.choice(idx, size=excess, replace=False):
                    self.entries[i].flagged = True
                flagged += excess
        return flagged

    def insert(self, entry: MemoryEntry, n_domains: int, known: Callable[[int], bool] | None = None) -> int | None:
        """Insert ``entry``; returns the index it replaced, or ``None`` if appended."""
        if known is not None and not known(entry.pseudo_domain):
            raise RehearsalMemoryError(f"pseudo-domain {entry.pseudo_domain} is not registered")
        quota = math.ceil(self.capacity / n_domains)
        own = [i for i, e in enumerate(self.entries) if e.pseudo_domain == entry.pseudo_domain and not e.flagged]
        under_quota = len(own) < quota
        if not self.full and under_quota:
            self.entries.append(entry)
            return None
        flagged = [i for i, e in enumerate(self.entries) if e.flagged]
        if under_quota and flagged:
            j = int(self.rng.choice(flagged))
        elif own:
            j = self._nearest(entry, own)
        else:
            # nothing flagged and the domain owns nothing: take from the largest domain
            counts = self.unflagged_counts()
            largest = min(counts, key=lambda d: (-counts[d], d))
            j = self._nearest(entry, [i for i in range(len(self.entries)) if self.entries[i].pseudo_domain == largest])
        self.entries[j] = entry
        return j

    def _nearest(self, entry: MemoryEntry, candidates: list[int]) -> int:
        emb = np.stack([self.entries[i].embedding for i in candidates])
        d2 = np.sum((emb - entry.embedding) ** 2, axis=1)
        return candidates[int(np.argmin(d2))]


class ReservoirMemory(_MemoryBase):
    """Uniform reservoir over every labelled item offered, base set included."""

    def __init__(self, capacity: int, rng: np.random.Generator):
        super().__init__(capacity, rng)
        self.seen = 0

    def init_from_base(self, base: Sequence[Any], labels: Sequence[Any], count: int, pseudo_domain: int = 0,
                       embeddings: np.ndarray | None = None) -> None:
        picked = self._choose_base(base, count)
        self.entries = [
            MemoryEntry(base[i], labels[i], pseudo_domain, None if embeddings is None else embeddings[i])
            for i in picked
        ]
        # a uniform subset of the base set is what a reservoir over it would hold
        self.seen = len(base)

    def insert(self, entry: MemoryEntry) -> int | None:
        """Algorithm R step: returns the replaced index, ``None`` if appended, -1 if discarded."""
        self.seen += 1
        if not self.full:
            self.entries.append(entry)
            return None
        j = int(self.rng.integers(0, self.seen))
        if j < self.capacity:
            self.entries[j] = entry
            return j
        return -1
