"""Pseudo-domains: style-embedding clusters with a rolling performance window."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Literal

import numpy as np

TaskKind = Literal["classification", "regression"]


class RegistryError(ValueError):
    pass


def compute_radius(center: np.ndarray, members: np.ndarray) -> float:
    """Twice the mean Euclidean distance of the members to the center."""
    m = np.asarray(members, dtype=np.float64)
    if m.ndim == 1:
        m = m[None]
    if len(m) == 0:
        raise RegistryError("radius needs at least one member")
    return float(2.0 * np.mean(np.linalg.norm(m - np.asarray(center), axis=1)))


@dataclass
class PseudoDomain:
    id: int
    center: np.ndarray
    radius: float
    created_at: int = 0
    window_size: int = 5
    perf_window: deque = field(default=None)
    completed: bool = False

    def __post_init__(self):
        if self.radius < 0:
            raise RegistryError("radius must be non-negative")
        if not np.all(np.isfinite(self.center)):
            raise RegistryError("center must be finite")
        if self.perf_window is None:
            self.perf_window = deque(maxlen=self.window_size)

    @property
    def mean_performance(self) -> float | None:
        if not self.perf_window:
            return None
        return float(np.mean(self.perf_window))

    def update_performance(self, value: float) -> None:
        if not np.isfinite(value):
            raise RegistryError(f"performance value must be finite, got {value}")
        self.perf_window.append(float(value))

    def is_complete(self, kind: TaskKind, k: float) -> bool:
        """Full window and mean beyond ``k`` in the task's good direction.

        Completion is sticky: once reached it is never revoked.
        """
        if self.completed:
            return True
        if len(self.perf_window) < self.window_size:
            return False
        p = self.mean_performance
        done = p > k if kind == "classification" else p < k
        if done:
            self.completed = True
        return done

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "center": self.center.tolist(),
            "radius": self.radius,
            "created_at": self.created_at,
            "window": list(self.perf_window),
            "completed": self.completed,
        }


class PseudoDomainRegistry:
    """Ordered set of pseudo-domains; ids are handed out once and never reused."""

    def __init__(self, window_size: int = 5):
        if window_size < 1:
            raise RegistryError("window size P must be at least 1")
        self.window_size = window_size
        self.domains: dict[int, PseudoDomain] = {}
        self._next_id = 0
        self._centers = np.zeros((0, 0))
        self._ids: list[int] = []

    def __len__(self) -> int:
        return len(self.domains)

    def __contains__(self, pd_id: int) -> bool:
        return pd_id in self.domains

    def __getitem__(self, pd_id: int) -> PseudoDomain:
        return self.domains[pd_id]

    def __iter__(self):
        return iter(self.domains.values())

    def create_domain(self, members: np.ndarray, step: int = 0) -> PseudoDomain:
        m = np.asarray(members, dtype=np.float64)
        if m.ndim == 1:
            m = m[None]
        if len(m) == 0:
            raise RegistryError("a pseudo-domain needs at least one member")
        center = m.mean(axis=0)
        pd = PseudoDomain(
            id=self._next_id,
            center=center,
            radius=compute_radius(center, m),
            created_at=step,
            window_size=self.window_size,
        )
        self._next_id += 1
        self.domains[pd.id] = pd
        self._ids = list(self.domains)
        self._centers = np.stack([d.center for d in self.domains.values()])
        return pd

    def assign(self, emb: np.ndarray) -> int | None:
        """Nearest center, kept only if strictly inside that domain's radius.

        The nearest domain is chosen first and the radius test applied after;
        a farther domain whose radius would cover ``emb`` is not considered.
        """
        if not self.domains:
            return None
        dist = np.linalg.norm(self._centers - np.asarray(emb), axis=1)
        j = int(np.argmin(dist))  # first minimum == lowest id
        pd = self.domains[self._ids[j]]
        return pd.id if dist[j] < pd.radius else None

    def assign_many(self, embs: np.ndarray) -> list[int | None]:
        return [self.assign(e) for e in np.asarray(embs)]

    def set_radius(self, pd_id: int, members: np.ndarray) -> None:
        pd = self.domains[pd_id]
        pd.radius = compute_radius(pd.center, members)

    def to_dict(self) -> dict:
        return {"domains": [d.to_dict() for d in self.domains.values()]}


def domains_from_dicts(items: Iterable[dict], window_size: int = 5) -> PseudoDomainRegistry:
    reg = PseudoDomainRegistry(window_size)
    for it in items:
        pd = PseudoDomain(
            id=it["id"],
            center=np.asarray(it["center"], dtype=np.float64),
            radius=float(it["radius"]),
            created_at=it.get("created_at", 0),
            window_size=window_size,
            completed=it.get("completed", False),
        )
        pd.perf_window.extend(it.get("window", []))
        reg.domains[pd.id] = pd
        reg._next_id = max(reg._next_id, pd.id + 1)
    if reg.domains:
        reg._ids = list(reg.domains)
        reg._centers = np.stack([d.center for d in reg.domains.values()])
    return reg
