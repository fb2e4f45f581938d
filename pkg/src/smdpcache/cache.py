"""Capacity-bounded cache with freshness tracking and utility-based eviction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from smdpcache import kernels
from smdpcache.workload import FileCatalog


class UncacheableError(ValueError):
    """Raised when a file is larger than the whole cache."""


def freshness(t: float, generation_time: float, lifetime: float) -> float:
    """Age of a copy divided by its lifetime; 1 or more means expired."""
    if t < generation_time:
        raise ValueError(f"time {t} precedes generation time {generation_time}")
    return (t - generation_time) / lifetime


def utility(h: float, importance: float, k: float = 1.0) -> float:
    """Value of serving a copy with freshness ``h``.

    Linear in importance, decays exponentially with age and reaches zero at
    expiry: ``i * (exp(k(1-h)) - 1) / (exp(k) - 1)``.
    """
    if h < 0:
        raise ValueError(f"freshness must be non-negative, got {h}")
    if k <= 0:
        raise ValueError("shape k must be positive")
    if h >= 1.0:
        return 0.0
    return importance * math.expm1(k * (1.0 - h)) / math.expm1(k)


@dataclass(frozen=True)
class CacheEntry:
    file_index: int
    generation_time: float
    size: float
    lifetime: float


class CacheState:
    """Cached copies keyed by file index.

    Sizes count against ``capacity`` in memory units. Entries are stored as
    dense per-file arrays so the numeric kernels can work on them directly.
    """

    def __init__(self, capacity: float, catalog: FileCatalog, k: float = 1.0):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = float(capacity)
        self.catalog = catalog
        self.k = float(k)
        n = catalog.n_files
        self.present = np.zeros(n, dtype=np.bool_)
        self.generation_time = np.zeros(n)

    def copy(self) -> "CacheState":
        other = CacheState.__new__(CacheState)
        other.capacity = self.capacity
        other.catalog = self.catalog
        other.k = self.k
        other.present = self.present.copy()
        other.generation_time = self.generation_time.copy()
        return other

    @property
    def used(self) -> float:
        return float(self.catalog.size[self.present].sum())

    @property
    def entries(self) -> list[CacheEntry]:
        cat = self.catalog
        return [
            CacheEntry(int(f), float(self.generation_time[f]), float(cat.size[f]),
                       float(cat.lifetime[f]))
            for f in np.flatnonzero(self.present)
        ]

    def __contains__(self, f) -> bool:
        return bool(self.present[f])

    def __len__(self) -> int:
        return int(self.present.sum())

    def mem_free(self) -> float:
        return (self.capacity - self.used) / self.capacity

    def freshness_of(self, f: int, t: float) -> float:
        return freshness(t, self.generation_time[f], self.catalog.lifetime[f])

    def utilities(self, t: float) -> np.ndarray:
        """Per-file utility at ``t``; zero for absent or expired files."""
        cat = self.catalog
        return kernels.utilities(
            t, self.present, self.generation_time, cat.lifetime, cat.importance, self.k
        )

    def expired(self, t: float) -> np.ndarray:
        return self.present & ((t - self.generation_time) / self.catalog.lifetime >= 1.0)

    def purge_expired(self, t: float) -> list[int]:
        gone = np.flatnonzero(self.expired(t))
        self.present[gone] = False
        return [int(f) for f in gone]

    def lookup(self, f: int, t: float) -> bool:
        """True on a hit; an expired copy counts as a miss and is dropped."""
        if not self.present[f]:
            return False
        if self.freshness_of(f, t) >= 1.0:
            self.present[f] = False
            return False
        return True

    def insert(self, f: int, t: float, priority: np.ndarray | None = None,
               generated: float | None = None) -> list[int]:
        """Cache a copy of ``f`` at time ``t``.

        The copy was fetched at ``generated`` (default ``t``). A copy that is
        already expired is not stored and nothing is evicted for it.
        Otherwise expired copies are dropped first, then live copies are
        evicted in ascending ``priority`` order (utility at ``t`` by default;
        ties go to the larger file, then the lower index) until ``f`` fits.
        Returns the evicted indices in eviction order.
        """
        size = self.catalog.size[f]
        if size > self.capacity:
            raise UncacheableError(f"file {f} (size {size}) exceeds capacity {self.capacity}")
        g = t if generated is None else float(generated)
        if g > t:
            raise ValueError("a copy cannot be fetched after it is stored")
        if (t - g) / self.catalog.lifetime[f] >= 1.0:
            return []
        expired = np.flatnonzero(self.expired(t))
        if expired.size:
            sizes = self.catalog.size[expired]
            expired = expired[np.lexsort((expired, -sizes))]
            self.present[expired] = False
        # a refreshed copy replaces the old one
        self.present[f] = False
        if priority is None:
            priority = self.utilities(t)
        victims = kernels.select_victims(
            self.present, np.asarray(priority, dtype=np.float64), self.catalog.size,
            self.capacity, size,
        )
        self.present[victims] = False
        self.present[f] = True
        self.generation_time[f] = g
        return [int(v) for v in expired] + [int(v) for v in victims]

    def snapshot(self, t: float | None = None) -> str:
        """Human-readable dump: one ``index,generation_time,size,lifetime`` line per entry."""
        lines = [f"# capacity={self.capacity!r} used={self.used!r}"]
        if t is not None:
            lines[0] += f" t={t!r}"
        lines.append("index,generation_time,size,lifetime")
        for e in self.entries:
            lines.append(f"{e.file_index},{e.generation_time!r},{e.size!r},{e.lifetime!r}")
        return "\n".join(lines) + "\n"


def lookup(cache: CacheState, f: int, t: float) -> bool:
    return cache.lookup(f, t)


def insert_with_eviction(cache: CacheState, f: int, t: float) -> list[int]:
    return cache.insert(f, t)


def mem_free(cache: CacheState) -> float:
    return cache.mem_free()
