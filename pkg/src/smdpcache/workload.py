"""File catalog and request-stream generation.

File indices are zero-based throughout the package: file ``0`` is the most
popular type.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class AttributeRanges:
    """Closed intervals that per-file attributes are drawn from uniformly."""

    lifetime: tuple[float, float] = (10.0, 30.0)
    size: tuple[float, float] = (100.0, 1000.0)
    importance: tuple[float, float] = (0.1, 0.9)

    def validate(self):
        for name in ("lifetime", "size", "importance"):
            low, high = getattr(self, name)
            if low <= 0 or high <= 0:
                raise ValueError(f"{name} range must be positive, got ({low}, {high})")
            if low > high:
                raise ValueError(f"{name} range is inverted: ({low}, {high})")
        if self.importance[1] > 1.0:
            raise ValueError("importance must lie in [0, 1]")


def zipf_probabilities(n_files: int, eta: float) -> np.ndarray:
    """Request probability of each file rank under a Zipf law with skew ``eta``."""
    if n_files < 1:
        raise ValueError("need at least one file")
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    weights = 1.0 / np.arange(1, n_files + 1, dtype=np.float64) ** eta
    return weights / weights.sum()


@dataclass
class FileCatalog:
    lifetime: np.ndarray
    size: np.ndarray
    importance: np.ndarray
    zipf_eta: float
    request_probs: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lifetime = np.asarray(self.lifetime, dtype=np.float64)
        self.size = np.asarray(self.size, dtype=np.float64)
        self.importance = np.asarray(self.importance, dtype=np.float64)
        n = self.lifetime.shape[0]
        if n < 1 or self.size.shape != (n,) or self.importance.shape != (n,):
            raise ValueError("attribute vectors must be non-empty and equally long")
        if (self.lifetime <= 0).any() or (self.size <= 0).any():
            raise ValueError("lifetimes and sizes must be positive")
        if ((self.importance < 0) | (self.importance > 1)).any():
            raise ValueError("importance must lie in [0, 1]")
        self.request_probs = zipf_probabilities(n, self.zipf_eta)
        self._cdf = np.cumsum(self.request_probs)

    @property
    def n_files(self) -> int:
        return self.lifetime.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# zipf_eta={self.zipf_eta!r}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index", "lifetime", "size", "importance"])
        for f in range(self.n_files):
            writer.writerow(
                [f, repr(float(self.lifetime[f])), repr(float(self.size[f])),
                 repr(float(self.importance[f]))]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FileCatalog":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("# zipf_eta="):
            raise ValueError("catalog text must start with a '# zipf_eta=' line")
        eta = float(lines[0].split("=", 1)[1])
        rows = list(csv.DictReader(lines[1:]))
        rows.sort(key=lambda r: int(r["index"]))
        if [int(r["index"]) for r in rows] != list(range(len(rows))):
            raise ValueError("catalog indices must be 0..F-1 without gaps")
        return cls(
            lifetime=[float(r["lifetime"]) for r in rows],
            size=[float(r["size"]) for r in rows],
            importance=[float(r["importance"]) for r in rows],
            zipf_eta=eta,
        )

    def save(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "FileCatalog":
        return cls.from_csv(Path(path).read_text())


def generate_catalog(
    n_files: int,
    seed,
    ranges: AttributeRanges | None = None,
    eta: float = 0.8,
) -> FileCatalog:
    """Draw per-file lifetime, size and importance uniformly from ``ranges``."""
    if n_files < 1:
        raise ValueError("need at least one file")
    ranges = ranges or AttributeRanges()
    ranges.validate()
    rng = np.random.default_rng(seed)
    lifetime = rng.uniform(*ranges.lifetime, size=n_files)
    size = rng.uniform(*ranges.size, size=n_files)
    importance = rng.uniform(*ranges.importance, size=n_files)
    return FileCatalog(lifetime=lifetime, size=size, importance=importance, zipf_eta=eta)


def sample_request(catalog: FileCatalog, rng: np.random.Generator) -> int:
    """Draw one file index with probability ``catalog.request_probs``."""
    u = rng.random() * catalog._cdf[-1]
    return min(int(np.searchsorted(catalog._cdf, u, side="right")), catalog.n_files - 1)


class RequestStream:
    """Poisson arrivals of Zipf-distributed requests.

    The stream owns its generator; the sequence of (time, file) pairs depends
    only on the seed, never on how the consumer reacts to it.
    """

    def __init__(self, catalog: FileCatalog, rate: float, seed):
        if rate <= 0:
            raise ValueError(f"request rate must be positive, got {rate}")
        self.catalog = catalog
        self.rate = float(rate)
        self.rng = np.random.default_rng(seed)
        self.next_arrival_time = 0.0

    def sample_interarrival(self) -> float:
        gap = self.rng.exponential(1.0 / self.rate)
        # exponential() can return exactly 0.0 with vanishing probability
        while gap <= 0.0:
            gap = self.rng.exponential(1.0 / self.rate)
        return gap

    def next_request(self) -> tuple[float, int]:
        self.next_arrival_time += self.sample_interarrival()
        return self.next_arrival_time, sample_request(self.catalog, self.rng)

    def take(self, count: int) -> tuple[np.ndarray, np.ndarray]:
        times = np.empty(count)
        files = np.empty(count, dtype=np.int64)
        for j in range(count):
            times[j], files[j] = self.next_request()
        return times, files


def sample_interarrival(stream: RequestStream) -> float:
    return stream.sample_interarrival()
