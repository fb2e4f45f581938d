"""Request-driven caching environment.

Two decision-epoch regimes share one implementation:

* ``slot=None`` -- semi-Markov: one epoch per request arrival, the sojourn
  ``tau`` is the interarrival time.
* ``slot=delta`` -- slotted MDP ablation: requests queue up and the head of
  the queue is decided at the next slot boundary; ``tau`` is always ``delta``.
  A cached copy keeps the generation time of its arrival, so it ages while
  the request waits.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from smdpcache import kernels
from smdpcache.cache import CacheState, utility
from smdpcache.workload import FileCatalog, RequestStream

SKIP = 0
CACHE = 1


class CorruptedStateError(RuntimeError):
    pass


@dataclass
class StateVector:
    mem_free: float
    cached_flags: np.ndarray
    utilities: np.ndarray
    request_counts: np.ndarray
    importances: np.ndarray
    lifetimes: np.ndarray
    sizes: np.ndarray
    requested: int
    flat: np.ndarray = field(repr=False)

    @property
    def n_files(self) -> int:
        return self.cached_flags.shape[0]

    @property
    def requested_one_hot(self) -> np.ndarray:
        out = np.zeros(self.n_files)
        out[self.requested] = 1.0
        return out


def encode_state(
    cache: CacheState,
    counts: np.ndarray,
    catalog: FileCatalog,
    requested: int,
    t: float,
    window: int,
    lifetime_scale: float,
    size_scale: float,
) -> StateVector:
    """Observation at time ``t`` for pending request ``requested``.

    ``counts`` holds per-file request counts over the last ``window``
    processed requests. The flat vector is ``[mem, b, y, d/N, i, l/lmax,
    z/zmax, onehot]`` with length ``7F + 1``.
    """
    util = cache.utilities(t)
    mem = cache.mem_free()
    flat = kernels.encode_state(
        mem, cache.present, util, counts.astype(np.float64), catalog.importance,
        catalog.lifetime, catalog.size, requested, float(window),
        float(lifetime_scale), float(size_scale),
    )
    return StateVector(
        mem_free=mem,
        cached_flags=cache.present.astype(np.int64),
        utilities=util,
        request_counts=counts.copy(),
        importances=catalog.importance,
        lifetimes=catalog.lifetime,
        sizes=catalog.size,
        requested=int(requested),
        flat=flat,
    )


def reward(cached_flags, request_counts, utilities, mem_free, w1=1.0, w2=1.0) -> float:
    """Popularity-weighted utility of cached files minus an idle-space penalty."""
    b = np.asarray(cached_flags, dtype=np.float64)
    d = np.asarray(request_counts, dtype=np.float64)
    y = np.asarray(utilities, dtype=np.float64)
    return float(w1 * np.sum(b * d * y) - w2 * mem_free)


def state_reward(state: StateVector, w1=1.0, w2=1.0) -> float:
    return reward(state.cached_flags, state.request_counts, state.utilities,
                  state.mem_free, w1, w2)


@dataclass
class StepOutcome:
    next_state: StateVector
    reward: float
    tau: float
    hit: bool
    served_utility: float
    time: float
    file: int
    action: int
    elapsed: float
    evicted: list = field(default_factory=list)
    arrival: float = math.nan


class CachingEnv:
    def __init__(
        self,
        catalog: FileCatalog,
        capacity: float,
        rate: float,
        seed,
        window: int = 100,
        w1: float = 1.0,
        w2: float = 1.0,
        k: float = 1.0,
        slot: float | None = None,
        lifetime_scale: float | None = None,
        size_scale: float | None = None,
        record: bool = False,
    ):
        if window < 1:
            raise ValueError("history window must hold at least one request")
        if slot is not None and slot <= 0:
            raise ValueError("slot length must be positive")
        self.catalog = catalog
        self.capacity = float(capacity)
        self.rate = float(rate)
        self.seed = seed
        self.window = int(window)
        self.w1, self.w2, self.k = float(w1), float(w2), float(k)
        self.slot = None if slot is None else float(slot)
        self.lifetime_scale = float(lifetime_scale or catalog.lifetime.max())
        self.size_scale = float(size_scale or catalog.size.max())
        self.record = record
        self.state_dim = 7 * catalog.n_files + 1
        self.stream = None
        self.state = None

    @property
    def slotted(self) -> bool:
        return self.slot is not None

    def reset(self) -> StateVector:
        self.stream = RequestStream(self.catalog, self.rate, self.seed)
        self.cache = CacheState(self.capacity, self.catalog, self.k)
        self.history = deque()
        self.counts = np.zeros(self.catalog.n_files, dtype=np.int64)
        self.trajectory = []
        self.epochs = 0
        arrival, f = self.stream.next_request()
        self.arrival = arrival
        self.time = self._boundary(arrival) if self.slotted else arrival
        self.pending = f
        self.state = self._observe()
        return self.state

    def _boundary(self, t: float) -> float:
        """First slot boundary at or after ``t``."""
        b = math.ceil(t / self.slot) * self.slot
        if b < t:
            b += self.slot
        return b

    def _observe(self) -> StateVector:
        self.cache.purge_expired(self.time)
        return encode_state(
            self.cache, self.counts, self.catalog, self.pending, self.time,
            self.window, self.lifetime_scale, self.size_scale,
        )

    def _remember(self, f: int):
        self.history.append(f)
        self.counts[f] += 1
        if len(self.history) > self.window:
            self.counts[self.history.popleft()] -= 1

    def step(self, action: int, priority: np.ndarray | None = None) -> StepOutcome:
        """Resolve the pending request, apply ``action`` on a miss, advance to the next epoch."""
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        t, f, arrived = self.time, self.pending, self.arrival
        hit = self.cache.lookup(f, t)
        served = 0.0
        evicted = []
        if hit:
            h = self.cache.freshness_of(f, t)
            served = utility(h, self.catalog.importance[f], self.k)
        elif action == CACHE and self.catalog.size[f] <= self.capacity:
            # the copy was fetched when the request arrived; in slotted mode
            # it has already aged by the time the decision lands
            evicted = self.cache.insert(f, t, priority, generated=arrived)
        self._remember(f)

        arrival, nxt = self.stream.next_request()
        if self.slotted:
            next_time = max(t + self.slot, self._boundary(arrival))
            tau = self.slot
        else:
            next_time = arrival
            tau = arrival - t
        self.arrival = arrival
        self.time = next_time
        self.pending = nxt
        self.state = self._observe()
        r = state_reward(self.state, self.w1, self.w2)
        self.epochs += 1
        out = StepOutcome(
            next_state=self.state, reward=r, tau=tau, hit=hit, served_utility=served,
            time=t, file=int(f), action=int(action), elapsed=next_time - t,
            evicted=evicted, arrival=arrived,
        )
        if self.record:
            self.trajectory.append((t, int(f), int(action), hit, r, tau))
        return out

    def step_slotted(self, action: int, priority: np.ndarray | None = None) -> StepOutcome:
        if not self.slotted:
            raise RuntimeError("environment was built without a slot length")
        return self.step(action, priority)

    def check_invariants(self):
        if self.cache.used > self.capacity * (1 + 1e-12):
            raise CorruptedStateError("cache holds more than its capacity")
        s = self.state
        if np.any((s.cached_flags == 0) & (s.utilities != 0)):
            raise CorruptedStateError("utility reported for an uncached file")
        if s.request_counts.sum() > self.window:
            raise CorruptedStateError("request history longer than the window")
        if s.flat.shape != (self.state_dim,):
            raise CorruptedStateError("state encoding has the wrong length")

    def write_trajectory(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "file", "action", "hit", "reward", "tau"])
            for t, f, a, hit, r, tau in self.trajectory:
                writer.writerow([repr(t), f, a, int(hit), repr(r), repr(tau)])


def step(env: CachingEnv, action: int) -> StepOutcome:
    return env.step(action)


def step_slotted(env: CachingEnv, action: int) -> StepOutcome:
    return env.step_slotted(action)
