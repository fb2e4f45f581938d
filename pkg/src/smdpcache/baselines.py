"""Comparison policies: PPO variants, classical heuristics and an offline upper bound."""

from __future__ import annotations

import dataclasses
import sys

import numpy as np

from smdpcache import kernels
from smdpcache.env import CACHE, SKIP, CachingEnv, StateVector, StepOutcome
from smdpcache.ppo import PpoAgent, PpoConfig, TrainResult


class Policy:
    """Decision interface shared by learned agents and heuristics."""

    name = "policy"
    learned = False

    def reset(self):
        pass

    def decide(self, state: StateVector, env: CachingEnv) -> int:
        raise NotImplementedError

    def eviction_priority(self, env: CachingEnv):
        """Per-file eviction keys (lowest evicted first), or None for utility order."""
        return None

    def observe(self, outcome: StepOutcome):
        pass


class NeverCache(Policy):
    name = "never-cache"

    def decide(self, state, env):
        return SKIP


class AlwaysCache(Policy):
    name = "always-cache"

    def decide(self, state, env):
        return CACHE


class GreedyUtility(Policy):
    """Cache when the newcomer is worth more than the cheapest copy it would displace."""

    name = "greedy-utility"

    def decide(self, state, env):
        f = state.requested
        cat = env.catalog
        victims = kernels.select_victims(
            env.cache.present, state.utilities, cat.size, env.capacity, cat.size[f]
        )
        if victims.size == 0:
            return CACHE
        return CACHE if cat.importance[f] > state.utilities[victims].min() else SKIP


class Lru(Policy):
    name = "lru"

    def reset(self):
        self.last_use = None

    def decide(self, state, env):
        return CACHE

    def eviction_priority(self, env):
        if self.last_use is None:
            self.last_use = np.zeros(env.catalog.n_files)
        return self.last_use.copy()

    def observe(self, outcome):
        if self.last_use is None:
            self.last_use = np.zeros(outcome.next_state.n_files)
        if outcome.hit or outcome.action == CACHE:
            self.last_use[outcome.file] = outcome.time


class Lfu(Policy):
    name = "lfu"

    def reset(self):
        self.freq = None

    def decide(self, state, env):
        return CACHE

    def eviction_priority(self, env):
        if self.freq is None:
            self.freq = np.zeros(env.catalog.n_files)
        # the pending request already counts towards its own file
        freq = self.freq.copy()
        freq[env.pending] += 1
        return freq

    def observe(self, outcome):
        if self.freq is None:
            self.freq = np.zeros(outcome.next_state.n_files)
        self.freq[outcome.file] += 1


HEURISTICS = {
    "never-cache": NeverCache,
    "always-cache": AlwaysCache,
    "greedy-utility": GreedyUtility,
    "lru": Lru,
    "lfu": Lfu,
}


def heuristic(kind: str) -> Policy:
    try:
        policy = HEURISTICS[kind.lower()]()
    except KeyError:
        raise ValueError(f"unknown heuristic {kind!r}; choose from {sorted(HEURISTICS)}") from None
    policy.reset()
    return policy


class PpoPolicy(Policy):
    """A PPO learner; ``slot`` set means it is trained and run on slotted epochs."""

    learned = True

    def __init__(self, config: PpoConfig | None = None, slot: float | None = None, name="ppo"):
        self.config = config or PpoConfig()
        self.slot = slot
        self.name = name
        self.agent = None

    def fit(self, env: CachingEnv, total_steps: int, seed=None) -> TrainResult:
        if (env.slot is None) != (self.slot is None):
            raise ValueError("environment epoch regime does not match the policy")
        self.agent = PpoAgent(env.state_dim, self.config, seed)
        return self.agent.train(env, total_steps)

    def decide(self, state, env):
        if self.agent is None:
            raise RuntimeError("policy has not been trained")
        return self.agent.decide(state)


def enhanced_ppo(config: PpoConfig | None = None) -> PpoPolicy:
    return PpoPolicy(config, name="ppo")


def uniform_ppo(config: PpoConfig | None = None) -> PpoPolicy:
    """Same learner with uniform replay sampling and unit importance weights."""
    cfg = dataclasses.replace(config or PpoConfig(), alpha=0.0, beta_start=0.0, beta_end=0.0)
    return PpoPolicy(cfg, name="uniform-ppo")


def slotted_mdp_agent(config: PpoConfig | None = None, slot: float = 1.0) -> PpoPolicy:
    if slot <= 0:
        raise ValueError("slot length must be positive")
    return PpoPolicy(config, slot=slot, name="mdp-ppo")


def make_policy(name: str, config: PpoConfig | None = None, slot: float = 1.0) -> Policy:
    name = name.lower()
    if name == "ppo":
        return enhanced_ppo(config)
    if name == "uniform-ppo":
        return uniform_ppo(config)
    if name == "mdp-ppo":
        return slotted_mdp_agent(config, slot)
    return heuristic(name)


POLICY_NAMES = ["ppo", "uniform-ppo", "mdp-ppo", *HEURISTICS]


# ---------------------------------------------------------------- offline bound


def clairvoyant_hits(catalog, capacity: float, times, files, k: float = 1.0,
                     generated=None) -> int:
    """Most hits any cache/skip decision sequence can earn on a known trace.

    Exhaustive search over decisions at every miss (hits leave the cache
    untouched), memoised on the cache contents. Eviction follows the same
    utility order as the live cache. ``generated`` gives the fetch time of
    each request's copy (slotted traces); it defaults to ``times``.
    Only practical on small traces.
    """
    times = np.asarray(times, dtype=np.float64)
    files = np.asarray(files, dtype=np.int64)
    fetched = times if generated is None else np.asarray(generated, dtype=np.float64)
    n = catalog.n_files
    lifetime, importance, sizes = catalog.lifetime, catalog.importance, catalog.size
    memo = {}

    def arrays(contents):
        present = np.zeros(n, dtype=np.bool_)
        gen = np.zeros(n)
        for f, g in contents:
            present[f] = True
            gen[f] = g
        return present, gen

    def best(j, contents):
        if j == times.shape[0]:
            return 0
        key = (j, contents)
        if key in memo:
            return memo[key]
        t, f = times[j], int(files[j])
        live = tuple((g_f, g) for g_f, g in contents if (t - g) / lifetime[g_f] < 1.0)
        if any(g_f == f for g_f, _ in live):
            value = 1 + best(j + 1, live)
        else:
            value = best(j + 1, live)
            g_new = float(fetched[j])
            if sizes[f] <= capacity and (t - g_new) / lifetime[f] < 1.0:
                present, gen = arrays(live)
                util = kernels.utilities(t, present, gen, lifetime, importance, k)
                victims = set(int(v) for v in kernels.select_victims(
                    present, util, sizes, capacity, sizes[f]))
                kept = tuple(sorted(
                    [(g_f, g) for g_f, g in live if g_f not in victims] + [(f, g_new)]
                ))
                value = max(value, best(j + 1, kept))
        memo[key] = value
        return value

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * times.shape[0] + 100))
    try:
        return best(0, ())
    finally:
        sys.setrecursionlimit(limit)
