"""Edge caching with semi-Markov PPO and attention-prioritised replay."""

from smdpcache._backend import BACKEND
from smdpcache.baselines import clairvoyant_hits, make_policy
from smdpcache.cache import CacheState, freshness, utility
from smdpcache.env import CACHE, SKIP, CachingEnv
from smdpcache.harness import ExperimentConfig, load_config, run_experiment
from smdpcache.ppo import PpoAgent, PpoConfig
from smdpcache.workload import FileCatalog, RequestStream, generate_catalog

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CACHE", "SKIP", "CacheState", "CachingEnv", "ExperimentConfig",
    "FileCatalog", "PpoAgent", "PpoConfig", "RequestStream", "clairvoyant_hits",
    "freshness", "generate_catalog", "load_config", "make_policy", "run_experiment",
    "utility",
]
