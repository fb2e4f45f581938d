"""Experiment configuration, evaluation protocol, sweeps and CSV export."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from smdpcache.baselines import POLICY_NAMES, make_policy
from smdpcache.env import CachingEnv
from smdpcache.ppo import PpoConfig
from smdpcache.workload import AttributeRanges, generate_catalog

OUTPUT_ENV_VAR = "SMDPCACHE_OUTPUT_DIR"

RESULT_COLUMNS = [
    "experiment", "seed", "eta", "lambda", "M", "policy", "hit_count",
    "total_utility", "training_steps",
]


@dataclass
class ExperimentConfig:
    experiment: str = "run"
    n_files: int = 50
    zipf_eta: float = 0.8
    lifetime_range: tuple = (10.0, 30.0)
    size_range: tuple = (100.0, 1000.0)
    importance_range: tuple = (0.1, 0.9)
    request_rate: float = 0.2
    capacity: float = 10000.0
    utility_k: float = 1.0
    window: int = 100
    w1: float = 1.0
    w2: float = 1.0
    slot: float = 1.0
    policy: str = "ppo"
    train_steps: int = 20000
    eval_requests: int = 1000
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "results"
    workers: int = 1
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        for name in ("lifetime_range", "size_range", "importance_range"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))
        self.seeds = [int(s) for s in self.seeds]
        if isinstance(self.ppo, dict):
            self.ppo = PpoConfig(**self.ppo)
        if self.policy not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.policy!r}; choose from {POLICY_NAMES}")
        if self.eval_requests < 0 or self.train_steps < 0:
            raise ValueError("step budgets must be non-negative")
        self.ranges.validate()

    @property
    def ranges(self) -> AttributeRanges:
        return AttributeRanges(self.lifetime_range, self.size_range, self.importance_range)

    @property
    def slotted(self) -> bool:
        return self.policy == "mdp-ppo"

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        for name in ("lifetime_range", "size_range", "importance_range"):
            d[name] = list(d[name])
        d["seeds"] = list(self.seeds)
        d["ppo"] = self.ppo.to_dict()
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# symbols from the parameter table, accepted as config keys
TOP_ALIASES = {
    "F": "n_files", "M": "capacity", "lambda": "request_rate", "eta": "zipf_eta",
    "l": "lifetime_range", "z": "size_range", "i": "importance_range",
}
PPO_ALIASES = {"gamma": "gamma", "alpha": "alpha", "batch_size": "batch_size",
               "Lambda": "buffer_size", "buffer_size": "buffer_size"}


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build a config, rejecting any key it does not know."""
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    ppo_fields = {f.name for f in dataclasses.fields(PpoConfig)}
    kwargs, ppo = {}, {}
    for key, value in raw.items():
        if key == "ppo":
            if not isinstance(value, dict):
                raise ValueError("'ppo' must be a mapping")
            unknown = set(value) - ppo_fields
            if unknown:
                raise ValueError(f"unknown ppo config keys: {sorted(unknown)}")
            ppo.update(value)
        elif key == "beta":
            start, end = (value, value) if np.isscalar(value) else value
            ppo["beta_start"], ppo["beta_end"] = float(start), float(end)
        elif key in TOP_ALIASES:
            kwargs[TOP_ALIASES[key]] = value
        elif key in PPO_ALIASES:
            ppo[PPO_ALIASES[key]] = value
        elif key in top:
            kwargs[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    kwargs["ppo"] = PpoConfig(**ppo)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ValueError("config file must hold a mapping")
    return config_from_dict(raw)


def resolve_output_dir(config: ExperimentConfig) -> Path:
    return Path(os.environ.get(OUTPUT_ENV_VAR) or config.output_dir)


# ---------------------------------------------------------------- single runs


@dataclass
class EvaluationReport:
    experiment: str
    seed: int
    eta: float
    lam: float
    capacity: float
    policy: str
    hit_count: int
    total_utility: float
    training_steps: int
    eval_requests: int
    fingerprint: str
    reward_curve: np.ndarray | None = None
    rewards: np.ndarray | None = None
    trajectory: list | None = None

    def row(self) -> list:
        return [self.experiment, self.seed, repr(float(self.eta)), repr(float(self.lam)),
                repr(float(self.capacity)), self.policy, self.hit_count,
                repr(float(self.total_utility)), self.training_steps]


def seed_streams(seed: int):
    """Independent streams for catalog, training env, agent and evaluation env."""
    catalog, train_env, agent, eval_env = np.random.SeedSequence(seed).spawn(4)
    return catalog, train_env, agent, eval_env


def build_env(config: ExperimentConfig, catalog, seed, slotted: bool, record=False) -> CachingEnv:
    return CachingEnv(
        catalog, config.capacity, config.request_rate, seed,
        window=config.window, w1=config.w1, w2=config.w2, k=config.utility_k,
        slot=config.slot if slotted else None,
        lifetime_scale=config.lifetime_range[1], size_scale=config.size_range[1],
        record=record,
    )


def evaluate(env: CachingEnv, policy, n_requests: int):
    """Run ``policy`` frozen for ``n_requests`` epochs from a cold cache."""
    policy.reset()
    state = env.reset()
    hits, total = 0, 0.0
    outcomes = []
    for _ in range(n_requests):
        out = env.step(policy.decide(state, env), policy.eviction_priority(env))
        policy.observe(out)
        hits += out.hit
        total += out.served_utility
        outcomes.append(out)
        state = out.next_state
    return hits, total, outcomes


def run_single(config: ExperimentConfig, seed: int, policy_name: str | None = None):
    """Train (if learned) and evaluate one policy on one seed."""
    name = policy_name or config.policy
    catalog_seed, train_seed, agent_seed, eval_seed = seed_streams(seed)
    catalog = generate_catalog(config.n_files, catalog_seed, config.ranges, config.zipf_eta)
    policy = make_policy(name, config.ppo, config.slot)
    slotted = name == "mdp-ppo"
    curve = rewards = None
    steps = 0
    if policy.learned:
        train_env = build_env(config, catalog, train_seed, slotted)
        result = policy.fit(train_env, config.train_steps, agent_seed)
        curve, rewards = result.moving_average, result.rewards
        steps = config.train_steps
    eval_env = build_env(config, catalog, eval_seed, slotted, record=True)
    hits, total, _ = evaluate(eval_env, policy, config.eval_requests)
    return EvaluationReport(
        experiment=config.experiment, seed=seed, eta=config.zipf_eta,
        lam=config.request_rate, capacity=config.capacity, policy=name,
        hit_count=int(hits), total_utility=float(total), training_steps=steps,
        eval_requests=config.eval_requests, fingerprint=config.fingerprint(),
        reward_curve=curve, rewards=rewards, trajectory=eval_env.trajectory,
    )


def _run_job(job):
    config, seed, policy_name = job
    try:
        return run_single(config, seed, policy_name)
    except FloatingPointError as exc:
        raise type(exc)(f"{exc} [config {config.fingerprint()}, seed {seed}]") from exc


def _map(jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


def run_experiment(config: ExperimentConfig) -> list[EvaluationReport]:
    return _map([(config, s, None) for s in config.seeds], config.workers)


# ---------------------------------------------------------------- sweeps


SWEEP_AXES = {"eta": "zipf_eta", "lambda": "request_rate", "cache": "capacity",
              "cache_size": "capacity"}


@dataclass
class SweepResult:
    axis: str
    values: list
    reports: list  # one list of reports per value

    def table(self) -> list[dict]:
        rows = []
        for v, reps in zip(self.values, self.reports):
            hits = np.array([r.hit_count for r in reps], dtype=float)
            util = np.array([r.total_utility for r in reps])
            rows.append({
                "axis": self.axis, "value": v, "n": len(reps),
                "hit_mean": float(hits.mean()), "hit_std": float(hits.std(ddof=1)) if len(reps) > 1 else 0.0,
                "utility_mean": float(util.mean()),
                "utility_std": float(util.std(ddof=1)) if len(reps) > 1 else 0.0,
            })
        return rows

    def write_csv(self, path):
        rows = self.table()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["axis", "value", "n", "hit_mean", "hit_std", "utility_mean", "utility_std"])
            for r in rows:
                writer.writerow([r["axis"], repr(float(r["value"])), r["n"], repr(r["hit_mean"]),
                                 repr(r["hit_std"]), repr(r["utility_mean"]), repr(r["utility_std"])])


def run_sweep(base: ExperimentConfig, axis: str, values) -> SweepResult:
    values = [float(v) for v in values]
    if not values:
        raise ValueError("sweep needs at least one value")
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    field_name = SWEEP_AXES[axis]
    configs = [base.replace(**{field_name: v}, experiment=f"sweep-{axis}") for v in values]
    jobs = [(c, s, None) for c in configs for s in base.seeds]
    flat = _map(jobs, base.workers)
    per = len(base.seeds)
    return SweepResult(axis, values, [flat[i * per:(i + 1) * per] for i in range(len(values))])


# ---------------------------------------------------------------- convergence


def steps_to_threshold(curve, fraction: float = 0.9, tail: float = 0.1) -> int:
    """First step (1-based) at which ``curve`` reaches ``fraction`` of its plateau.

    The plateau is the mean of the last ``tail`` share of the curve. For a
    negative plateau the threshold sits the same relative distance below it.
    """
    curve = np.asarray(curve, dtype=np.float64)
    if curve.size == 0:
        raise ValueError("empty curve")
    k = max(1, int(math.ceil(tail * curve.size)))
    plateau = float(curve[-k:].mean())
    threshold = plateau - (1.0 - fraction) * abs(plateau)
    return int(np.argmax(curve >= threshold)) + 1


@dataclass
class ConvergenceResult:
    seeds: list
    enhanced_steps: list
    uniform_steps: list
    enhanced_curves: list
    uniform_curves: list

    @property
    def enhanced_wins(self) -> int:
        return sum(e < u for e, u in zip(self.enhanced_steps, self.uniform_steps))

    def rows(self):
        return [(s, e, u) for s, e, u in zip(self.seeds, self.enhanced_steps, self.uniform_steps)]


def _train_curve(job):
    config, seed, name = job
    catalog_seed, train_seed, agent_seed, _ = seed_streams(seed)
    catalog = generate_catalog(config.n_files, catalog_seed, config.ranges, config.zipf_eta)
    policy = make_policy(name, config.ppo, config.slot)
    env = build_env(config, catalog, train_seed, slotted=False)
    return policy.fit(env, config.train_steps, agent_seed).moving_average


def run_convergence_comparison(config: ExperimentConfig, fraction=0.9) -> ConvergenceResult:
    """Train enhanced and uniform-replay PPO on identical seeds and workloads."""
    jobs = [(config, s, name) for s in config.seeds for name in ("ppo", "uniform-ppo")]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            curves = list(pool.map(_train_curve, jobs))
    else:
        curves = [_train_curve(j) for j in jobs]
    enh, uni = curves[0::2], curves[1::2]
    return ConvergenceResult(
        seeds=list(config.seeds),
        enhanced_steps=[steps_to_threshold(c, fraction) for c in enh],
        uniform_steps=[steps_to_threshold(c, fraction) for c in uni],
        enhanced_curves=enh,
        uniform_curves=uni,
    )


# ---------------------------------------------------------------- MDP vs SMDP


def compare_mdp_smdp(config: ExperimentConfig, rates) -> dict:
    """Mean evaluation hits of the request-driven and slotted agents per request rate."""
    out = {}
    for lam in rates:
        cfg = config.replace(request_rate=float(lam), experiment="mdp-vs-smdp")
        jobs = [(cfg, s, name) for s in cfg.seeds for name in ("ppo", "mdp-ppo")]
        reps = _map(jobs, cfg.workers)
        out[float(lam)] = {"smdp": reps[0::2], "mdp": reps[1::2]}
    return out


# ---------------------------------------------------------------- export


def export_results(reports, path, config: ExperimentConfig | None = None,
                   trajectories: bool = False) -> Path:
    """Write ``results.csv``, per-run reward curves and the resolved config."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "results.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RESULT_COLUMNS)
            for r in reports:
                writer.writerow(r.row())
        for r in reports:
            stem = f"{r.experiment}_{r.policy}_eta{r.eta:g}_lam{r.lam:g}_M{r.capacity:g}_seed{r.seed}"
            if r.reward_curve is not None:
                write_curve(out / f"curve_{stem}.csv", r.reward_curve, r.rewards)
            if trajectories and r.trajectory is not None:
                with open(out / f"trajectory_{stem}.csv", "w", newline="") as fh:
                    writer = csv.writer(fh, lineterminator="\n")
                    writer.writerow(["time", "file", "action", "hit", "reward", "tau"])
                    for t, f, a, hit, rew, tau in r.trajectory:
                        writer.writerow([repr(t), f, a, int(hit), repr(rew), repr(tau)])
        if config is not None:
            payload = {"fingerprint": config.fingerprint(), "config": config.to_dict()}
            (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"could not write results under {out}: {exc}") from exc
    return out


def write_curve(path, moving, raw=None):
    """``step,reward,moving_average`` rows; ``reward`` is blank when not kept."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "reward", "moving_average"])
        for i, m in enumerate(moving):
            writer.writerow([i + 1, "" if raw is None else repr(float(raw[i])), repr(float(m))])


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

