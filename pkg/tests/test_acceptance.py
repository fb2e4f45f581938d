"""Acceptance criteria 1-9.

Each criterion is a function returning ``(passed, detail)``. Under pytest the
outcome is also recorded and printed as one line per criterion at the end of
the session; ``python tests/test_acceptance.py [n ...]`` runs them directly.
"""

from __future__ import annotations

import filecmp
import itertools
import math
import sys
import time
from decimal import Decimal, getcontext
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from smdpcache.baselines import NeverCache, clairvoyant_hits, make_policy  # noqa: E402
from smdpcache.cache import CacheState, freshness, utility  # noqa: E402
from smdpcache.env import reward  # noqa: E402
from smdpcache.harness import (  # noqa: E402
    build_env,
    compare_mdp_smdp,
    evaluate,
    export_results,
    load_config,
    run_convergence_comparison,
    run_experiment,
    run_sweep,
    seed_streams,
)
from smdpcache.nn import Mlp, log_softmax  # noqa: E402
from smdpcache.ppo import (  # noqa: E402
    advantage,
    clipped_surrogate,
    critic_loss_and_grads,
    n_step_return,
    one_step_return,
    policy_loss_and_grads,
)
from smdpcache.replay import (  # noqa: E402
    ReplayBuffer,
    Transition,
    importance_weights,
    sample_batch,
    sampling_probabilities,
)
from smdpcache.workload import FileCatalog, generate_catalog, zipf_probabilities  # noqa: E402

DESK = ROOT / "configs" / "desk.yaml"
N_RANDOM = 10_000
REL = 1e-9

getcontext().prec = 30
D = Decimal
_LN = [None] + [D(i).ln() for i in range(1, 41)]


def _rel_ok(got, want):
    got, want = float(got), float(want)
    return abs(got - want) <= REL * abs(want) or got == want


def _dexp(x):
    return D(x).exp()


def _dpow(x, y):
    # x**y for positive x; exp/ln is much faster than Decimal.__pow__
    return (D(y) * D(x).ln()).exp()


# ---------------------------------------------------------------- criterion 1


def criterion_1():
    rng = np.random.default_rng(2024)
    bad = {}

    def check(name, got, want):
        if not _rel_ok(got, want):
            bad.setdefault(name, (float(got), float(want)))

    for _ in range(N_RANDOM):
        # Zipf: exact rational-power sum in Decimal
        n = int(rng.integers(1, 41))
        eta = D(float(rng.uniform(0, 1)))
        w = [(-eta * _LN[f]).exp() for f in range(1, n + 1)]
        tot = sum(w)
        p = zipf_probabilities(n, float(eta))
        j = int(rng.integers(0, n))
        check("zipf_probabilities", p[j], w[j] / tot)

        g = float(rng.uniform(0, 100))
        life = float(rng.uniform(1, 50))
        t = g + float(rng.uniform(0, 1.5)) * life
        check("freshness", freshness(t, g, life), (D(t) - D(g)) / D(life))

        h = float(rng.uniform(0, 1.3))
        imp = float(rng.uniform(0.01, 1))
        k = float(rng.uniform(0.05, 5))
        want = D(0) if h >= 1 else D(imp) * (_dexp(D(k) * (1 - D(h))) - 1) / (_dexp(k) - 1)
        check("utility", utility(h, imp, k), want)

        nf = int(rng.integers(1, 9))
        sizes = rng.uniform(100, 1000, nf)
        cat = FileCatalog(np.full(nf, 20.0), sizes, np.full(nf, 0.5), 0.5)
        cap = float(sizes.sum() * rng.uniform(1.0, 3.0))
        cache = CacheState(cap, cat)
        cache.present[:] = rng.random(nf) < 0.5
        used = sum(D(float(s)) for s, b in zip(sizes, cache.present) if b)
        check("mem_free", cache.mem_free(), (D(cap) - used) / D(cap))

        b = rng.integers(0, 2, nf)
        d = rng.integers(0, 20, nf)
        y = rng.uniform(0, 1, nf)
        mem = float(rng.uniform(0, 1))
        w1, w2 = float(rng.uniform(0, 2)), float(rng.uniform(0, 2))
        want = D(w1) * sum(D(int(bi)) * D(int(di)) * D(float(yi)) for bi, di, yi in zip(b, d, y)) - D(w2) * D(mem)
        check("reward", reward(b, d, y, mem, w1, w2), want)

        r, tau = float(rng.normal()), float(rng.exponential(2.0))
        v, v2, gamma = float(rng.normal()), float(rng.normal()), float(rng.uniform(0.5, 1))
        disc = D(gamma) ** D(tau)
        check("advantage", advantage(r, tau, v, v2, gamma), D(r) + disc * D(v2) - D(v))
        check("one_step_return", one_step_return(r, tau, v2, gamma), D(r) + disc * D(v2))

        m = int(rng.integers(1, 6))
        rs, ts = rng.normal(size=m), rng.exponential(1.0, m)
        cum, acc = D(0), D(0)
        for rj, tj in zip(rs, ts):
            cum += D(float(tj))
            acc += (D(gamma) ** cum) * D(float(rj))
        acc += (D(gamma) ** cum) * D(v2)
        check("n_step_return", n_step_return(rs, ts, v2, gamma), acc)

        lp_new, lp_old = float(rng.normal(-0.7, 0.4)), float(rng.normal(-0.7, 0.4))
        adv, eps = float(rng.normal()), float(rng.uniform(0.05, 0.4))
        ratio = _dexp(D(lp_new) - D(lp_old))
        clipped = min(max(ratio, 1 - D(eps)), 1 + D(eps))
        check("clipped_surrogate", clipped_surrogate(lp_new, lp_old, adv, eps),
              min(ratio * D(adv), clipped * D(adv)))

        size = int(rng.integers(1, 12))
        prio = rng.uniform(0.01, 1, size)
        alpha = float(rng.uniform(0, 1))
        pw = [_dpow(float(x), alpha) for x in prio]
        probs = sampling_probabilities(prio, alpha)
        j = int(rng.integers(0, size))
        check("sampling_probabilities", probs[j], pw[j] / sum(pw))

        beta = float(rng.uniform(0, 1))
        raw = [_dpow(1 / (D(size) * D(float(q))), beta) for q in probs]
        top = max(raw)
        check("importance_weights", importance_weights(probs, size, beta)[j], raw[j] / top)

    names = ["zipf_probabilities", "freshness", "utility", "mem_free", "reward", "advantage",
             "one_step_return", "n_step_return", "clipped_surrogate", "sampling_probabilities",
             "importance_weights"]
    if bad:
        return False, "mismatch in " + ", ".join(f"{k} {v}" for k, v in bad.items())
    return True, f"{len(names)} functions x {N_RANDOM} inputs within rel {REL:g}"


# ---------------------------------------------------------------- criterion 2


def _fd_grads(loss, params, eps=1e-6):
    out = []
    for p in params:
        g = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + eps
            up = loss()
            p[i] = old - eps
            down = loss()
            p[i] = old
            g[i] = (up - down) / (2 * eps)
        out.append(g)
    return out


def _max_rel(a, b):
    return max(float(np.max(np.abs(x - y) / np.maximum(1e-6, np.abs(x) + np.abs(y))))
               for x, y in zip(a, b))


def criterion_2(n_configs=24):
    worst = 0.0
    for c in range(n_configs):
        rng = np.random.default_rng(500 + c)
        d = int(rng.integers(2, 8))
        hidden = [int(rng.integers(2, 7)) for _ in range(int(rng.integers(1, 3)))]
        b = int(rng.integers(2, 9))
        x = rng.normal(size=(b, d))

        actor = Mlp([d, *hidden, 2], head="softmax", rng=rng, init_range=0.8)
        a = rng.integers(0, 2, b)
        old = log_softmax(actor.raw(x))[np.arange(b), a] + rng.normal(0, 0.3, b)
        adv, w = rng.normal(size=b), rng.uniform(0.1, 1, b)
        eps, ent = float(rng.uniform(0.1, 0.3)), float(rng.choice([0.0, 0.01, 0.1]))
        _, ga, _ = policy_loss_and_grads(actor, x, a, old, adv, w, eps, ent)
        fa = _fd_grads(lambda: policy_loss_and_grads(actor, x, a, old, adv, w, eps, ent)[0], actor.params)
        worst = max(worst, _max_rel(ga, fa))

        critic = Mlp([d, *hidden, 1], rng=rng, init_range=0.8)
        r1, rn = rng.normal(size=b), rng.normal(size=b)
        lam1, lam2 = float(rng.uniform(0, 1)), float(rng.uniform(0, 0.1))
        _, gc = critic_loss_and_grads(critic, x, r1, rn, w, lam1, lam2)
        fc = _fd_grads(lambda: critic_loss_and_grads(critic, x, r1, rn, w, lam1, lam2)[0], critic.params)
        worst = max(worst, _max_rel(gc, fc))
    return worst < 1e-4, f"{n_configs} actor+critic configs, worst relative error {worst:.2e}"


# ---------------------------------------------------------------- criterion 3


def _buffer(states):
    buf = ReplayBuffer(len(states), len(states[0]))
    for i, s in enumerate(states):
        buf.push(Transition(np.asarray(s, float), 0, -0.5, 0.0, 1.0, np.zeros(len(s)), i))
    return buf


def _frequencies(buf, query, alpha, beta, draws, seed):
    rng = np.random.default_rng(seed)
    counts = np.zeros(buf.size)
    weights = []
    batch = buf.size - 1
    for _ in range(-(-draws // batch)):
        bt = sample_batch(buf, query, batch, alpha, beta, 1, rng)
        np.add.at(counts, bt.indices, 1)
        weights.append(bt.weights)
    return counts / counts.sum(), np.concatenate(weights)


def criterion_3():
    rng = np.random.default_rng(3)
    notes, ok = [], True

    buf = _buffer(rng.random((100, 6)))
    freq, _ = _frequencies(buf, rng.random(6) * 3, 0.0, 0.6, 100_000, 1)
    err_a = float(np.max(np.abs(freq - 0.01)))
    ok &= err_a < 0.01
    notes.append(f"(a) Linf {err_a:.4f}")

    crafted = np.eye(8)[[0, 1, 2, 3, 4, 5, 6, 7, 0, 1]] * np.linspace(0.5, 3, 10)[:, None]
    buf = _buffer(crafted)
    query = np.array([2.0, 1.0, 0.5, 0, 0, 0, 1.5, 0])
    _, probs = buf.probabilities(query, 0.7)
    freq, _ = _frequencies(buf, query, 0.7, 0.6, 100_000, 2)
    err_b = float(np.max(np.abs(freq - probs)))
    ok &= err_b < 0.01
    notes.append(f"(b) Linf {err_b:.4f}")

    buf = _buffer(rng.random((50, 4)))
    _, w = _frequencies(buf, rng.random(4) * 5, 0.8, 0.0, 10_000, 3)
    ok &= bool(np.all(w == 1.0))
    notes.append(f"(c) beta=0 all ones: {bool(np.all(w == 1.0))}")

    buf = _buffer(np.ones((64, 4)))
    _, w = _frequencies(buf, rng.random(4), 0.4, 1.0, 10_000, 4)
    ok &= bool(np.all(w == 1.0))
    notes.append(f"(d) uniform P beta=1 all ones: {bool(np.all(w == 1.0))}")
    return bool(ok), "; ".join(notes)


# ---------------------------------------------------------------- criterion 4


def _oracle_victims(present, util, sizes, capacity, need):
    """Exhaustive search for the minimal ascending-utility prefix that frees ``need``."""
    live = [int(i) for i in np.flatnonzero(present)]
    rank = {i: (util[i], -sizes[i], i) for i in live}
    free = capacity - sum(sizes[i] for i in live)
    for r in range(len(live) + 1):
        for combo in itertools.combinations(live, r):
            kept = [i for i in live if i not in combo]
            if free + sum(sizes[i] for i in combo) < need:
                continue
            if all(rank[v] < rank[k] for v in combo for k in kept):
                return sorted(combo, key=rank.get)
    return sorted(live, key=rank.get)


def criterion_4():
    rng = np.random.default_rng(44)
    mismatches = 0
    for _ in range(N_RANDOM):
        n = int(rng.integers(2, 10))  # up to 8 cached entries plus the newcomer
        sizes = rng.integers(1, 8, n) * 100.0
        life = rng.uniform(5, 30, n)
        cat = FileCatalog(life, sizes, rng.uniform(0.1, 0.9, n), 0.5)
        new = int(rng.integers(0, n))
        cap = float(rng.uniform(sizes[new], sizes.sum() + 100))
        t = 50.0
        cache = CacheState(cap, cat)
        # random live contents within capacity
        order = rng.permutation([i for i in range(n) if i != new])
        used = 0.0
        for i in order[:8]:
            if used + sizes[i] <= cap and rng.random() < 0.8:
                cache.present[i] = True
                cache.generation_time[i] = t - rng.uniform(0, 0.99) * life[i]
                used += sizes[i]
        util = cache.utilities(t)
        want = _oracle_victims(cache.present.copy(), util, sizes, cap, sizes[new])
        got = cache.insert(new, t)
        mismatches += got != want
    return mismatches == 0, f"{N_RANDOM} random caches, {mismatches} mismatches"


# ---------------------------------------------------------------- criterion 5


def criterion_5():
    cfg = load_config(DESK)
    res = compare_mdp_smdp(cfg, [1.0, 5.0])
    gaps, parts = {}, []
    ok = True
    for lam, arms in res.items():
        s = np.mean([r.hit_count for r in arms["smdp"]])
        m = np.mean([r.hit_count for r in arms["mdp"]])
        gaps[lam] = s - m
        ok &= s > m
        parts.append(f"lambda={lam:g}: SMDP {s:.1f} vs MDP {m:.1f}")
    ok &= gaps[5.0] > gaps[1.0]
    return bool(ok), "; ".join(parts) + f"; gap grows {gaps[1.0]:.1f} -> {gaps[5.0]:.1f}"


# ---------------------------------------------------------------- criterion 6


def criterion_6():
    cfg = load_config(DESK)
    res = run_convergence_comparison(cfg)
    rows = ", ".join(f"seed {s}: {e} vs {u}" for s, e, u in res.rows())
    return res.enhanced_wins >= 4, f"enhanced faster on {res.enhanced_wins}/5 ({rows})"


# ---------------------------------------------------------------- criterion 7


def _trend_ok(means, stds):
    """Non-decreasing, allowing one drop no larger than the pooled std."""
    pooled = math.sqrt(float(np.mean(np.square(stds))))
    drops = [means[i] - means[i + 1] for i in range(len(means) - 1) if means[i + 1] < means[i]]
    return len(drops) == 0 or (len(drops) == 1 and drops[0] <= pooled)


def criterion_7():
    base = load_config(DESK)
    m0 = base.capacity / 2
    axes = {"eta": [0.0, 0.5, 1.0], "lambda": [1.0, 5.0], "cache": [m0, 2 * m0, 4 * m0]}
    ok, parts = True, []
    for axis, values in axes.items():
        table = run_sweep(base, axis, values).table()
        for metric in ("hit", "utility"):
            means = [row[f"{metric}_mean"] for row in table]
            stds = [row[f"{metric}_std"] for row in table]
            good = _trend_ok(means, stds)
            ok &= good
            parts.append(f"{axis}/{metric} {'ok' if good else 'NOT monotone'} "
                         f"[{', '.join(f'{m:.1f}' for m in means)}]")
    return bool(ok), "; ".join(parts)


# ---------------------------------------------------------------- criterion 8


def criterion_8():
    cfg = load_config(DESK).replace(n_files=8, capacity=0.3 * 8 * 550, train_steps=5000,
                                    eval_requests=200, seeds=[0, 1, 2])
    lines, ok = [], True
    for seed in cfg.seeds:
        cat_seed, train_seed, agent_seed, eval_seed = seed_streams(seed)
        cat = generate_catalog(cfg.n_files, cat_seed, cfg.ranges, cfg.zipf_eta)
        for name in ("ppo", "uniform-ppo", "mdp-ppo"):
            slotted = name == "mdp-ppo"
            policy = make_policy(name, cfg.ppo, cfg.slot)
            policy.fit(build_env(cfg, cat, train_seed, slotted), cfg.train_steps, agent_seed)
            hits, _, outs = evaluate(build_env(cfg, cat, eval_seed, slotted), policy, cfg.eval_requests)
            floor, _, _ = evaluate(build_env(cfg, cat, eval_seed, slotted), NeverCache(), cfg.eval_requests)
            ceiling = clairvoyant_hits(cat, cfg.capacity, [o.time for o in outs], [o.file for o in outs],
                                       cfg.utility_k, generated=[o.arrival for o in outs])
            good = floor <= hits <= ceiling
            ok &= good
            lines.append(f"{name}/s{seed} {floor}<={hits}<={ceiling}")
    return bool(ok), ", ".join(lines)


# ---------------------------------------------------------------- criterion 9


def criterion_9(tmp=None):
    import tempfile

    tmp = Path(tmp or tempfile.mkdtemp())
    cfg = load_config(DESK).replace(n_files=8, capacity=1320.0, train_steps=3000,
                                    eval_requests=300, seeds=[0, 1])
    dirs = []
    for run in ("a", "b"):
        out = tmp / run
        export_results(run_experiment(cfg), out, cfg, trajectories=True)
        run_sweep(cfg.replace(policy="lru"), "eta", [0.0, 1.0]).write_csv(out / "sweep.csv")
        dirs.append(out)
    names = sorted(p.name for p in dirs[0].iterdir())
    same = names == sorted(p.name for p in dirs[1].iterdir())
    match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
    ok = same and not mismatch and not errors
    return ok, f"{len(match)} files byte-identical, {len(mismatch)} differ"


CRITERIA = {
    1: ("math-kernel exactness", criterion_1),
    2: ("gradient correctness", criterion_2),
    3: ("replay statistics", criterion_3),
    4: ("cache oracle equivalence", criterion_4),
    5: ("MDP-vs-SMDP ablation", criterion_5),
    6: ("convergence ablation", criterion_6),
    7: ("sweep trends", criterion_7),
    8: ("sanity bounds", criterion_8),
    9: ("determinism", criterion_9),
}

LIMITS = {1: 60, 2: 60, 3: 120, 4: 60, 5: 1800, 6: 1800, 7: 3600, 8: 300, 9: None}


def run_criterion(n):
    label, fn = CRITERIA[n]
    t0 = time.perf_counter()
    ok, detail = fn()
    elapsed = time.perf_counter() - t0
    limit = LIMITS[n]
    if limit is not None and elapsed > limit:
        ok = False
        detail += f"; runtime {elapsed:.0f}s over the {limit}s budget"
    line = f"criterion {n} ({label}): {'PASS' if ok else 'FAIL'} in {elapsed:.1f}s -- {detail}"
    return ok, line


@pytest.mark.acceptance
@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, acceptance_log):
    ok, line = run_criterion(n)
    acceptance_log.append(line)
    print(line)
    assert ok, line


if __name__ == "__main__":
    picked = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    results = [run_criterion(n) for n in picked]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
