"""Hot numeric kernels.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorised numpy version. ``SMDPCACHE_NUMBA`` picks which one the public name
binds to at import time. Both paths must agree to floating-point round-off;
``tests/test_kernels.py`` holds them to that.
"""

import math

import numpy as np

from smdpcache._backend import USE_NUMBA, njit


# ---------------------------------------------------------------- utilities


def _utilities_loop(t, present, gen_time, lifetime, importance, k):
    n = present.shape[0]
    out = np.zeros(n)
    denom = math.expm1(k)
    for f in range(n):
        if present[f]:
            h = (t - gen_time[f]) / lifetime[f]
            if h < 1.0:
                out[f] = importance[f] * math.expm1(k * (1.0 - h)) / denom
    return out


def _utilities_numpy(t, present, gen_time, lifetime, importance, k):
    h = (t - gen_time) / lifetime
    live = present & (h < 1.0)
    out = np.zeros(present.shape[0])
    out[live] = importance[live] * np.expm1(k * (1.0 - h[live])) / math.expm1(k)
    return out


# ---------------------------------------------------------------- eviction


def _select_victims_loop(present, priority, sizes, capacity, need):
    n = present.shape[0]
    used = 0.0
    m = 0
    order = np.empty(n, dtype=np.int64)
    for f in range(n):
        if present[f]:
            used += sizes[f]
            order[m] = f
            m += 1
    # insertion sort on (priority asc, size desc, index asc); m is small
    for a in range(1, m):
        cur = order[a]
        b = a - 1
        while b >= 0:
            o = order[b]
            if priority[o] > priority[cur]:
                pass
            elif priority[o] == priority[cur] and (
                sizes[o] < sizes[cur] or (sizes[o] == sizes[cur] and o > cur)
            ):
                pass
            else:
                break
            order[b + 1] = o
            b -= 1
        order[b + 1] = cur
    free = capacity - used
    count = 0
    while free < need and count < m:
        free += sizes[order[count]]
        count += 1
    return order[:count].copy()


def _select_victims_numpy(present, priority, sizes, capacity, need):
    idx = np.flatnonzero(present)
    free = capacity - sizes[idx].sum()
    if free >= need:
        return np.empty(0, dtype=np.int64)
    order = idx[np.lexsort((idx, -sizes[idx], priority[idx]))]
    freed = free + np.cumsum(sizes[order])
    count = int(np.searchsorted(freed >= need, True)) + 1
    return order[: min(count, order.shape[0])].astype(np.int64)


# ---------------------------------------------------------------- state encoding


def _encode_state_loop(
    mem, present, util, counts, importance, lifetime, sizes, requested,
    window, lifetime_scale, size_scale,
):
    n = present.shape[0]
    out = np.zeros(7 * n + 1)
    out[0] = mem
    for f in range(n):
        out[1 + f] = 1.0 if present[f] else 0.0
        out[1 + n + f] = util[f]
        out[1 + 2 * n + f] = counts[f] / window
        out[1 + 3 * n + f] = importance[f]
        out[1 + 4 * n + f] = lifetime[f] / lifetime_scale
        out[1 + 5 * n + f] = sizes[f] / size_scale
    out[1 + 6 * n + requested] = 1.0
    return out


def _encode_state_numpy(
    mem, present, util, counts, importance, lifetime, sizes, requested,
    window, lifetime_scale, size_scale,
):
    n = present.shape[0]
    onehot = np.zeros(n)
    onehot[requested] = 1.0
    return np.concatenate((
        [mem],
        present.astype(np.float64),
        util,
        counts / window,
        importance,
        lifetime / lifetime_scale,
        sizes / size_scale,
        onehot,
    ))


# ---------------------------------------------------------------- attention


def _attention_loop(keys, query, alpha, scale):
    n, d = keys.shape
    scores = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += keys[i, j] * query[j]
        scores[i] = s * scale
    # no infinities here: compiled with fastmath
    top = scores[0]
    for i in range(1, n):
        if scores[i] > top:
            top = scores[i]
    attn = np.empty(n)
    tilted = np.empty(n)
    za = 0.0
    zp = 0.0
    for i in range(n):
        attn[i] = math.exp(scores[i] - top)
        za += attn[i]
        tilted[i] = math.exp(alpha * (scores[i] - top))
        zp += tilted[i]
    for i in range(n):
        attn[i] /= za
        tilted[i] /= zp
    return attn, tilted


def _attention_numpy(keys, query, alpha, scale):
    scores = (keys @ query) * scale
    shifted = scores - scores.max()
    attn = np.exp(shifted)
    attn /= attn.sum()
    tilted = np.exp(alpha * shifted)
    tilted /= tilted.sum()
    return attn, tilted


# ---------------------------------------------------------------- sampling


def _draw_indices_loop(weights, uniforms):
    n = weights.shape[0]
    cdf = np.empty(n)
    acc = 0.0
    for i in range(n):
        acc += weights[i]
        cdf[i] = acc
    out = np.empty(uniforms.shape[0], dtype=np.int64)
    for b in range(uniforms.shape[0]):
        target = uniforms[b] * acc
        lo = 0
        hi = n - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf[mid] > target:
                hi = mid
            else:
                lo = mid + 1
        # rounding can push the target past the last positive weight
        while weights[lo] == 0.0 and lo > 0:
            lo -= 1
        out[b] = lo
    return out


def _draw_indices_numpy(weights, uniforms):
    cdf = np.cumsum(weights)
    idx = np.searchsorted(cdf, uniforms * cdf[-1], side="right")
    idx = np.minimum(idx, weights.shape[0] - 1)
    # only the tail clamp can land on a zero-weight slot
    bad = weights[idx] == 0.0
    if bad.any():
        idx[bad] = np.flatnonzero(weights)[-1]
    return idx.astype(np.int64)


# ---------------------------------------------------------------- n-step targets


def _n_step_targets_loop(rewards, taus, lengths, bootstrap, gamma, verbatim):
    batch = rewards.shape[0]
    out = np.empty(batch)
    for b in range(batch):
        elapsed = 0.0
        acc = 0.0
        for j in range(lengths[b]):
            before = elapsed
            elapsed += taus[b, j]
            if verbatim:
                acc += gamma ** elapsed * rewards[b, j]
            else:
                acc += gamma ** before * rewards[b, j]
        out[b] = acc + gamma ** elapsed * bootstrap[b]
    return out


def _n_step_targets_numpy(rewards, taus, lengths, bootstrap, gamma, verbatim):
    mask = np.arange(rewards.shape[1])[None, :] < lengths[:, None]
    t = np.where(mask, taus, 0.0)
    elapsed = np.cumsum(t, axis=1)
    exps = elapsed if verbatim else elapsed - t
    acc = np.where(mask, gamma ** exps * rewards, 0.0).sum(axis=1)
    return acc + gamma ** elapsed[:, -1] * bootstrap


# ---------------------------------------------------------------- dispatch

LOOP_KERNELS = {
    "utilities": _utilities_loop,
    "select_victims": _select_victims_loop,
    "encode_state": _encode_state_loop,
    "attention": _attention_loop,
    "draw_indices": _draw_indices_loop,
    "n_step_targets": _n_step_targets_loop,
}

NUMPY_KERNELS = {
    "utilities": _utilities_numpy,
    "select_victims": _select_victims_numpy,
    "encode_state": _encode_state_numpy,
    "attention": _attention_numpy,
    "draw_indices": _draw_indices_numpy,
    "n_step_targets": _n_step_targets_numpy,
}

_compiled = {}
# reductions where reordering the sum is acceptable (lets LLVM vectorise)
_REASSOCIATE = {"attention"}


def numba_kernel(name):
    """Return the numba-compiled loop version of ``name`` (compiled lazily)."""
    if name not in _compiled:
        _compiled[name] = njit(LOOP_KERNELS[name], fastmath=name in _REASSOCIATE)
    return _compiled[name]


def get_kernel(name, backend=None):
    backend = backend or ("numba" if USE_NUMBA else "numpy")
    if backend == "numba":
        return numba_kernel(name)
    if backend == "numpy":
        return NUMPY_KERNELS[name]
    raise ValueError(f"unknown backend {backend!r}")


utilities = get_kernel("utilities")
select_victims = get_kernel("select_victims")
encode_state = get_kernel("encode_state")
attention = get_kernel("attention")
draw_indices = get_kernel("draw_indices")
n_step_targets = get_kernel("n_step_targets")
