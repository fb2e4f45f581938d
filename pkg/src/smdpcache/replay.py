"""Ring-buffer replay with attention-based prioritisation.

A stored transition's priority is its softmax dot-product similarity to the
agent's *current* state, so priorities are recomputed on every draw rather
than kept in a sum tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from smdpcache import kernels


class BufferTooSmallError(ValueError):
    pass


@dataclass
class Transition:
    state: np.ndarray
    action: int
    log_prob_old: float
    reward: float
    tau: float
    next_state: np.ndarray
    epoch: int = -1


def attention_scores(query, keys, scaled: bool = False) -> np.ndarray:
    """Softmax over ``keys @ query`` (optionally divided by sqrt(dim))."""
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    query = np.asarray(query, dtype=np.float64)
    if keys.shape[0] == 0:
        raise ValueError("attention needs at least one key")
    if keys.shape[1] != query.shape[0]:
        raise ValueError("query and keys differ in dimension")
    scores = keys @ query
    if scaled:
        scores = scores / np.sqrt(query.shape[0])
    scores = scores - scores.max()
    e = np.exp(scores)
    return e / e.sum()


def priorities(scores) -> np.ndarray:
    return np.asarray(scores, dtype=np.float64).copy()


def sampling_probabilities(prio, alpha: float) -> np.ndarray:
    prio = np.asarray(prio, dtype=np.float64)
    if np.any(prio < 0):
        raise ValueError("priorities must be non-negative")
    if not np.any(prio > 0):
        raise ValueError("all priorities are zero")
    w = prio ** alpha
    return w / w.sum()


def importance_weights(probs, size: int, beta: float, normalize: bool = True) -> np.ndarray:
    """``(1 / (size * P(i))) ** beta``, divided by the batch maximum when ``normalize``."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs <= 0):
        raise ValueError("cannot weight a transition with zero sampling probability")
    w = (1.0 / (size * probs)) ** beta
    if normalize:
        w = w / w.max()
    return w


def beta_schedule(step: int, budget: int, start: float = 0.6, end: float = 1.0) -> float:
    if budget <= 0:
        return end
    return start + (end - start) * min(1.0, step / budget)


@dataclass
class Batch:
    indices: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray       # (B, n), padded past ``lengths``
    taus: np.ndarray          # (B, n)
    lengths: np.ndarray
    next_states: np.ndarray   # state after the first transition
    tail_states: np.ndarray   # state after the last transition of the window
    weights: np.ndarray
    probs: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.shape[0]


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.states = np.zeros((capacity, state_dim))
        self.next_states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.log_probs = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.taus = np.zeros(capacity)
        self.epochs = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.write_head = 0
        self.pushes = 0

    def __len__(self) -> int:
        return self.size

    def push(self, tr: Transition):
        if tr.tau <= 0:
            raise ValueError("transition time must be positive")
        if tr.log_prob_old > 0:
            raise ValueError("log-probability cannot be positive")
        i = self.write_head
        self.states[i] = tr.state
        self.next_states[i] = tr.next_state
        self.actions[i] = tr.action
        self.log_probs[i] = tr.log_prob_old
        self.rewards[i] = tr.reward
        self.taus[i] = tr.tau
        self.epochs[i] = tr.epoch if tr.epoch >= 0 else self.pushes
        self.write_head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.pushes += 1

    @property
    def oldest(self) -> int:
        return self.write_head if self.size == self.capacity else 0

    def ordered_indices(self) -> np.ndarray:
        """Physical slots from oldest to newest."""
        return (self.oldest + np.arange(self.size)) % self.capacity

    def get(self, slot: int) -> Transition:
        return Transition(
            self.states[slot].copy(), int(self.actions[slot]), float(self.log_probs[slot]),
            float(self.rewards[slot]), float(self.taus[slot]), self.next_states[slot].copy(),
            int(self.epochs[slot]),
        )

    def window_starts(self, n: int) -> np.ndarray:
        """Mask of slots whose n-step window stays behind the write head."""
        logical = (np.arange(self.size) - self.oldest) % self.capacity
        return logical <= self.size - n

    def probabilities(self, query, alpha: float, scaled: bool = False):
        """Attention scores and sampling distribution over the stored states."""
        keys = self.states[: self.size]
        scale = 1.0 / np.sqrt(self.state_dim) if scaled else 1.0
        return kernels.attention(keys, np.asarray(query, dtype=np.float64), float(alpha), scale)

    def dump(self, query=None, alpha: float = 1.0) -> str:
        """Text table of the stored transitions, oldest first, with priorities if ``query`` is given."""
        lines = ["slot,epoch,action,log_prob_old,reward,tau" + (",priority,prob" if query is not None else "")]
        if query is not None and self.size:
            attn, probs = self.probabilities(query, alpha)
        for s in self.ordered_indices():
            row = f"{s},{self.epochs[s]},{self.actions[s]},{self.log_probs[s]!r},{self.rewards[s]!r},{self.taus[s]!r}"
            if query is not None:
                row += f",{attn[s]!r},{probs[s]!r}"
            lines.append(row)
        return "\n".join(lines) + "\n"


def sample_batch(
    buffer: ReplayBuffer,
    current_state,
    batch_size: int,
    alpha: float,
    beta: float,
    n: int,
    rng: np.random.Generator,
    scaled: bool = False,
) -> Batch:
    """Draw ``batch_size`` n-step windows, with replacement, by attention priority.

    Windows that would run past the newest transition are never drawn (the
    draw is restricted to valid starts, which equals reject-and-redraw).
    A window is cut short where the stored epochs are not consecutive.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if buffer.size < batch_size + n:
        raise BufferTooSmallError(
            f"buffer holds {buffer.size} transitions, need {batch_size + n}"
        )
    _, probs = buffer.probabilities(current_state, alpha, scaled)
    allowed = probs * buffer.window_starts(n)
    idx = kernels.draw_indices(allowed, rng.random(batch_size))
    weights = importance_weights(probs[idx], buffer.size, beta)

    cap = buffer.capacity
    slots = (idx[:, None] + np.arange(n)[None, :]) % cap
    epochs = buffer.epochs[slots]
    contiguous = np.ones_like(slots, dtype=bool)
    if n > 1:
        contiguous[:, 1:] = np.cumprod(np.diff(epochs, axis=1) == 1, axis=1).astype(bool)
    lengths = contiguous.sum(axis=1)
    tail = slots[np.arange(batch_size), lengths - 1]
    return Batch(
        indices=idx,
        states=buffer.states[idx],
        actions=buffer.actions[idx],
        log_probs=buffer.log_probs[idx],
        rewards=np.where(contiguous, buffer.rewards[slots], 0.0),
        taus=np.where(contiguous, buffer.taus[slots], 0.0),
        lengths=lengths.astype(np.int64),
        next_states=buffer.next_states[idx],
        tail_states=buffer.next_states[tail],
        weights=weights,
        probs=probs[idx],
    )
