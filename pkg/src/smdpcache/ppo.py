"""Actor-critic learner with SMDP discounting and prioritised replay."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from smdpcache import kernels
from smdpcache.env import CachingEnv
from smdpcache.nn import Adam, DivergenceError, Mlp, log_softmax, softmax
from smdpcache.replay import ReplayBuffer, Transition, beta_schedule, sample_batch


@dataclass
class PpoConfig:
    gamma: float = 0.99
    clip_epsilon: float = 0.2
    lambda1: float = 0.5
    lambda2: float = 1e-4
    n_steps: int = 5
    batch_size: int = 64
    alpha: float = 0.4
    beta_start: float = 0.6
    beta_end: float = 1.0
    buffer_size: int = 10000
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    sgd: bool = False
    hidden: tuple = (128, 64)
    update_interval: int = 64
    update_epochs: int = 1
    entropy_coefficient: float = 0.0
    normalize_advantages: bool = False
    verbatim_n_step: bool = True
    scaled_attention: bool = False
    train_on_hits: bool = True
    reward_window: int = 500

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.clip_epsilon <= 0:
            raise ValueError("clip epsilon must be positive")
        if self.n_steps < 1 or self.batch_size < 1 or self.update_interval < 1:
            raise ValueError("n_steps, batch_size and update_interval must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0 or self.entropy_coefficient < 0:
            raise ValueError("loss coefficients must be non-negative")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


# ---------------------------------------------------------------- scalar pieces


def advantage(r, tau, v_s, v_next, gamma):
    """SMDP one-step advantage ``r + gamma**tau * V(s') - V(s)``."""
    return r + gamma ** tau * v_next - v_s


def one_step_return(r, tau, v_next, gamma):
    return r + gamma ** tau * v_next


def clipped_surrogate(log_prob_new, log_prob_old, adv, epsilon):
    ratio = np.exp(np.asarray(log_prob_new) - np.asarray(log_prob_old))
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv)


def n_step_return(rewards, taus, v_at_n, gamma, verbatim=True):
    """n-step target over one contiguous window.

    With ``verbatim`` every reward, the first included, is discounted by the
    cumulative time up to and including its own transition. The conventional
    variant discounts reward j by the time elapsed before it.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    taus = np.asarray(taus, dtype=np.float64)
    if rewards.shape != taus.shape or rewards.ndim != 1 or rewards.size == 0:
        raise ValueError("window needs matching, non-empty reward and time vectors")
    return float(kernels.n_step_targets(
        rewards[None, :], taus[None, :], np.array([rewards.size], dtype=np.int64),
        np.array([float(v_at_n)]), float(gamma), bool(verbatim),
    )[0])


def value_loss(values, one_step_targets, n_step_targets, weights, lambda1, lambda2=0.0, critic=None):
    """Weighted 1-step + n-step squared TD error plus an L2 penalty on critic weights."""
    v = np.asarray(values, dtype=np.float64)
    per = (v - one_step_targets) ** 2 + lambda1 * (n_step_targets - v) ** 2
    loss = float(np.mean(np.asarray(weights) * per))
    if critic is not None and lambda2:
        loss += lambda2 * sum(float(np.sum(w * w)) for w in critic.weights)
    return loss


# ---------------------------------------------------------------- losses with gradients


def policy_loss_and_grads(actor: Mlp, states, actions, log_probs_old, adv, weights,
                          epsilon, entropy_coefficient=0.0):
    """Negated weighted clipped surrogate (minus entropy bonus) and its actor gradients."""
    z = actor.raw(states)
    logp = log_softmax(z)
    p = np.exp(logp)
    rows = np.arange(z.shape[0])
    lp = logp[rows, actions]
    ratio = np.exp(lp - log_probs_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv
    surr = np.minimum(unclipped, clipped)
    entropy = -(p * logp).sum(axis=1)
    b = z.shape[0]
    loss = -float(np.mean(weights * surr)) - entropy_coefficient * float(entropy.mean())

    active = unclipped <= clipped
    dlp = np.where(active, -weights * unclipped / b, 0.0)
    onehot = np.zeros_like(z)
    onehot[rows, actions] = 1.0
    dz = dlp[:, None] * (onehot - p)
    if entropy_coefficient:
        dh = -p * (logp + entropy[:, None])
        dz -= entropy_coefficient / b * dh
    stats = {
        "mean_ratio": float(ratio.mean()),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > epsilon)),
        "entropy": float(entropy.mean()),
    }
    return loss, actor.backward(states, dz), stats


def critic_loss_and_grads(critic: Mlp, states, r1, rn, weights, lambda1, lambda2):
    v = critic.raw(states)[:, 0]
    loss = value_loss(v, r1, rn, weights, lambda1, lambda2, critic)
    b = v.shape[0]
    dv = weights * (2.0 * (v - r1) + 2.0 * lambda1 * (v - rn)) / b
    grads = critic.backward(states, dv[:, None])
    if lambda2:
        for i, w in enumerate(critic.weights):
            grads[2 * i] = grads[2 * i] + 2.0 * lambda2 * w
    return loss, grads


# ---------------------------------------------------------------- agent


@dataclass
class TrainResult:
    rewards: np.ndarray
    moving_average: np.ndarray
    hits: int
    updates: list = field(default_factory=list)


def moving_average(x, window: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    c = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


class PpoAgent:
    """Actor, critic, their optimisers and the replay buffer for one run."""

    def __init__(self, state_dim: int, config: PpoConfig | None = None, seed=None):
        self.config = cfg = config or PpoConfig()
        self.state_dim = state_dim
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        actor_seed, critic_seed, act_seed, replay_seed = ss.spawn(4)
        dims = [state_dim, *cfg.hidden]
        self.actor = Mlp(dims + [2], head="softmax", rng=np.random.default_rng(actor_seed))
        self.critic = Mlp(dims + [1], head="linear", rng=np.random.default_rng(critic_seed))
        opt = dict(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps, sgd=cfg.sgd)
        self.actor_opt = Adam(self.actor.params, lr=cfg.actor_lr, **opt)
        self.critic_opt = Adam(self.critic.params, lr=cfg.critic_lr, **opt)
        self.buffer = ReplayBuffer(cfg.buffer_size, state_dim)
        self.act_rng = np.random.default_rng(act_seed)
        self.replay_rng = np.random.default_rng(replay_seed)
        self.steps = 0

    def action_probs(self, flat) -> np.ndarray:
        return softmax(self.actor.raw(flat))

    def act(self, flat) -> tuple[int, float]:
        p = self.action_probs(flat)
        a = int(self.act_rng.random() < p[1])
        return a, float(np.log(p[a]))

    def decide(self, state, env=None) -> int:
        """Greedy action for evaluation."""
        p = self.action_probs(state.flat)
        return int(p[1] > p[0])

    def update(self, current_state, beta: float) -> dict:
        return learner_update(self, current_state, beta)

    def train(self, env: CachingEnv, total_steps: int, beta_budget: int | None = None) -> TrainResult:
        cfg = self.config
        budget = total_steps if beta_budget is None else beta_budget
        rewards = np.empty(total_steps)
        hits = 0
        updates = []
        state = env.reset() if env.state is None else env.state
        for i in range(total_steps):
            a, logp = self.act(state.flat)
            out = env.step(a)
            rewards[i] = out.reward
            hits += out.hit
            if cfg.train_on_hits or not out.hit:
                self.buffer.push(Transition(
                    state.flat, a, logp, out.reward, out.tau, out.next_state.flat, env.epochs - 1
                ))
            state = out.next_state
            self.steps += 1
            if (
                self.steps % cfg.update_interval == 0
                and self.buffer.size >= cfg.batch_size + cfg.n_steps
            ):
                beta = beta_schedule(self.steps, budget, cfg.beta_start, cfg.beta_end)
                for _ in range(cfg.update_epochs):
                    updates.append(self.update(state.flat, beta))
        return TrainResult(rewards, moving_average(rewards, cfg.reward_window), hits, updates)


def learner_update(agent: PpoAgent, current_state, beta: float) -> dict:
    """One prioritised batch, one optimiser step on each network."""
    cfg = agent.config
    batch = sample_batch(
        agent.buffer, current_state, cfg.batch_size, cfg.alpha, beta, cfg.n_steps,
        agent.replay_rng, cfg.scaled_attention,
    )
    return update_on_batch(agent, batch)


def update_on_batch(agent: PpoAgent, batch) -> dict:
    cfg = agent.config
    critic = agent.critic
    # targets come from the current critic and are held constant
    v_s = critic.raw(batch.states)[:, 0]
    v_next = critic.raw(batch.next_states)[:, 0]
    v_tail = critic.raw(batch.tail_states)[:, 0]
    r0 = batch.rewards[:, 0]
    tau0 = batch.taus[:, 0]
    adv = advantage(r0, tau0, v_s, v_next, cfg.gamma)
    if cfg.normalize_advantages and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    r1 = one_step_return(r0, tau0, v_next, cfg.gamma)
    rn = kernels.n_step_targets(
        batch.rewards, batch.taus, batch.lengths, v_tail, cfg.gamma, cfg.verbatim_n_step
    )

    p_loss, p_grads, stats = policy_loss_and_grads(
        agent.actor, batch.states, batch.actions, batch.log_probs, adv, batch.weights,
        cfg.clip_epsilon, cfg.entropy_coefficient,
    )
    v_loss, v_grads = critic_loss_and_grads(
        critic, batch.states, r1, rn, batch.weights, cfg.lambda1, cfg.lambda2
    )
    if not (np.isfinite(p_loss) and np.isfinite(v_loss)):
        raise DivergenceError(f"non-finite loss (policy {p_loss}, value {v_loss})")
    agent.actor_opt.step(agent.actor.params, p_grads)
    agent.critic_opt.step(critic.params, v_grads)
    stats.update(
        policy_loss=p_loss,
        value_loss=v_loss,
        mean_weight=float(batch.weights.mean()),
        mean_advantage=float(adv.mean()),
    )
    return stats


def train(env: CachingEnv, config: PpoConfig, total_steps: int, seed=None):
    """Train a fresh agent on ``env``; returns ``(agent, TrainResult)``."""
    agent = PpoAgent(env.state_dim, config, seed)
    return agent, agent.train(env, total_steps)
