"""PPO with a clipped surrogate over discrete actions.

Actor and critic are separate tanh MLPs. Environments follow a small
contract: ``obs_dim``, ``n_actions``, ``reset(rng) -> obs`` and
``step(action) -> (obs, reward, done, info)``; ``info["true_reward"]``,
when present, is what the training curve reports.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .nn import MLP, Adam, NetSpec, log_softmax, softmax

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class PPOConfig:
    clip_epsilon: float = 0.2
    epochs_per_update: int = 4
    minibatch_size: int = 64
    value_loss_coeff: float = 0.5
    entropy_coeff: float = 0.01
    discount: float = 0.0
    gae_lambda: float = 1.0
    episodes_per_iteration: int = 64
    iterations: int = 300
    learning_rate: float = 3e-4
    hidden_dims: tuple[int, ...] = (64, 64)
    normalize_advantages: bool = True
    max_episode_steps: int = 1000

    def __post_init__(self):
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not 0 <= self.discount <= 1:
            raise ValueError("discount must lie in [0, 1]")
        if self.episodes_per_iteration <= 0 or self.iterations < 0:
            raise ValueError("episodes_per_iteration must be positive")
        self.hidden_dims = tuple(self.hidden_dims)


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    episode_returns: list = field(default_factory=list)  # undiscounted, curve-facing
    advantages: np.ndarray | None = None
    raw_advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return len(self.actions)


@dataclass
class PPOAgent:
    actor: MLP
    critic: MLP
    actor_opt: Adam
    critic_opt: Adam

    @classmethod
    def create(cls, obs_dim: int, n_actions: int, config: PPOConfig, seed: int) -> "PPOAgent":
        seeds = np.random.SeedSequence(seed).generate_state(2)
        actor = MLP.init(NetSpec(obs_dim, config.hidden_dims, n_actions, "tanh", "softmax",
                                 output_gain=0.01), int(seeds[0]))
        critic = MLP.init(NetSpec(obs_dim, config.hidden_dims, 1, "tanh", "identity"),
                          int(seeds[1]))
        return cls(actor, critic, Adam(config.learning_rate), Adam(config.learning_rate))

    def action_probs(self, obs) -> np.ndarray:
        return self.actor(obs)

    def greedy(self, obs) -> np.ndarray:
        return self.actor(obs).argmax(axis=1)


def collect(env, agent: PPOAgent, config: PPOConfig, rng: np.random.Generator) -> RolloutBuffer:
    """Run ``episodes_per_iteration`` episodes with the current stochastic policy."""
    obs_l, act_l, logp_l, rew_l, done_l = [], [], [], [], []
    episode_returns = []
    for _ in range(config.episodes_per_iteration):
        obs = env.reset(rng)
        ep_true = 0.0
        for t in range(config.max_episode_steps):
            logits = agent.actor.forward(obs)[1].logits[0]
            logp = log_softmax(logits)
            a = _sample(rng, np.exp(logp))
            try:
                nxt, r, done, info = env.step(a)
            except Exception as exc:
                raise RuntimeError(f"environment step failed (action={a}, t={t})") from exc
            obs_l.append(obs)
            act_l.append(a)
            logp_l.append(logp[a])
            rew_l.append(r)
            ep_true += info.get("true_reward", r)
            done = done or t == config.max_episode_steps - 1
            done_l.append(done)
            obs = nxt
            if done:
                break
        episode_returns.append(ep_true)
    obs_arr = np.array(obs_l)
    values = agent.critic(obs_arr)[:, 0]
    return RolloutBuffer(obs_arr, np.array(act_l), np.array(logp_l), np.array(rew_l, dtype=np.float64),
                         values, np.array(done_l), episode_returns)


def _sample(rng: np.random.Generator, p: np.ndarray) -> int:
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), len(p) - 1))


def compute_advantages(buffer: RolloutBuffer, config: PPOConfig) -> RolloutBuffer:
    """Generalised advantage estimation; episodes end where ``dones`` is set.

    With ``discount=0`` the advantage is reward minus value. Advantages are
    normalised per batch unless their spread is below 1e-8.
    """
    n = len(buffer)
    adv = np.zeros(n)
    gae = 0.0
    g, lam = config.discount, config.gae_lambda
    for i in range(n - 1, -1, -1):
        if buffer.dones[i]:
            next_value, gae = 0.0, 0.0
        else:
            next_value = buffer.values[i + 1]
        delta = buffer.rewards[i] + g * next_value - buffer.values[i]
        gae = delta + g * lam * gae
        adv[i] = gae
    buffer.returns = adv + buffer.values
    buffer.raw_advantages = adv.copy()
    if config.normalize_advantages:
        std = adv.std()
        adv = adv - adv.mean()
        if std >= 1e-8:
            adv = adv / std
        else:
            adv = np.zeros(n)
    buffer.advantages = adv
    return buffer


def clipped_surrogate(ratio, advantage, clip_epsilon: float) -> np.ndarray:
    ratio = np.asarray(ratio, dtype=np.float64)
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return np.minimum(ratio * advantage, clipped * advantage)


def _actor_loss_grad(logits, actions, old_logp, adv, config: PPOConfig):
    """Loss terms and d(loss)/d(logits) for the clipped surrogate plus entropy bonus."""
    n, k = logits.shape
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    logp = logp_all[np.arange(n), actions]
    ratio = np.exp(logp - old_logp)
    eps = config.clip_epsilon
    surr = clipped_surrogate(ratio, adv, eps)
    # gradient flows only through the unclipped branch when it is the active minimum
    unclipped_active = (ratio * adv) <= (np.clip(ratio, 1 - eps, 1 + eps) * adv)
    d_surr_d_logp = np.where(unclipped_active, ratio * adv, 0.0)
    onehot = np.eye(k)[actions]
    d_logp_d_logits = onehot - probs
    entropy = -(probs * logp_all).sum(axis=1)
    # dH/dz_j = -p_j (log p_j + H)
    d_ent = -probs * (logp_all + entropy[:, None])
    grad = (-(d_surr_d_logp[:, None] * d_logp_d_logits) - config.entropy_coeff * d_ent) / n
    stats = {"policy_loss": float(-surr.mean()), "entropy": float(entropy.mean()),
             "approx_kl": float(np.mean(old_logp - logp)),
             "clip_fraction": float(np.mean(np.abs(ratio - 1) > eps))}
    return grad, stats


def ppo_update(agent: PPOAgent, buffer: RolloutBuffer, config: PPOConfig,
               rng: np.random.Generator) -> dict:
    """Several epochs of minibatch Adam steps on actor and critic; returns mean loss terms."""
    if buffer.advantages is None:
        raise ValueError("compute_advantages must run before ppo_update")
    n = len(buffer)
    totals: dict[str, float] = {}
    count = 0
    for _ in range(config.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            _, a_cache = agent.actor.forward(buffer.obs[idx])
            grad, stats = _actor_loss_grad(a_cache.logits, buffer.actions[idx],
                                           buffer.log_probs[idx], buffer.advantages[idx], config)
            v_pred, c_cache = agent.critic.forward(buffer.obs[idx])
            err = v_pred[:, 0] - buffer.returns[idx]
            value_loss = float(np.mean(err ** 2))
            stats["value_loss"] = value_loss
            stats["total_loss"] = (stats["policy_loss"] + config.value_loss_coeff * value_loss
                                   - config.entropy_coeff * stats["entropy"])
            if not np.isfinite(stats["total_loss"]):
                raise TrainingDivergedError(f"non-finite PPO loss: {stats}")
            v_grad = config.value_loss_coeff * 2.0 * err[:, None] / len(idx)
            agent.actor_opt.step(agent.actor, agent.actor.backward(a_cache, grad, wrt_logits=True))
            agent.critic_opt.step(agent.critic, agent.critic.backward(c_cache, v_grad))
            for key, val in stats.items():
                totals[key] = totals.get(key, 0.0) + val
            count += 1
    return {k: v / max(count, 1) for k, v in totals.items()}


@dataclass
class TrainResult:
    agent: PPOAgent
    curve: list  # one dict per iteration: iteration, mean_reward, loss terms


def train_ppo(env, config: PPOConfig, seed: int, agent: PPOAgent | None = None,
              callback=None) -> TrainResult:
    """Alternate collection and clipped-surrogate updates for ``config.iterations`` rounds.

    ``callback(iteration, buffer, agent)`` may rewrite buffer rewards before
    advantages are computed; GAIL uses this hook.
    """
    seeds = np.random.SeedSequence(seed).generate_state(2)
    agent = agent or PPOAgent.create(env.obs_dim, env.n_actions, config, int(seeds[0]))
    rng = np.random.default_rng(int(seeds[1]))
    curve = []
    for it in range(config.iterations):
        buffer = collect(env, agent, config, rng)
        extra = callback(it, buffer, agent) if callback is not None else None
        compute_advantages(buffer, config)
        stats = ppo_update(agent, buffer, config, rng)
        logit_scale = float(np.abs(agent.actor.forward(buffer.obs)[1].logits).mean())
        if logit_scale > 1e3:
            raise TrainingDivergedError(f"policy logits diverged at iteration {it}: {logit_scale:.3g}")
        row = {"iteration": it, "mean_reward": float(np.mean(buffer.episode_returns)), **stats}
        if extra:
            row.update(extra)
        curve.append(row)
        if it % 50 == 0:
            log.debug("iter %d mean_reward %.4f", it, row["mean_reward"])
    return TrainResult(agent, curve)


def policy_probs(agent: PPOAgent, obs) -> np.ndarray:
    return softmax(agent.actor.forward(obs)[1].logits)
