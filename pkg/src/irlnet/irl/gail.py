"""Generative adversarial imitation: a discriminator over (state, action) pairs
supplies the reward for a PPO generator; the two are updated alternately."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..nn import MLP, Adam, NetSpec, sigmoid, softplus
from ..ppo import PPOAgent, PPOConfig, train_ppo
from .dataset import ExpertDataset

SATURATION = 1e-6


class DiscriminatorSaturationWarning(RuntimeWarning):
    pass


@dataclass
class GAILConfig:
    ppo: PPOConfig = field(default_factory=PPOConfig)
    disc_hidden_dims: tuple[int, ...] = (100, 100)
    disc_learning_rate: float = 3e-4
    disc_batch_size: int = 64
    disc_steps_per_iteration: int = 1
    reward_clip: float = 10.0
    label_smoothing: float = 0.1  # applied only after saturation is detected


def surrogate_reward(d_logits, clip: float = 10.0) -> np.ndarray:
    """-log(1 - D) from discriminator logits, clamped to [0, clip]."""
    return np.clip(softplus(np.asarray(d_logits, dtype=np.float64)), 0.0, clip)


def bce_from_logits(logits, targets) -> float:
    z = np.asarray(logits, dtype=np.float64)
    return float(np.mean(softplus(z) - targets * z))


class Discriminator:
    """Scores (state features, one-hot action) pairs; label 1 means expert."""

    def __init__(self, obs_dim: int, n_actions: int, config: GAILConfig, seed: int):
        self.n_actions = n_actions
        self.config = config
        self.net = MLP.init(NetSpec(obs_dim + n_actions, config.disc_hidden_dims, 1,
                                    "tanh", "sigmoid"), seed)
        self.opt = Adam(config.disc_learning_rate)
        self.smoothing = 0.0

    def inputs(self, obs, actions) -> np.ndarray:
        return np.hstack([np.asarray(obs, dtype=np.float64), np.eye(self.n_actions)[actions]])

    def logits(self, obs, actions) -> np.ndarray:
        return self.net.forward(self.inputs(obs, actions))[1].logits[:, 0]

    def prob(self, obs, actions) -> np.ndarray:
        return sigmoid(self.logits(obs, actions))

    def accuracy(self, exp_obs, exp_act, gen_obs, gen_act) -> float:
        d_e = self.prob(exp_obs, exp_act)
        d_g = self.prob(gen_obs, gen_act)
        return float(np.mean(np.concatenate([d_e > 0.5, d_g < 0.5])))

    def step(self, exp_obs, exp_act, gen_obs, gen_act) -> dict:
        """One BCE step on a balanced batch: expert pairs labelled 1, generator pairs 0."""
        x = np.vstack([self.inputs(exp_obs, exp_act), self.inputs(gen_obs, gen_act)])
        y = np.concatenate([np.ones(len(exp_act)), np.zeros(len(gen_act))])
        out, cache = self.net.forward(x)
        d = out[:, 0]
        if np.all(d < SATURATION) or np.all(d > 1 - SATURATION):
            if self.smoothing == 0.0:
                warnings.warn("discriminator saturated; switching to label smoothing "
                              f"{self.config.label_smoothing}", DiscriminatorSaturationWarning)
            self.smoothing = self.config.label_smoothing
        targets = y * (1 - self.smoothing) + (1 - y) * self.smoothing
        z = cache.logits[:, 0]
        loss = bce_from_logits(z, targets)
        grad = ((sigmoid(z) - targets) / len(z))[:, None]
        self.opt.step(self.net, self.net.backward(cache, grad, wrt_logits=True))
        return {"disc_loss": loss, "disc_expert_mean": float(d[y == 1].mean()),
                "disc_gen_mean": float(d[y == 0].mean())}


@dataclass
class GAILResult:
    agent: PPOAgent
    discriminator: Discriminator
    curve: list


def gail_train(env, expert: ExpertDataset, config: GAILConfig | None = None,
               seed: int = 0) -> GAILResult:
    """Train a PPO generator on discriminator rewards.

    Per iteration: collect generator rollouts, take ``disc_steps_per_iteration``
    discriminator steps, replace the rollout rewards with the surrogate, run
    the PPO update. The curve's ``mean_reward`` is the environment's true
    reward and never feeds back into training.
    """
    config = config or GAILConfig()
    exp_obs, exp_act = expert.expert_pairs()
    if exp_obs.shape[1] != env.obs_dim:
        raise ValueError(f"expert features have dim {exp_obs.shape[1]}, env expects {env.obs_dim}")
    seeds = np.random.SeedSequence(seed).generate_state(3)
    disc = Discriminator(env.obs_dim, env.n_actions, config, int(seeds[0]))
    rng = np.random.default_rng(int(seeds[1]))
    B = config.disc_batch_size

    def on_batch(it, buffer, agent):
        stats = {}
        for _ in range(config.disc_steps_per_iteration):
            ei = rng.integers(len(exp_act), size=B)
            gi = rng.integers(len(buffer), size=B)
            stats = disc.step(exp_obs[ei], exp_act[ei], buffer.obs[gi], buffer.actions[gi])
        buffer.rewards = surrogate_reward(disc.logits(buffer.obs, buffer.actions), config.reward_clip)
        stats["surrogate_reward"] = float(buffer.rewards.mean())
        return stats

    result = train_ppo(env, config.ppo, int(seeds[2]), callback=on_batch)
    return GAILResult(result.agent, disc, result.curve)
