"""Reward modelling from scored (state, action) records, then PPO on the model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nn import MLP, Adam, NetSpec
from ..ppo import PPOConfig, train_ppo
from .dataset import DatasetError, ExpertDataset


@dataclass
class RewardModelConfig:
    hidden_dims: tuple[int, ...] = (64, 64)
    learning_rate: float = 1e-3
    steps: int = 2000
    batch_size: int = 64
    holdout_fraction: float = 0.2


@dataclass
class RewardNet:
    net: MLP
    n_actions: int
    heldout_mse: float = float("nan")
    heldout_groups: list = field(default_factory=list)

    def inputs(self, obs, actions) -> np.ndarray:
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        return np.hstack([obs, np.eye(self.n_actions)[np.atleast_1d(actions)]])

    def predict(self, obs, actions) -> np.ndarray:
        return self.net(self.inputs(obs, actions))[:, 0]

    def __call__(self, obs, action) -> float:
        return float(self.predict(obs, action)[0])


def _split(expert: ExpertDataset, fraction: float, rng) -> tuple[np.ndarray, np.ndarray, list]:
    """Hold out whole prompts when prompts are known, single records otherwise."""
    keys = [r.raw_prompt if r.raw_prompt is not None else i for i, r in enumerate(expert.records)]
    groups = list(dict.fromkeys(keys))
    order = rng.permutation(len(groups))
    n_test = int(round(fraction * len(groups)))
    test_groups = {groups[i] for i in order[:n_test]}
    test = np.array([k in test_groups for k in keys])
    return np.flatnonzero(~test), np.flatnonzero(test), [groups[i] for i in sorted(order[:n_test])]


def train_reward_model(expert: ExpertDataset, config: RewardModelConfig | None = None,
                       seed: int = 0) -> RewardNet:
    """Least-squares regression of score on (features, one-hot action)."""
    config = config or RewardModelConfig()
    if not expert.has_scores:
        raise DatasetError("reward model training needs a score on every record")
    obs, actions, scores = expert.features(), expert.actions(), expert.scores()
    seeds = np.random.SeedSequence(seed).generate_state(2)
    rng = np.random.default_rng(int(seeds[0]))
    train_idx, test_idx, test_groups = _split(expert, config.holdout_fraction, rng)
    if len(train_idx) == 0:
        train_idx = test_idx
    model = RewardNet(MLP.init(NetSpec(obs.shape[1] + expert.n_actions, config.hidden_dims, 1,
                                       "tanh", "identity", output_gain=0.01), int(seeds[1])),
                      expert.n_actions)
    # start from the mean score so the net only has to learn deviations
    model.net.biases[-1][:] = scores[train_idx].mean()
    x = model.inputs(obs, actions)
    opt = Adam(config.learning_rate)
    for _ in range(config.steps):
        idx = train_idx[rng.integers(len(train_idx), size=min(config.batch_size, len(train_idx)))]
        pred, cache = model.net.forward(x[idx])
        grad = 2.0 * (pred[:, 0] - scores[idx])[:, None] / len(idx)
        opt.step(model.net, model.net.backward(cache, grad))
    if len(test_idx):
        model.heldout_mse = float(np.mean((model.net(x[test_idx])[:, 0] - scores[test_idx]) ** 2))
    model.heldout_groups = test_groups
    return model


class RewardModelEnv:
    """Wraps an env so ``step`` returns the model's reward; the env's own reward
    is passed through as ``info["true_reward"]``."""

    def __init__(self, env, reward_fn):
        self.env = env
        self.reward_fn = reward_fn
        self._obs = None

    @property
    def obs_dim(self):
        return self.env.obs_dim

    @property
    def n_actions(self):
        return self.env.n_actions

    @property
    def horizon(self):
        return self.env.horizon

    def reset(self, rng=None):
        self._obs = self.env.reset(rng)
        return self._obs

    def step(self, action):
        obs, r, done, info = self.env.step(action)
        info = {**info, "true_reward": info.get("true_reward", r)}
        reward = float(self.reward_fn(self._obs, action))
        self._obs = obs
        return obs, reward, done, info


def rlhf_train(env, expert: ExpertDataset | None, config: PPOConfig, seed: int = 0,
               reward_model=None, reward_config: RewardModelConfig | None = None):
    """Fit a reward model (unless one is injected) and run PPO against it."""
    if reward_model is None:
        reward_model = train_reward_model(expert, reward_config, seed)
    result = train_ppo(RewardModelEnv(env, reward_model), config, seed)
    result.reward_model = reward_model
    return result
