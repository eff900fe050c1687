"""Step-wise environments over tabular MDPs, plus a one-step bandit."""
from __future__ import annotations

import numpy as np

from ..mdp import FeatureMap, TabularMDP


class TabularEnv:
    """Samples episodes from a :class:`TabularMDP`; observations are feature rows.

    Episodes end at the horizon or on entering a state flagged in ``terminal``.
    """

    def __init__(self, mdp: TabularMDP, features: FeatureMap | None = None,
                 terminal=None):
        if mdp.horizon is None:
            raise ValueError("TabularEnv needs a finite horizon")
        self.mdp = mdp
        self.features = features or FeatureMap.one_hot(mdp.n_states)
        self.terminal = (np.zeros(mdp.n_states, dtype=bool) if terminal is None
                         else np.asarray(terminal, dtype=bool))
        self.horizon = mdp.horizon
        self.state = None
        self._t = 0
        self._rng = None

    @property
    def obs_dim(self) -> int:
        return self.features.n_features

    @property
    def n_actions(self) -> int:
        return self.mdp.n_actions

    def observe(self, state: int) -> np.ndarray:
        return self.features.state_features[state]

    def reset(self, rng: np.random.Generator | None = None, state: int | None = None):
        self._rng = rng if rng is not None else np.random.default_rng(0)
        if state is None:
            state = int(self._rng.choice(self.mdp.n_states, p=self.mdp.start_distribution))
        self.state, self._t = state, 0
        return self.observe(state)

    def step(self, action: int):
        if self.state is None:
            raise RuntimeError("step() called before reset()")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} out of range")
        s = self.state
        reward = float(self.mdp.reward[s, action])
        nxt = int(self._rng.choice(self.mdp.n_states, p=self.mdp.transition[s, action]))
        self._t += 1
        done = self._t >= self.horizon or bool(self.terminal[nxt])
        self.state = None if done else nxt
        return self.observe(nxt), reward, done, {"true_reward": reward, "state": s}


class BanditEnv:
    """One-step environment with fixed per-action mean rewards."""

    horizon = 1

    def __init__(self, means, obs_dim: int = 1, noise: float = 0.0):
        self.means = np.asarray(means, dtype=np.float64)
        self._obs = np.ones(obs_dim)
        self.noise = noise
        self._rng = None
        self._active = False

    @property
    def obs_dim(self) -> int:
        return len(self._obs)

    @property
    def n_actions(self) -> int:
        return len(self.means)

    def reset(self, rng: np.random.Generator | None = None):
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._active = True
        return self._obs.copy()

    def step(self, action: int):
        if not self._active:
            raise RuntimeError("step() called before reset()")
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} out of range")
        r = float(self.means[action])
        if self.noise:
            r += float(self._rng.normal(0.0, self.noise))
        self._active = False
        return self._obs.copy(), r, True, {"true_reward": r}


def chain_mdp(n_states: int = 6, horizon: int = 6, goal_reward: float = 1.0) -> TabularMDP:
    """Deterministic chain with actions (left, stay, right) and reward at the right end.

    Starts are uniform so an optimal expert visits every state.
    """
    P = np.zeros((n_states, 3, n_states))
    for s in range(n_states):
        P[s, 0, max(s - 1, 0)] = 1.0
        P[s, 1, s] = 1.0
        P[s, 2, min(s + 1, n_states - 1)] = 1.0
    R = np.zeros((n_states, 3))
    R[n_states - 1, 1] = goal_reward
    R[n_states - 2, 2] = goal_reward / 2
    return TabularMDP(P, R, horizon, np.full(n_states, 1.0 / n_states), discount=0.9)
