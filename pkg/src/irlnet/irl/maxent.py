"""Maximum-entropy IRL with rewards linear in state features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mdp import FeatureMap, TabularMDP, feature_expectations, soft_value_iteration, \
    state_visitation
from .dataset import ExpertDataset


class MaxEntDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearReward:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if theta.ndim != 1 or not np.all(np.isfinite(theta)):
            raise ValueError("theta must be a finite vector")
        object.__setattr__(self, "theta", theta)

    def state_reward(self, features: FeatureMap) -> np.ndarray:
        if features.n_features != len(self.theta):
            raise ValueError("theta dimension does not match the feature map")
        return features.state_features @ self.theta


def expert_statistics(mdp: TabularMDP, features: FeatureMap, expert: ExpertDataset):
    """Expert feature expectations and empirical start-state distribution."""
    trajs = expert.trajectories(mdp.discount)
    mu_e = feature_expectations(trajs, features, mdp.discount)
    start = np.bincount([t.states[0] for t in trajs], minlength=mdp.n_states) / len(trajs)
    return mu_e, start


def maxent_gradient(theta, mdp: TabularMDP, features: FeatureMap, mu_expert, start) -> np.ndarray:
    """Expert minus model feature expectations under the soft-optimal policy for ``theta``.

    With discount 1 and deterministic dynamics this is the exact gradient of
    the mean trajectory log-likelihood.
    """
    reward = features.state_features @ theta
    pi = soft_value_iteration(mdp, reward)
    d = state_visitation(mdp, pi, start=start, discounted=True)
    return mu_expert - d @ features.state_features


def maxent_irl(mdp: TabularMDP, features: FeatureMap, expert: ExpertDataset,
               lr: float = 0.1, iters: int = 200, theta0=None, callback=None) -> LinearReward:
    """Plain gradient ascent on the expert log-likelihood; ``callback(it, theta)`` runs per step."""
    mu_e, start = expert_statistics(mdp, features, expert)
    theta = np.zeros(features.n_features) if theta0 is None else np.array(theta0, dtype=np.float64)
    for it in range(iters):
        theta = theta + lr * maxent_gradient(theta, mdp, features, mu_e, start)
        if not np.linalg.norm(theta) <= 1e6:
            raise MaxEntDivergedError(f"|theta| exceeded 1e6 at iteration {it}")
        if callback is not None:
            callback(it, theta)
    return LinearReward(theta)
