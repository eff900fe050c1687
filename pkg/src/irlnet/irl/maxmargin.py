"""Apprenticeship learning by feature-expectation projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..mdp import FeatureMap, TabularMDP, feature_expectations, greedy_schedule, \
    policy_feature_expectations
from .dataset import DatasetError, ExpertDataset


class UnsupportedExpertError(DatasetError):
    pass


@dataclass
class MaxMarginResult:
    theta: np.ndarray  # reward weights over features
    policy: np.ndarray  # (H, S) deterministic schedule closest to the expert
    margins: list[float]
    policies: list[np.ndarray]
    feature_expectations: list[np.ndarray]
    expert_feature_expectations: np.ndarray

    @property
    def policy_distance(self) -> float:
        mu = self.feature_expectations[self._best]
        return float(np.linalg.norm(self.expert_feature_expectations - mu))

    @property
    def _best(self) -> int:
        d = [np.linalg.norm(self.expert_feature_expectations - mu) for mu in self.feature_expectations]
        return int(np.argmin(d))


def max_margin_irl(mdp: TabularMDP, features: FeatureMap, expert: ExpertDataset,
                   epsilon: float = 0.1, max_iters: int = 50,
                   initial_policy=None) -> MaxMarginResult:
    """Projection loop: alternate best responses to ``theta`` with projections of the
    expert's feature expectations onto the hull of the policies found so far.

    The initial policy defaults to the greedy policy for ``theta = 0``, which
    is action 0 everywhere under lowest-index tie-breaking.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if expert.source != "tabular_policy":
        raise UnsupportedExpertError(
            f"max-margin IRL needs tabular demonstrations, got source {expert.source!r}")
    mu_e = feature_expectations(expert.trajectories(mdp.discount), features, mdp.discount)

    def reward_of(theta):
        return features.state_features @ theta

    pi = (greedy_schedule(mdp, np.zeros(mdp.n_states)) if initial_policy is None
          else np.asarray(initial_policy))
    mu = policy_feature_expectations(mdp, pi, features)
    policies, mus = [pi], [mu]
    mu_bar = mu
    theta = mu_e - mu_bar
    margins = [float(np.linalg.norm(theta))]
    while margins[-1] > epsilon and len(margins) < max_iters:
        pi = greedy_schedule(mdp, reward_of(theta))
        mu = policy_feature_expectations(mdp, pi, features)
        policies.append(pi)
        mus.append(mu)
        step = mu - mu_bar
        denom = float(step @ step)
        if denom > 0:
            mu_bar = mu_bar + (step @ (mu_e - mu_bar)) / denom * step
        theta = mu_e - mu_bar
        margins.append(float(np.linalg.norm(theta)))
        if denom == 0:
            break
    result = MaxMarginResult(theta, None, margins, policies, mus, mu_e)
    result.policy = policies[result._best]
    return result
