"""Finite MDPs, trajectories and exact dynamic-programming solvers.

Policies are plain numpy arrays. Four shapes are accepted wherever a policy
is expected:

* ``(S,)`` int      -- deterministic, stationary
* ``(H, S)`` int    -- deterministic, one action per (timestep, state)
* ``(S, A)`` float  -- stochastic, stationary
* ``(H, S, A)`` float -- stochastic, time-varying

Everything is episodic with a finite horizon unless ``horizon`` is None, in
which case value iteration runs to tolerance on the discounted problem.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

_STOCH_TOL = 1e-9


class MDPValidationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    horizon: int | None
    start_distribution: np.ndarray  # (S,)
    discount: float = 1.0

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=np.float64)
        R = np.asarray(self.reward, dtype=np.float64)
        p0 = np.asarray(self.start_distribution, dtype=np.float64)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "start_distribution", p0)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise MDPValidationError(f"transition must be (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if S < 1 or A < 1:
            raise MDPValidationError("need at least one state and one action")
        if R.shape != (S, A):
            raise MDPValidationError(f"reward must be {(S, A)}, got {R.shape}")
        if p0.shape != (S,):
            raise MDPValidationError(f"start_distribution must be ({S},), got {p0.shape}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > _STOCH_TOL):
            raise MDPValidationError("transition rows must be probability distributions")
        if np.any(p0 < 0) or abs(p0.sum() - 1.0) > _STOCH_TOL:
            raise MDPValidationError("start_distribution must sum to 1")
        if not np.all(np.isfinite(R)):
            raise MDPValidationError("reward values must be finite")
        if not 0.0 <= self.discount <= 1.0:
            raise MDPValidationError(f"discount must lie in [0, 1], got {self.discount}")
        if self.horizon is not None and int(self.horizon) < 1:
            raise MDPValidationError("horizon must be a positive integer")
        if self.horizon is None and self.discount >= 1.0:
            raise MDPValidationError("infinite horizon requires discount < 1")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def with_reward(self, reward: np.ndarray) -> "TabularMDP":
        return TabularMDP(self.transition, reward, self.horizon,
                          self.start_distribution, self.discount)


@dataclass(frozen=True)
class FeatureMap:
    state_features: np.ndarray  # (S, F)

    def __post_init__(self):
        phi = np.asarray(self.state_features, dtype=np.float64)
        if phi.ndim != 2:
            raise MDPValidationError("state_features must be a (state, feature) matrix")
        if not np.all(np.isfinite(phi)):
            raise MDPValidationError("state_features must be finite")
        object.__setattr__(self, "state_features", phi)

    @property
    def n_features(self) -> int:
        return self.state_features.shape[1]

    @classmethod
    def one_hot(cls, n_states: int) -> "FeatureMap":
        return cls(np.eye(n_states))


@dataclass(frozen=True)
class Trajectory:
    states: tuple[int, ...]
    actions: tuple[int, ...]
    rewards: tuple[float, ...]
    discount: float = 1.0
    total_return: float = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not (len(self.states) == len(self.actions) == len(self.rewards)):
            raise MDPValidationError("states, actions and rewards must have equal length")
        ret = float(sum(self.discount ** t * r for t, r in enumerate(self.rewards)))
        if self.total_return is None:
            object.__setattr__(self, "total_return", ret)
        elif abs(self.total_return - ret) > 1e-9:
            raise MDPValidationError("total_return disagrees with discounted reward sum")

    def __len__(self):
        return len(self.states)

    @property
    def steps(self) -> list[tuple[int, int, float]]:
        return list(zip(self.states, self.actions, self.rewards))


def policy_table(policy, mdp: TabularMDP, horizon: int | None = None) -> np.ndarray:
    """Normalise any accepted policy representation to an ``(H, S, A)`` table."""
    H = horizon if horizon is not None else mdp.horizon
    if H is None:
        raise MDPValidationError("a finite horizon is needed to expand a policy")
    S, A = mdp.n_states, mdp.n_actions
    pi = np.asarray(policy)
    if np.issubdtype(pi.dtype, np.integer):
        if np.any(pi < 0) or np.any(pi >= A):
            raise MDPValidationError("deterministic policy action out of range")
        pi = np.eye(A)[pi]
    pi = pi.astype(np.float64)
    if pi.shape == (S, A):
        pi = np.broadcast_to(pi, (H, S, A))
    if pi.shape != (H, S, A):
        raise MDPValidationError(f"policy shape {np.shape(policy)} incompatible with MDP")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=-1) - 1.0) > 1e-8):
        raise MDPValidationError("policy rows must be probability distributions")
    return pi


def _check_reward(mdp, reward):
    if reward is None:
        return mdp.reward
    R = np.asarray(reward, dtype=np.float64)
    if R.shape == (mdp.n_states,):
        R = np.repeat(R[:, None], mdp.n_actions, axis=1)
    if R.shape != (mdp.n_states, mdp.n_actions):
        raise MDPValidationError(f"reward shape {R.shape} does not match (state, action)")
    if np.any(np.isnan(R)):
        raise MDPValidationError("reward contains NaN")
    return R


def q_schedule(mdp: TabularMDP, reward=None) -> np.ndarray:
    """Optimal finite-horizon action values, shape ``(H, S, A)``."""
    R = _check_reward(mdp, reward)
    H = mdp.horizon
    Q = np.empty((H, mdp.n_states, mdp.n_actions))
    v_next = np.zeros(mdp.n_states)
    for t in range(H - 1, -1, -1):
        Q[t] = R + mdp.discount * mdp.transition @ v_next
        v_next = Q[t].max(axis=1)
    return Q


def greedy_schedule(mdp: TabularMDP, reward=None) -> np.ndarray:
    """Deterministic time-varying optimal policy ``(H, S)``; ties go to the lowest action."""
    return q_schedule(mdp, reward).argmax(axis=2)


def value_iteration(mdp: TabularMDP, tol: float = 1e-10, reward=None,
                    max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal values and the greedy first-step policy.

    With a finite horizon this is exact backward induction. With
    ``horizon=None`` the discounted Bellman operator is iterated until the
    sup-norm residual drops below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    R = _check_reward(mdp, reward)
    if mdp.horizon is not None:
        Q = q_schedule(mdp, R)[0]
        return Q.max(axis=1), Q.argmax(axis=1)
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        Q = R + mdp.discount * mdp.transition @ v
        v_new = Q.max(axis=1)
        residual = np.abs(v_new - v).max()
        v = v_new
        if residual < tol * (1 - mdp.discount) / 2:
            break
    Q = R + mdp.discount * mdp.transition @ v
    return Q.max(axis=1), Q.argmax(axis=1)


def soft_value_iteration(mdp: TabularMDP, reward_override=None, tol: float = 1e-10,
                         max_iter: int = 100_000) -> np.ndarray:
    """Maximum-entropy policy: softmax over soft action values.

    Returns ``(H, S, A)`` for finite horizons and ``(S, A)`` otherwise.
    ``reward_override`` may be per-state ``(S,)`` or per-pair ``(S, A)``.
    """
    R = _check_reward(mdp, reward_override)
    P, g = mdp.transition, mdp.discount
    if mdp.horizon is None:
        v = np.zeros(mdp.n_states)
        for _ in range(max_iter):
            Q = R + g * P @ v
            v_new = logsumexp(Q, axis=1)
            done = np.abs(v_new - v).max() < tol
            v = v_new
            if done:
                break
        Q = R + g * P @ v
        return np.exp(Q - logsumexp(Q, axis=1, keepdims=True))
    H = mdp.horizon
    pi = np.empty((H, mdp.n_states, mdp.n_actions))
    v_next = np.zeros(mdp.n_states)
    for t in range(H - 1, -1, -1):
        Q = R + g * P @ v_next
        v_next = logsumexp(Q, axis=1)
        pi[t] = np.exp(Q - v_next[:, None])
    return pi


def state_visitation(mdp: TabularMDP, policy, start=None,
                     discounted: bool = False) -> np.ndarray:
    """Expected visits per state over one episode.

    Undiscounted counts sum to the horizon. ``discounted=True`` weights
    timestep t by ``discount**t``; ``start`` overrides the start distribution.
    """
    pi = policy_table(policy, mdp)
    d = mdp.start_distribution if start is None else np.asarray(start, dtype=np.float64)
    counts = np.zeros(mdp.n_states)
    w = 1.0
    for t in range(mdp.horizon):
        counts += w * d
        # d'(s') = sum_{s,a} d(s) pi(a|s) P(s'|s,a)
        d = np.einsum("s,sa,sax->x", d, pi[t], mdp.transition)
        if discounted:
            w *= mdp.discount
    return counts


def feature_expectations(trajectories: list[Trajectory], features: FeatureMap,
                         discount: float) -> np.ndarray:
    if not trajectories:
        raise MDPValidationError("feature_expectations needs at least one trajectory")
    phi = features.state_features
    total = np.zeros(features.n_features)
    for traj in trajectories:
        weights = discount ** np.arange(len(traj), dtype=np.float64)
        total += weights @ phi[list(traj.states)]
    return total / len(trajectories)


def policy_feature_expectations(mdp: TabularMDP, policy, features: FeatureMap,
                                start=None) -> np.ndarray:
    """Exact discounted feature expectations of a policy."""
    return state_visitation(mdp, policy, start=start, discounted=True) @ features.state_features


def policy_return(mdp: TabularMDP, policy, reward=None) -> float:
    """Exact expected discounted return of a policy from the start distribution."""
    R = _check_reward(mdp, reward)
    pi = policy_table(policy, mdp)
    v = np.zeros(mdp.n_states)
    for t in range(mdp.horizon - 1, -1, -1):
        Q = R + mdp.discount * mdp.transition @ v
        v = (pi[t] * Q).sum(axis=1)
    return float(mdp.start_distribution @ v)


def rollout(mdp: TabularMDP, policy, n_episodes: int, seed: int) -> list[Trajectory]:
    """Sample episodes; all episodes advance in lockstep for speed."""
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    pi = policy_table(policy, mdp)
    rng = np.random.default_rng(seed)
    H = mdp.horizon
    states = np.empty((n_episodes, H), dtype=np.int64)
    actions = np.empty((n_episodes, H), dtype=np.int64)
    s = _sample_rows(rng, np.broadcast_to(mdp.start_distribution, (n_episodes, mdp.n_states)))
    for t in range(H):
        a = _sample_rows(rng, pi[t][s])
        states[:, t], actions[:, t] = s, a
        s = _sample_rows(rng, mdp.transition[s, a])
    rewards = mdp.reward[states, actions]
    return [Trajectory(tuple(states[i].tolist()), tuple(actions[i].tolist()),
                       tuple(rewards[i].tolist()), mdp.discount)
            for i in range(n_episodes)]


def _sample_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)
