import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kendalltau

from irlnet.envs.gridworld import GridWorld, gridworld_as_tabular, standard_gridworld
from irlnet.envs.prompt import (SUBJECTS, JudgeTables, PromptEnv, SyntheticJudge, all_tasks, expected_delta,
                                task_pool)
from irlnet.envs.tabular import BanditEnv
from irlnet.irl import (DatasetError, Discriminator, DiscriminatorSaturationWarning, ExpertDataset,
                        ExpertRecord, GAILConfig, MaxEntDivergedError, RewardModelConfig,
                        UnsupportedExpertError, bce_from_logits, gail_train, max_margin_irl,
                        maxent_gradient, maxent_irl, rlhf_train, surrogate_reward, train_reward_model)
from irlnet.irl.maxent import expert_statistics
from irlnet.judge import synthetic_expert_dataset
from irlnet.mdp import (FeatureMap, TabularMDP, Trajectory, greedy_schedule, policy_feature_expectations,
                        rollout, soft_value_iteration, state_visitation)
from irlnet.ppo import PPOConfig, policy_probs, train_ppo

from oracles import maxent_log_likelihood

TABLES = JudgeTables()


# ------------------------------------------------------------ dataset

def scored(prompt, scores):
    return [ExpertRecord((0.0,), a, s, prompt, f"{prompt}-{a}") for a, s in enumerate(scores)]


def test_expert_pairs_pick_best_with_lowest_id_ties():
    ds = ExpertDataset(scored("p", [0.1, 0.5, 0.5]) + scored("q", [0.9, 0.0, 0.2]), n_actions=3)
    _, actions = ds.expert_pairs()
    assert actions.tolist() == [1, 0]


def test_dataset_validation():
    with pytest.raises(DatasetError):
        ExpertDataset([])
    with pytest.raises(DatasetError):
        ExpertDataset([ExpertRecord((0.0,), 9)])
    with pytest.raises(DatasetError):
        ExpertDataset([ExpertRecord((0.0,), 0, float("nan"))])
    with pytest.raises(DatasetError):
        ExpertDataset([ExpertRecord((0.0,), 0)], source="human")
    with pytest.raises(DatasetError):
        ExpertDataset([ExpertRecord((0.0,), 0)]).scores()


def test_dataset_jsonl_round_trip(tmp_path):
    ds = synthetic_expert_dataset(3, seed=1)
    ds.save(tmp_path / "d.jsonl")
    back = ExpertDataset.load(tmp_path / "d.jsonl")
    assert back.records == ds.records
    (tmp_path / "bad.jsonl").write_text('{"operation_id": 1}\n')
    with pytest.raises(DatasetError, match="bad.jsonl:1"):
        ExpertDataset.load(tmp_path / "bad.jsonl")


def test_trajectory_round_trip():
    trajs = [Trajectory((0, 1, 2), (2, 2, 1), (0.0, 0.0, 0.0)), Trajectory((3, 3), (0, 1), (0.0, 0.0))]
    ds = ExpertDataset.from_trajectories(trajs, np.eye(4), 3)
    back = ds.trajectories()
    assert [(t.states, t.actions) for t in back] == [(t.states, t.actions) for t in trajs]


# ------------------------------------------------------------ max-margin

def known_theta_gridworld():
    mdp, phi = gridworld_as_tabular(standard_gridworld(horizon=10, discount=0.9))
    theta = np.zeros(25)
    theta[24], theta[12] = 1.0, -0.5
    expert = rollout(mdp, greedy_schedule(mdp, phi.state_features @ theta), 5, seed=0)
    return mdp, phi, ExpertDataset.from_trajectories(expert, phi.state_features, 4)


def test_max_margin_recovers_expert_feature_expectations():
    mdp, phi, ds = known_theta_gridworld()
    res = max_margin_irl(mdp, phi, ds, epsilon=0.1, max_iters=50)
    mu = policy_feature_expectations(mdp, res.policy, phi)
    assert np.linalg.norm(mu - res.expert_feature_expectations) <= 0.1
    assert np.all(np.diff(np.minimum.accumulate(res.margins)) <= 0)
    assert np.all(np.diff(res.margins) <= 1e-12)


def test_max_margin_first_margin_is_distance_to_initial_policy():
    mdp, phi, ds = known_theta_gridworld()
    res = max_margin_irl(mdp, phi, ds)
    mu0 = policy_feature_expectations(mdp, res.policies[0], phi)
    assert res.margins[0] == pytest.approx(np.linalg.norm(res.expert_feature_expectations - mu0))


def test_max_margin_expert_equal_to_initial_policy():
    mdp, phi = gridworld_as_tabular(standard_gridworld(horizon=6))
    pi0 = greedy_schedule(mdp, np.zeros(25))
    ds = ExpertDataset.from_trajectories(rollout(mdp, pi0, 3, 0), phi.state_features, 4)
    res = max_margin_irl(mdp, phi, ds)
    assert len(res.margins) == 1 and res.margins[0] == pytest.approx(0.0, abs=1e-12)


def test_max_margin_rejects_judge_data():
    mdp, phi = gridworld_as_tabular(standard_gridworld())
    with pytest.raises(UnsupportedExpertError):
        max_margin_irl(mdp, phi, synthetic_expert_dataset(2))


# ------------------------------------------------------------ MaxEnt

def three_state_mdp():
    # deterministic: action 0 stays, action 1 advances cyclically
    P = np.zeros((3, 2, 3))
    for s in range(3):
        P[s, 0, s] = 1.0
        P[s, 1, (s + 1) % 3] = 1.0
    return TabularMDP(P, np.zeros((3, 2)), 3, np.full(3, 1 / 3))


def test_maxent_gradient_matches_finite_differences():
    mdp = three_state_mdp()
    phi = FeatureMap(np.array([[1.0, 0.2], [0.0, 1.0], [0.5, -0.7]]))
    paths = [((0, 1, 2), (1, 1, 0)), ((0, 0, 1), (0, 1, 1)), ((2, 0, 0), (1, 0, 0)),
             ((1, 1, 2), (0, 1, 0))]
    ds = ExpertDataset.from_trajectories([Trajectory(s, a, (0.0,) * 3) for s, a in paths],
                                         phi.state_features, 2)
    mu_e, start = expert_statistics(mdp, phi, ds)
    rng = np.random.default_rng(0)
    for _ in range(5):
        theta = rng.normal(size=2)
        analytic = maxent_gradient(theta, mdp, phi, mu_e, start)
        numeric = np.array([(maxent_log_likelihood(theta + e, mdp, phi.state_features, paths)
                             - maxent_log_likelihood(theta - e, mdp, phi.state_features, paths)) / 2e-5
                            for e in np.eye(2) * 1e-5])
        assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-4


def test_maxent_stationary_when_visitation_matches():
    mdp = three_state_mdp()
    phi = FeatureMap.one_hot(3)
    theta = np.array([0.3, -0.2, 0.1])
    pi = soft_value_iteration(mdp, phi.state_features @ theta)
    mu_model = state_visitation(mdp, pi) @ phi.state_features
    assert np.allclose(maxent_gradient(theta, mdp, phi, mu_model, mdp.start_distribution), 0.0,
                       atol=1e-12)
    # one state: every trajectory has the same features, so theta never moves
    one = TabularMDP(np.ones((1, 2, 1)), np.zeros((1, 2)), 3, np.ones(1))
    ds = ExpertDataset.from_trajectories([Trajectory((0, 0, 0), (1, 0, 1), (0.0,) * 3)], np.ones((1, 1)), 2)
    assert maxent_irl(one, FeatureMap(np.ones((1, 1))), ds, theta0=[0.7], iters=20).theta == \
        pytest.approx([0.7])


def test_maxent_recovers_gridworld_policy():
    mdp, phi = gridworld_as_tabular(GridWorld(3, 3, horizon=4, start=None))
    theta_star = np.zeros(9)
    theta_star[8], theta_star[4] = 2.0, -1.0
    pi_star = soft_value_iteration(mdp, phi.state_features @ theta_star)
    ds = ExpertDataset.from_trajectories(rollout(mdp, pi_star, 5000, 1), phi.state_features, 4)
    learned = maxent_irl(mdp, phi, ds, lr=0.1, iters=500)
    pi = soft_value_iteration(mdp, learned.state_reward(phi))
    assert (pi[0].argmax(axis=1) == pi_star[0].argmax(axis=1)).sum() >= 8


def test_maxent_divergence_aborts():
    mdp = three_state_mdp()
    phi = FeatureMap(np.eye(3) * 1e3)
    ds = ExpertDataset.from_trajectories([Trajectory((0, 0, 0), (0, 0, 0), (0.0,) * 3)],
                                         phi.state_features, 2)
    with pytest.raises(MaxEntDivergedError):
        maxent_irl(mdp, phi, ds, lr=1e6, iters=5)


# ------------------------------------------------------------ GAIL

def test_surrogate_reward_at_chance_and_clip():
    assert surrogate_reward(np.zeros(4)) == pytest.approx(np.full(4, np.log(2)))
    assert surrogate_reward(np.array([50.0, -50.0])) == pytest.approx([10.0, 0.0], abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30))
def test_surrogate_reward_is_minus_log_one_minus_d(z):
    d = 1 / (1 + np.exp(-z))
    if d < 1 - 1e-9:
        assert surrogate_reward(np.array([z]), clip=100)[0] == pytest.approx(-np.log1p(-d), rel=1e-6)


def test_discriminator_loss_at_chance():
    z = np.zeros(8)
    y = np.array([1, 0] * 4, dtype=float)
    assert 2 * bce_from_logits(z, y) == pytest.approx(2 * np.log(2))


def test_discriminator_learns_to_separate():
    disc = Discriminator(2, 3, GAILConfig(disc_learning_rate=1e-2), 0)
    e_obs, g_obs = np.ones((32, 2)), np.ones((32, 2))
    e_act, g_act = np.zeros(32, dtype=int), np.full(32, 2)
    for _ in range(100):
        disc.step(e_obs, e_act, g_obs, g_act)
    assert disc.accuracy(e_obs, e_act, g_obs, g_act) == 1.0


def test_discriminator_saturation_falls_back_to_smoothing():
    disc = Discriminator(1, 2, GAILConfig(), 0)
    disc.net.biases[-1][:] = 50.0
    with pytest.warns(DiscriminatorSaturationWarning):
        disc.step(np.ones((4, 1)), np.zeros(4, dtype=int), np.ones((4, 1)), np.ones(4, dtype=int))
    assert disc.smoothing == 0.1


def test_gail_rejects_mismatched_features():
    env = BanditEnv([0.0, 1.0], obs_dim=3)
    ds = ExpertDataset([ExpertRecord((1.0,), 1)], "tabular_policy", 2)
    with pytest.raises(ValueError, match="dim"):
        gail_train(env, ds, GAILConfig(), 0)


def test_gail_bandit_imitation_and_determinism():
    env = BanditEnv(np.zeros(4))
    ds = ExpertDataset([ExpertRecord((1.0,), 2)] * 20, "tabular_policy", 4)
    cfg = GAILConfig(ppo=PPOConfig(iterations=60, episodes_per_iteration=32),
                     disc_steps_per_iteration=5, disc_hidden_dims=(16,),
                     disc_learning_rate=1e-3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DiscriminatorSaturationWarning)
        a = gail_train(env, ds, cfg, 3)
        b = gail_train(env, ds, cfg, 3)
    assert a.curve == b.curve
    assert policy_probs(a.agent, np.ones((1, 1)))[0].argmax() == 2


# ------------------------------------------------------------ reward model and RLHF

def test_reward_model_requires_scores():
    with pytest.raises(DatasetError):
        train_reward_model(ExpertDataset([ExpertRecord((0.0,), 0)]))


def test_reward_model_constant_scores():
    rng = np.random.default_rng(0)
    recs = [ExpertRecord(tuple(rng.normal(size=3)), int(rng.integers(7)), 0.42, f"p{i // 7}")
            for i in range(140)]
    model = train_reward_model(ExpertDataset(recs), RewardModelConfig(steps=2000), seed=0)
    held = [r for r in recs if r.raw_prompt in set(model.heldout_groups)]
    pred = model.predict(np.array([r.state_features for r in held]), [r.action for r in held])
    assert np.abs(pred - 0.42).max() < 0.01


def test_reward_model_linear_scores():
    rng = np.random.default_rng(1)
    recs = []
    for i in range(300):
        x = rng.uniform(-1, 1, size=3)
        recs.append(ExpertRecord(tuple(x), int(rng.integers(7)), float(0.7 * x[1]), f"p{i}"))
    model = train_reward_model(ExpertDataset(recs), RewardModelConfig(steps=2000), seed=1)
    assert model.heldout_mse < 0.01


def heldout_kendall_tau(seed):
    ds = synthetic_expert_dataset(50, seed, TABLES)
    model = train_reward_model(ds, seed=seed)
    by_prompt = {t.raw_text: t for t in all_tasks(TABLES)}
    taus = []
    for prompt in model.heldout_groups:
        recs = [r for r in ds.records if r.raw_prompt == prompt]
        pred = model.predict(np.array([r.state_features for r in recs]), [r.action for r in recs])
        true = TABLES.class_scores(by_prompt[prompt].preference_class)[[r.action for r in recs]]
        taus.append(kendalltau(pred, true)[0])
    return float(np.mean(taus))


def test_reward_model_ranks_operations():
    assert heldout_kendall_tau(0) >= 0.8


def prompt_oracle(tables, judge):
    """Recover the task from its features and return the judge's true delta."""
    lookup = {(t.subject, t.object): t for t in all_tasks(tables)}

    def reward(obs, action):
        subject = int(np.argmax(obs[:len(SUBJECTS)]))
        obj = int(np.argmax(obs[len(SUBJECTS):-1]))
        task = lookup[(subject, obj)]
        return judge.score(task, action) - judge.score(task, None)

    return reward


def test_oracle_injection_reproduces_ppo_bit_for_bit():
    pool, _ = task_pool(50, 0, TABLES)
    judge = SyntheticJudge(TABLES, noise_seed=0)
    cfg = PPOConfig(iterations=10, episodes_per_iteration=32)
    ppo = train_ppo(PromptEnv(pool, judge), cfg, seed=4)
    rlhf = rlhf_train(PromptEnv(pool, judge), None, cfg, seed=4,
                      reward_model=prompt_oracle(TABLES, judge))
    assert rlhf.curve == ppo.curve


def test_rlhf_bandit_with_perfect_model():
    means = np.zeros(7)
    means[5] = 1.0
    res = rlhf_train(BanditEnv(means), None, PPOConfig(iterations=200), seed=0,
                     reward_model=lambda obs, a: means[a])
    assert policy_probs(res.agent, np.ones((1, 1)))[0, 5] > 0.95


def test_rlhf_single_action_env_constant_curve():
    res = rlhf_train(BanditEnv([0.5]), None, PPOConfig(iterations=5, episodes_per_iteration=8),
                     seed=0, reward_model=lambda obs, a: 0.0)
    assert {row["mean_reward"] for row in res.curve} == {0.5}


def test_rlhf_end_to_end_on_prompt_env():
    pool, _ = task_pool(50, 0, TABLES)
    env = PromptEnv(pool, SyntheticJudge(TABLES, 0))
    res = rlhf_train(env, synthetic_expert_dataset(50, 0, TABLES), PPOConfig(iterations=150), seed=0)
    greedy = res.agent.greedy(np.array([env.features(t) for t in pool]))
    chosen = dict(zip(pool, greedy))
    # noise-free value of the greedy policy; uniform is about 0.13, the oracle about 0.75
    assert expected_delta(TABLES, pool, lambda t: np.eye(7)[chosen[t]]) > 0.6
    assert res.reward_model.heldout_mse < 0.01
