"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The full default bench (5 seeds) runs once per module and feeds the ordering
and convergence criteria. Expect roughly three minutes in total.
"""
import json
import time
import warnings

import numpy as np
import pytest

from irlnet.config import load_config
from irlnet.envs.gridworld import GridWorld, gridworld_as_tabular
from irlnet.envs.prompt import PromptEnv, SyntheticJudge, task_pool
from irlnet.envs.tabular import TabularEnv, chain_mdp
from irlnet.irl import (DiscriminatorSaturationWarning, ExpertDataset, GAILConfig, gail_train, max_margin_irl,
                        maxent_gradient, rlhf_train)
from irlnet.irl.maxent import expert_statistics
from irlnet.judge import synthetic_expert_dataset
from irlnet.mdp import (FeatureMap, Trajectory, greedy_schedule, policy_feature_expectations, rollout,
                        soft_value_iteration, state_visitation)
from irlnet.ppo import PPOConfig, policy_probs, train_ppo
from irlnet.runner import bench, collect, train

from oracles import maxent_log_likelihood, visitation_by_enumeration
from test_irl import TABLES, heldout_kendall_tau, known_theta_gridworld, prompt_oracle, three_state_mdp
from test_nn import COMBOS, gradient_check

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    def report(number: int, title: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number} {title}: {detail}")
        assert ok, detail
    return report


@pytest.fixture(scope="module")
def bench_report(tmp_path_factory):
    return bench(load_config(), tmp_path_factory.mktemp("bench"))


def test_1_ordering(bench_report, verdict):
    s = bench_report["summary"]
    gail, ppo, rand = s["gail"]["mean"], s["ppo"]["mean"], s["random"]["mean"]
    gap = gail - ppo
    seeds_ok = bench_report["ordering_seeds"]
    runtime = bench_report["wall_clock_s"]
    ok = gail > ppo > rand and gap >= 0.1 and seeds_ok >= 4 and runtime <= 600
    verdict(1, "ordering GAIL > PPO > random", ok,
            f"gail {gail:.3f}±{s['gail']['std']:.3f}, ppo {ppo:.3f}±{s['ppo']['std']:.3f}, "
            f"random {rand:.3f}, gap {gap:.3f}, ordered seeds {seeds_ok}/5, {runtime:.0f}s")


def test_2_convergence(bench_report, verdict):
    checks = [r["convergence"] for r in bench_report["per_seed"]]
    ok = len(checks) == 5 and all(c["tail_mean"] - c["random_expectation"] >= 3 * c["tail_std"]
                                  for c in checks)
    detail = ", ".join(f"{c['tail_mean']:.3f}-{c['random_expectation']:.3f} vs 3x{c['tail_std']:.3f}"
                       for c in checks)
    verdict(2, "GAIL tail mean clears random by 3 std", ok, detail)


def test_3_ppo_gridworld(tmp_path, verdict):
    start = time.time()
    run = train(load_config(), "ppo", "gridworld", 0, tmp_path)
    elapsed = time.time() - start
    meta = json.loads((run / "run.json").read_text())
    ok = meta["greedy_return"] >= 0.95 * meta["optimal_return"] and elapsed <= 120
    verdict(3, "PPO gridworld near-optimal", ok,
            f"greedy {meta['greedy_return']:.4f} vs optimum {meta['optimal_return']:.4f}, {elapsed:.0f}s")


def test_4_maxent_exactness(verdict):
    mdp = three_state_mdp()
    phi = FeatureMap(np.array([[1.0, 0.2], [0.0, 1.0], [0.5, -0.7]]))
    paths = [((0, 1, 2), (1, 1, 0)), ((0, 0, 1), (0, 1, 1)), ((2, 0, 0), (1, 0, 0)),
             ((1, 1, 2), (0, 1, 0))]
    ds = ExpertDataset.from_trajectories([Trajectory(s, a, (0.0,) * 3) for s, a in paths],
                                         phi.state_features, 2)
    mu_e, start = expert_statistics(mdp, phi, ds)
    rng = np.random.default_rng(0)
    grad_err = 0.0
    for _ in range(20):
        theta = rng.normal(size=2)
        analytic = maxent_gradient(theta, mdp, phi, mu_e, start)
        numeric = np.array([(maxent_log_likelihood(theta + e, mdp, phi.state_features, paths)
                             - maxent_log_likelihood(theta - e, mdp, phi.state_features, paths)) / 2e-5
                            for e in np.eye(2) * 1e-5])
        grad_err = max(grad_err, np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))

    grid, gphi = gridworld_as_tabular(GridWorld(3, 3, {(2, 2): 1.0}, horizon=4, start=None))
    soft = soft_value_iteration(grid, gphi.state_features @ rng.normal(size=9))
    visit_err = np.abs(state_visitation(grid, soft) - visitation_by_enumeration(grid, soft)).max()
    ok = grad_err < 1e-4 and visit_err < 1e-8
    verdict(4, "MaxEnt gradient and visitation exact", ok,
            f"gradient rel err {grad_err:.2e}, visitation max err {visit_err:.2e}")


def test_5_max_margin(verdict):
    mdp, phi, ds = known_theta_gridworld()
    res = max_margin_irl(mdp, phi, ds, epsilon=0.1, max_iters=50)
    dist = np.linalg.norm(policy_feature_expectations(mdp, res.policy, phi) - res.expert_feature_expectations)
    running_min = np.minimum.accumulate(res.margins)
    monotone = bool(np.all(np.diff(running_min) <= 0))
    ok = dist <= 0.1 and monotone
    verdict(5, "max-margin recovery", ok,
            f"feature distance {dist:.4f} after {len(res.margins)} iterations, running min monotone {monotone}")


def test_6_gail_chain(verdict):
    mdp = chain_mdp()
    phi = FeatureMap.one_hot(mdp.n_states)
    trajs = rollout(mdp, greedy_schedule(mdp), 30, seed=0)
    ds = ExpertDataset.from_trajectories(trajs, phi.state_features, mdp.n_actions)
    cfg = GAILConfig(ppo=PPOConfig(iterations=500, episodes_per_iteration=16, discount=0.9),
                     disc_steps_per_iteration=10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DiscriminatorSaturationWarning)
        res = gail_train(TabularEnv(mdp), ds, cfg, seed=0)
    states = np.array([s for t in trajs for s in t.states])
    actions = np.array([a for t in trajs for a in t.actions])
    greedy = policy_probs(res.agent, phi.state_features[states]).argmax(axis=1)
    rate = float((greedy == actions).mean())
    verdict(6, "GAIL chain imitation", rate >= 0.9,
            f"action match {rate:.3f} over {len(actions)} expert steps on {len(set(states.tolist()))} states")


def test_7_network_gradients(verdict):
    worst = {}
    for hidden, head, wrt_logits in COMBOS:
        worst[(hidden, head, wrt_logits)] = max(gradient_check(hidden, head, wrt_logits, seed)
                                                for seed in range(100))
    err = max(worst.values())
    verdict(7, "MLP finite differences, 3-4-2, 100 trials", err < 1e-4,
            f"worst rel err {err:.2e} across {len(COMBOS)} combinations")


def test_8_reward_model_and_oracle(verdict):
    taus = [heldout_kendall_tau(seed) for seed in range(3)]
    pool, _ = task_pool(50, 0, TABLES)
    judge = SyntheticJudge(TABLES, noise_seed=0)
    cfg = PPOConfig(iterations=20, episodes_per_iteration=32)
    ppo = train_ppo(PromptEnv(pool, judge), cfg, seed=4)
    rlhf = rlhf_train(PromptEnv(pool, judge), None, cfg, seed=4, reward_model=prompt_oracle(TABLES, judge))
    identical = rlhf.curve == ppo.curve
    ok = min(taus) >= 0.8 and identical
    verdict(8, "reward model ranking and oracle injection", ok,
            f"held-out Kendall tau {', '.join(f'{t:.3f}' for t in taus)}, curves bit-identical {identical}")


def _run_bytes(run_dir):
    """Run artifacts minus timing and the dataset's absolute location."""
    skip = ("run.json", "config.json")
    files = {p.name: p.read_bytes() for p in sorted(run_dir.iterdir()) if p.name not in skip}
    meta = json.loads((run_dir / "run.json").read_text())
    meta.pop("wall_clock_s")
    snapshot = json.loads((run_dir / "config.json").read_text())
    snapshot["run"].pop("dataset", None)
    return files, meta, snapshot


def test_9_pipeline_integrity(tmp_path, verdict):
    cfg = load_config()
    a = collect(cfg, 0, tmp_path / "a.jsonl")
    collect(cfg, 0, tmp_path / "b.jsonl")
    same_data = (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    small = load_config(overrides={"env": {"n_prompts": 5},
                                   "ppo": {"iterations": 5, "episodes_per_iteration": 16},
                                   "gail": {"iterations": 5, "disc_steps_per_iteration": 2},
                                   "rlhf": {"steps": 200}, "irl": {"maxent_iters": 20}})
    pairs = [("ppo", "prompt"), ("gail", "prompt"), ("rlhf", "prompt"), ("random", "prompt"),
             ("ppo", "gridworld"), ("gail", "gridworld"), ("maxent", "gridworld"),
             ("maxmargin", "gridworld"), ("random", "gridworld")]
    differing = []
    for algo, env in pairs:
        first = _run_bytes(train(small, algo, env, 3, tmp_path / "first"))
        second = _run_bytes(train(small, algo, env, 3, tmp_path / "second"))
        if first != second:
            differing.append(f"{algo}/{env}")
    ok = len(a) == 350 and same_data and not differing
    verdict(9, "pipeline integrity", ok,
            f"{len(a)} records, collection byte-identical {same_data}, "
            f"{len(pairs) - len(differing)}/{len(pairs)} runs bit-reproducible {differing or ''}")
