"""Experiment plumbing behind the CLI: collection, training runs, evaluation, benchmark."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as C
from .envs.gridworld import gridworld_as_tabular, gridworld_env
from .envs.prompt import OBS_DIM, OPERATIONS, PromptEnv, ProxyJudge, SyntheticJudge, expected_delta, \
    state_features, task_pool
from .irl.dataset import ExpertDataset
from .irl.gail import gail_train
from .irl.maxent import maxent_irl
from .irl.maxmargin import max_margin_irl
from .irl.rlhf import rlhf_train
from .judge import ExternalJudge, collect_expert_dataset, make_transport
from .mdp import greedy_schedule, policy_return, rollout, soft_value_iteration, value_iteration
from .nn import MLP
from .ppo import train_ppo

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
POLICY_FORMAT = 1

VALID_PAIRS = {
    "ppo": ("prompt", "gridworld"),
    "gail": ("prompt", "gridworld"),
    "rlhf": ("prompt",),
    "maxent": ("gridworld",),
    "maxmargin": ("gridworld",),
    "random": ("prompt", "gridworld"),
}


class UsageError(ValueError):
    pass


class PolicyLoadError(RuntimeError):
    pass


def valid_pairs_text() -> str:
    return ", ".join(f"{a}/{e}" for a, envs in VALID_PAIRS.items() for e in envs)


def make_judge(cfg: dict, seed: int):
    j = cfg["judge"]
    if j["mode"] == "synthetic":
        return SyntheticJudge(C.judge_tables(cfg), noise_seed=seed)
    if j["mode"] == "external":
        if not j.get("endpoint"):
            raise C.ConfigError("judge.mode is 'external' but judge.endpoint is not set")
        return ExternalJudge(make_transport(j["endpoint"], int(j["timeout_ms"])), int(j["retries"]))
    raise C.ConfigError(f"judge.mode must be 'synthetic' or 'external', got {j['mode']!r}")


def collect(cfg: dict, seed: int, out_path, n_prompts: int | None = None) -> ExpertDataset:
    judge = make_judge(cfg, seed)
    n = n_prompts if n_prompts is not None else cfg["env"]["n_prompts"]
    source = "synthetic_judge" if cfg["judge"]["mode"] == "synthetic" else "external_judge"
    try:
        ds = collect_expert_dataset(judge, n, seed, C.judge_tables(cfg), source)
    finally:
        if hasattr(judge, "close"):
            judge.close()
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    ds.save(out_path)
    return ds


# ---------------------------------------------------------------- artifacts

def write_csv(path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row.get(h, "")) for h in header])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def read_curve(run_dir) -> list[tuple[int, float]]:
    with open(Path(run_dir) / "curve.csv") as fh:
        return [(int(r["iteration"]), float(r["mean_reward"])) for r in csv.DictReader(fh)]


def _write_run(run_dir: Path, cfg: dict, algo: str, env: str, seed: int, curve: list,
               started: float, extra: dict | None = None, dataset=None) -> None:
    snapshot = {**cfg, "run": {"algo": algo, "env": env, "seed": seed,
                               "dataset": None if dataset is None else str(dataset)}}
    (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2))
    write_csv(run_dir / "curve.csv", ["iteration", "mean_reward"], curve)
    aux = sorted({k for row in curve for k in row} - {"iteration", "mean_reward"})
    if aux:
        write_csv(run_dir / "losses.csv", ["iteration", *aux], curve)
    meta = {"schema_version": SCHEMA_VERSION, "run_id": run_dir.name, "algo": algo, "env": env,
            "seed": seed, "wall_clock_s": time.time() - started, **(extra or {})}
    (run_dir / "run.json").write_text(json.dumps(meta, indent=2))


def save_policy(path, kind: str, env: str, obs_dim: int, n_actions: int, **payload) -> None:
    doc = {"format_version": POLICY_FORMAT, "kind": kind, "env": env,
           "obs_dim": obs_dim, "n_actions": n_actions, **payload}
    Path(path).write_text(json.dumps(doc))


def load_policy(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PolicyLoadError(f"cannot read policy {path}: {exc}") from exc
    if doc.get("format_version") != POLICY_FORMAT:
        raise PolicyLoadError(f"{path}: unsupported policy format")
    if doc["kind"] == "mlp":
        doc["actor"] = MLP.from_dict(doc["actor"])
    doc.setdefault("name", Path(path).parent.name if Path(path).name == "policy.json"
                   else Path(path).stem)
    return doc


# ---------------------------------------------------------------- training

def _prompt_setup(cfg: dict, seed: int):
    tables = C.judge_tables(cfg)
    pool, held_out = task_pool(cfg["env"]["n_prompts"], seed, tables)
    judge = SyntheticJudge(tables, noise_seed=seed)
    return tables, pool, held_out, judge


def _dataset_for(cfg: dict, seed: int, dataset_path, run_dir: Path) -> tuple[ExpertDataset, Path]:
    if dataset_path is None:
        dataset_path = run_dir / "expert.jsonl"
        ds = collect(cfg, seed, dataset_path)
    else:
        ds = ExpertDataset.load(dataset_path)
    return ds, Path(dataset_path)


def _tabular_expert(cfg: dict, mdp, features, seed: int) -> ExpertDataset:
    trajs = rollout(mdp, greedy_schedule(mdp), cfg["irl"]["expert_episodes"], seed)
    return ExpertDataset.from_trajectories(trajs, features.state_features, mdp.n_actions)


def train(cfg: dict, algo: str, env: str, seed: int, out_dir, dataset_path=None) -> Path:
    if algo not in VALID_PAIRS or env not in VALID_PAIRS[algo]:
        raise UsageError(f"unsupported algo/env combination {algo}/{env}; "
                         f"valid pairs: {valid_pairs_text()}")
    started = time.time()
    run_dir = Path(out_dir) / f"{algo}-{env}-seed{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    extra: dict = {}
    used_dataset = None
    if env == "prompt":
        tables, pool, _, judge = _prompt_setup(cfg, seed)
        true_env = PromptEnv(pool, judge)
        obs_dim, n_actions = true_env.obs_dim, true_env.n_actions
        if algo == "ppo":
            reward_judge = ProxyJudge(tables) if cfg["env"]["ppo_reward"] == "proxy" else judge
            res = train_ppo(PromptEnv(pool, reward_judge, judge), C.ppo_config(cfg), seed)
            curve, actor, critic = res.curve, res.agent.actor, res.agent.critic
        elif algo == "gail":
            ds, used_dataset = _dataset_for(cfg, seed, dataset_path, run_dir)
            res = gail_train(true_env, ds, C.gail_config(cfg), seed)
            curve, actor, critic = res.curve, res.agent.actor, res.agent.critic
            res.discriminator.net.save(run_dir / "discriminator.json")
        elif algo == "rlhf":
            ds, used_dataset = _dataset_for(cfg, seed, dataset_path, run_dir)
            res = rlhf_train(true_env, ds, C.ppo_config(cfg), seed,
                             reward_config=C.reward_model_config(cfg))
            curve, actor, critic = res.curve, res.agent.actor, res.agent.critic
            res.reward_model.net.save(run_dir / "reward_model.json")
            extra["reward_model_heldout_mse"] = res.reward_model.heldout_mse
        else:
            curve = _random_curve(true_env, cfg["ppo"], seed)
            save_policy(run_dir / "policy.json", "random", env, obs_dim, n_actions)
            extra["analytic_uniform_delta"] = expected_delta(tables, pool, np.full(n_actions, 1 / n_actions))
        if algo != "random":
            save_policy(run_dir / "policy.json", "mlp", env, obs_dim, n_actions,
                        actor=actor.to_dict(), critic=critic.to_dict())
    else:
        gw = C.gridworld(cfg)
        mdp, features = gridworld_as_tabular(gw)
        genv = gridworld_env(gw)
        opt_value = float(value_iteration(mdp)[0] @ mdp.start_distribution)
        extra["optimal_return"] = opt_value
        tabular_policy = None
        if algo in ("ppo", "gail"):
            if algo == "ppo":
                res = train_ppo(genv, C.ppo_config(cfg, "gridworld"), seed)
            else:
                ds = (_tabular_expert(cfg, mdp, features, seed) if dataset_path is None
                      else ExpertDataset.load(dataset_path, "tabular_policy", mdp.n_actions))
                used_dataset = dataset_path
                res = gail_train(genv, ds, C.gail_config(cfg, "gridworld"), seed)
            curve = res.curve
            greedy = res.agent.greedy(features.state_features)
            extra["greedy_return"] = policy_return(mdp, greedy)
            save_policy(run_dir / "policy.json", "mlp", env, genv.obs_dim, genv.n_actions,
                        actor=res.agent.actor.to_dict(), critic=res.agent.critic.to_dict())
        elif algo in ("maxent", "maxmargin"):
            ds = (_tabular_expert(cfg, mdp, features, seed) if dataset_path is None
                  else ExpertDataset.load(dataset_path, "tabular_policy", mdp.n_actions))
            used_dataset = dataset_path
            irl = cfg["irl"]
            if algo == "maxent":
                curve = []

                def track(it, theta):
                    pi = soft_value_iteration(mdp, features.state_features @ theta)
                    curve.append({"iteration": it, "mean_reward": policy_return(mdp, pi)})

                reward = maxent_irl(mdp, features, ds, irl["maxent_lr"], irl["maxent_iters"],
                                    callback=track)
                theta = reward.theta
                tabular_policy = soft_value_iteration(mdp, features.state_features @ theta)
            else:
                mm = max_margin_irl(mdp, features, ds, irl["maxmargin_epsilon"],
                                    irl["maxmargin_max_iters"])
                curve = [{"iteration": i, "mean_reward": policy_return(mdp, pi), "margin": m}
                         for i, (pi, m) in enumerate(zip(mm.policies, mm.margins))]
                theta = mm.theta
                tabular_policy = np.eye(mdp.n_actions)[mm.policy]
                extra["feature_distance"] = mm.policy_distance
            extra["theta"] = theta.tolist()
        else:
            curve = _random_curve(genv, cfg["ppo"], seed)
            tabular_policy = np.full((mdp.horizon, mdp.n_states, mdp.n_actions), 1 / mdp.n_actions)
        if tabular_policy is not None:
            save_policy(run_dir / "policy.json", "tabular", env, features.n_features,
                        mdp.n_actions, table=np.asarray(tabular_policy).tolist())
            extra["policy_return"] = policy_return(mdp, tabular_policy)
    _write_run(run_dir, cfg, algo, env, seed, curve, started, extra, used_dataset)
    return run_dir


def _random_curve(env, ppo_cfg: dict, seed: int) -> list[dict]:
    """Uniform action choice; every row reports the pooled mean episode reward."""
    rng = np.random.default_rng(seed)
    iters, eps = ppo_cfg["iterations"], ppo_cfg["episodes_per_iteration"]
    returns = []
    for _ in range(iters * eps):
        env.reset(rng)
        total, done = 0.0, False
        while not done:
            _, r, done, info = env.step(int(rng.integers(env.n_actions)))
            total += info.get("true_reward", r)
        returns.append(total)
    mean = float(np.mean(returns))
    return [{"iteration": i, "mean_reward": mean} for i in range(iters)]


# ---------------------------------------------------------------- evaluation

def eval_cases(cfg: dict, n_cases: int, seed: int):
    tables, _, held_out, judge = _prompt_setup(cfg, seed)
    rng = np.random.default_rng(seed)
    replace = n_cases > len(held_out)
    idx = rng.choice(len(held_out), size=n_cases, replace=replace)
    return tables, [held_out[i] for i in idx], judge


def evaluate(cfg: dict, policy_paths: list, n_cases: int, seed: int) -> list[dict]:
    """Per-case quality gain on held-out prompts plus one summary row per policy.

    Learned policies act greedily; the random policy is scored by its exact
    expectation over the seven operations.
    """
    tables, cases, judge = eval_cases(cfg, n_cases, seed)
    feats = np.array([state_features(t, judge.score(t, None)) for t in cases])
    deltas = np.array([[judge.score(t, op) - judge.score(t, None) for op in range(len(OPERATIONS))]
                       for t in cases])
    rows = []
    for path in policy_paths:
        pol = load_policy(path)
        if pol["env"] != "prompt" or pol["kind"] == "tabular":
            raise PolicyLoadError(f"{path}: only prompt-environment policies can be evaluated")
        if pol["obs_dim"] != feats.shape[1] or pol["n_actions"] != len(OPERATIONS):
            raise PolicyLoadError(f"{path}: policy expects {pol['obs_dim']} features and "
                                  f"{pol['n_actions']} actions, env has {feats.shape[1]} and "
                                  f"{len(OPERATIONS)}")
        if pol["kind"] == "mlp":
            if pol["actor"].spec.input_dim != feats.shape[1]:
                raise PolicyLoadError(f"{path}: network input dim does not match env features")
            choice = pol["actor"](feats).argmax(axis=1)
            case_delta = deltas[np.arange(len(cases)), choice]
            names = [OPERATIONS[a].name for a in choice]
        elif pol["kind"] == "expert":
            choice = np.array([int(np.argmax(tables.class_scores(t.preference_class))) for t in cases])
            case_delta = deltas[np.arange(len(cases)), choice]
            names = [OPERATIONS[a].name for a in choice]
        elif pol["kind"] == "random":
            case_delta = deltas.mean(axis=1)
            names = ["uniform"] * len(cases)
        else:
            raise PolicyLoadError(f"{path}: unknown policy kind {pol['kind']!r}")
        for i, (task, name, d) in enumerate(zip(cases, names, case_delta)):
            rows.append({"policy": pol["name"], "case_id": i, "raw_prompt": task.raw_text,
                         "operation": name, "quality_delta": float(d)})
        rows.append({"policy": pol["name"], "case_id": "mean", "raw_prompt": "",
                     "operation": "", "quality_delta": float(np.mean(case_delta))})
    return rows


EVAL_HEADER = ["policy", "case_id", "raw_prompt", "operation", "quality_delta"]


# ---------------------------------------------------------------- benchmark

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "irlnet benchmark report",
    "type": "object",
    "required": ["schema_version", "seeds", "per_seed", "summary", "gap_irl_minus_drl",
                 "ordering_seeds", "ordering_pass", "convergence_pass", "stages", "wall_clock_s"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seeds": {"type": "array", "items": {"type": "integer"}},
        "per_seed": {"type": "array", "items": {
            "type": "object",
            "required": ["seed", "delta", "ordering"],
            "properties": {
                "seed": {"type": "integer"},
                "delta": {"type": "object",
                          "properties": {k: {"type": "number"} for k in ("gail", "ppo", "random")}},
                "ordering": {"type": "boolean"},
                "convergence": {"type": "object", "properties": {
                    "tail_mean": {"type": "number"}, "tail_std": {"type": "number"},
                    "random_expectation": {"type": "number"}, "pass": {"type": "boolean"}}},
            }}},
        "summary": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["mean", "std"],
            "properties": {"mean": {"type": "number"}, "std": {"type": "number"}}}},
        "gap_irl_minus_drl": {"type": ["number", "null"]},
        "ordering_seeds": {"type": "integer"},
        "ordering_pass": {"type": "boolean"},
        "convergence_pass": {"type": "boolean"},
        "stages": {"type": "array", "items": {
            "type": "object", "required": ["seed", "stage", "status"],
            "properties": {"seed": {"type": "integer"}, "stage": {"type": "string"},
                           "status": {"enum": ["ok", "failed"]}, "error": {"type": "string"}}}},
        "wall_clock_s": {"type": "number"},
        "config": {"type": "object"},
    },
}


def convergence_check(curve: list[float], random_expectation: float) -> dict:
    n = max(1, int(math.ceil(0.1 * len(curve))))
    tail = np.asarray(curve[-n:], dtype=np.float64)
    mean, std = float(tail.mean()), float(tail.std())
    return {"tail_mean": mean, "tail_std": std, "random_expectation": random_expectation,
            "pass": bool(mean - random_expectation >= 3 * std)}


def _bench_seed(cfg: dict, seed: int, out_dir: str) -> dict:
    seed_dir = Path(out_dir) / f"seed{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    stages, out = [], {"seed": seed}

    def stage(name, fn):
        try:
            val = fn()
            stages.append({"seed": seed, "stage": name, "status": "ok"})
            return val
        except Exception as exc:  # recorded in the report, later stages skipped
            log.error("seed %d stage %s failed: %s", seed, name, exc)
            stages.append({"seed": seed, "stage": name, "status": "failed",
                           "error": "".join(traceback.format_exception_only(type(exc), exc)).strip()})
            raise

    try:
        dataset = seed_dir / "expert.jsonl"
        stage("collect", lambda: collect(cfg, seed, dataset))
        ppo_dir = stage("train_ppo", lambda: train(cfg, "ppo", "prompt", seed, seed_dir))
        gail_dir = stage("train_gail", lambda: train(cfg, "gail", "prompt", seed, seed_dir, dataset))
        tables, pool, _, _ = _prompt_setup(cfg, seed)
        save_policy(seed_dir / "random.json", "random", "prompt", OBS_DIM, len(OPERATIONS), name="random")
        rows = stage("eval", lambda: evaluate(
            cfg, [ppo_dir / "policy.json", gail_dir / "policy.json", seed_dir / "random.json"],
            cfg["env"]["n_eval_cases"], seed))
        write_csv(seed_dir / "eval.csv", EVAL_HEADER, rows)
        means = {r["policy"]: r["quality_delta"] for r in rows if r["case_id"] == "mean"}
        delta = {"ppo": means[ppo_dir.name], "gail": means[gail_dir.name], "random": means["random"]}
        out["delta"] = delta
        out["ordering"] = bool(delta["gail"] > delta["ppo"] > delta["random"])
        rand_exp = expected_delta(tables, pool, np.full(len(OPERATIONS), 1 / len(OPERATIONS)))
        out["convergence"] = convergence_check([m for _, m in read_curve(gail_dir)], rand_exp)
    except Exception:
        out.setdefault("ordering", False)
        out.setdefault("delta", {})
    out["stages"] = stages
    return out


def bench(cfg: dict, out_dir) -> dict:
    started = time.time()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = sorted(int(s) for s in cfg["bench"]["seeds"])
    workers = int(cfg["bench"].get("workers", 1))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_bench_seed, [cfg] * len(seeds), seeds, [str(out_dir)] * len(seeds)))
    else:
        results = [_bench_seed(cfg, s, str(out_dir)) for s in seeds]
    results.sort(key=lambda r: r["seed"])
    stages = [s for r in results for s in r.pop("stages")]
    summary = {}
    for algo in ("gail", "ppo", "random"):
        vals = [r["delta"][algo] for r in results if algo in r["delta"]]
        if vals:
            summary[algo] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    complete = all(s["status"] == "ok" for s in stages) and len(summary) == 3
    gap = summary["gail"]["mean"] - summary["ppo"]["mean"] if complete else None
    ordering_seeds = sum(r["ordering"] for r in results)
    ordering_pass = bool(complete
                         and summary["gail"]["mean"] > summary["ppo"]["mean"] > summary["random"]["mean"]
                         and gap >= 0.1
                         and ordering_seeds >= math.ceil(0.8 * len(seeds)))
    convergence_pass = bool(complete and all(r["convergence"]["pass"] for r in results))
    report = {"schema_version": SCHEMA_VERSION, "seeds": seeds, "per_seed": results,
              "summary": summary, "gap_irl_minus_drl": gap, "ordering_seeds": int(ordering_seeds),
              "ordering_pass": ordering_pass, "convergence_pass": convergence_pass,
              "stages": stages, "wall_clock_s": time.time() - started, "config": cfg}
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    (out_dir / "report.schema.json").write_text(json.dumps(REPORT_SCHEMA, indent=2))
    return report
