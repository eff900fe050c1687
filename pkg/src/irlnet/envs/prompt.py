"""Prompt-engineering operation selection as a one-step decision problem.

A raw request "a [subject] with a [object]" arrives; the agent picks one of
seven prompt-crafting operations; a judge scores the crafted prompt. The
reward is the score gain over leaving the raw prompt untouched.

The synthetic judge is a stand-in for an LLM rater. Its per-class
preference tables are invented and deliberately simple so every quantity
the benchmark reports has a closed form.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

import numpy as np

SUBJECTS = ("city", "garden", "forest", "beach", "castle",
            "kitchen", "mountain", "street", "library", "harbor")
OBJECTS = ("car", "fountain", "dog", "lantern", "bridge", "tree", "boat", "clock")
OBS_DIM = len(SUBJECTS) + len(OBJECTS) + 1


@dataclass(frozen=True)
class Operation:
    id: int
    name: str
    template: str  # "{raw}" plus a clause; may reference {subject} / {object}


OPERATIONS = (
    Operation(0, "add-style", "{raw}, in the style of a detailed digital painting"),
    Operation(1, "add-detail", "{raw}, with intricate textures and fine details"),
    Operation(2, "add-composition", "{raw}, wide-angle shot with the {subject} centered"),
    Operation(3, "add-lighting", "{raw}, lit by soft golden-hour light"),
    Operation(4, "add-quality-tags", "{raw}, masterpiece, best quality, 8k, highly detailed"),
    Operation(5, "rephrase-specific",
              "{raw}, showing the {subject} in the foreground and the {object} clearly visible"),
    Operation(6, "add-negative-avoidance", "{raw}, avoiding blur, distortion and watermarks"),
)
N_OPERATIONS = len(OPERATIONS)
assert [op.id for op in OPERATIONS] == list(range(N_OPERATIONS))

_RAW_RE = re.compile(r"^an? (?P<subject>[a-z][a-z ]*?) with an? (?P<object>[a-z][a-z ]*)$")


class PromptGrammarError(ValueError):
    pass


def _article(word: str) -> str:
    return "an" if word[0] in "aeiou" else "a"


def compose_raw(subject: str, obj: str) -> str:
    return f"{_article(subject)} {subject} with {_article(obj)} {obj}"


def parse_raw(raw: str) -> tuple[str, str]:
    m = _RAW_RE.match(raw.strip())
    if m is None:
        raise PromptGrammarError(f"raw prompt does not match 'a [A] with [B]': {raw!r}")
    return m["subject"], m["object"]


def craft_prompt(raw: str, operation_id: int) -> str:
    """Expand ``raw`` with the operation's fixed template; the raw text is kept verbatim."""
    subject, obj = parse_raw(raw)
    if not 0 <= operation_id < N_OPERATIONS:
        raise ValueError(f"operation id {operation_id} out of range")
    return OPERATIONS[operation_id].template.format(raw=raw, subject=subject, object=obj)


@dataclass(frozen=True)
class PromptTask:
    subject: int
    object: int
    preference_class: int

    @property
    def raw_text(self) -> str:
        return compose_raw(SUBJECTS[self.subject], OBJECTS[self.object])


class JudgeConfigError(ValueError):
    pass


@dataclass(frozen=True)
class JudgeTables:
    """Score tables shared by the synthetic and proxy judges.

    ``preferred[c]`` is the single best operation for preference class ``c``;
    ``secondary[c]`` lists operations that earn the smaller bonus.
    """
    bases: tuple[float, ...] = (0.05, 0.0, -0.05, -0.08, 0.2, -0.15, -0.25)
    beta: float = 0.8
    gamma_bonus: float = 0.3
    noise_amplitude: float = 0.05
    baseline: float = 0.0
    subject_classes: tuple[int, ...] = (0, 1, 2, 3, 4, 0, 1, 2, 3, 4)
    preferred: tuple[int, ...] = (0, 1, 2, 3, 5)
    secondary: tuple[tuple[int, ...], ...] = ((1, 4), (2, 4), (3,), (5,), (0,))
    global_pref: int = 4

    def __post_init__(self):
        n_classes = len(self.preferred)
        if len(self.bases) != N_OPERATIONS:
            raise JudgeConfigError(f"bases needs {N_OPERATIONS} entries")
        if len(self.subject_classes) != len(SUBJECTS):
            raise JudgeConfigError(f"subject_classes needs {len(SUBJECTS)} entries")
        if len(self.secondary) != n_classes:
            raise JudgeConfigError("secondary must list one set per preference class")
        if any(not 0 <= c < n_classes for c in self.subject_classes):
            raise JudgeConfigError("subject class id out of range")
        ops = set(range(N_OPERATIONS))
        if not set(self.preferred) <= ops or any(not set(s) <= ops for s in self.secondary):
            raise JudgeConfigError("operation id out of range in preference tables")
        if self.global_pref not in ops:
            raise JudgeConfigError("global_pref out of range")
        for c in range(n_classes):
            if self.preferred[c] in self.secondary[c]:
                raise JudgeConfigError(f"class {c}: preferred op also listed as secondary")
        if self.noise_amplitude < 0:
            raise JudgeConfigError("noise_amplitude must be non-negative")

    @property
    def n_classes(self) -> int:
        return len(self.preferred)

    @classmethod
    def from_config(cls, cfg: dict) -> "JudgeTables":
        kw = {}
        for key in ("beta", "gamma_bonus", "noise_amplitude", "baseline"):
            if key in cfg:
                kw[key] = float(cfg[key])
        for key in ("bases",):
            if key in cfg:
                kw[key] = tuple(float(v) for v in cfg[key])
        for key in ("subject_classes", "preferred"):
            if key in cfg:
                kw[key] = tuple(int(v) for v in cfg[key])
        if "secondary" in cfg:
            kw["secondary"] = tuple(tuple(int(v) for v in s) for s in cfg["secondary"])
        if "global_pref" in cfg:
            kw["global_pref"] = int(cfg["global_pref"])
        return cls(**kw)

    def class_scores(self, c: int) -> np.ndarray:
        """Noise-free synthetic scores of all operations for class ``c``."""
        s = np.array(self.bases, dtype=np.float64)
        s[self.preferred[c]] += self.beta
        for op in self.secondary[c]:
            s[op] += self.gamma_bonus
        return np.clip(s, -2.0, 2.0)

    def proxy_scores(self) -> np.ndarray:
        s = np.array(self.bases, dtype=np.float64)
        s[self.global_pref] += self.beta
        return s

    def check(self, min_disagreement: float = 0.6) -> None:
        """Startup assertions on the tables; raises :class:`JudgeConfigError`."""
        noise_gap = 2 * self.noise_amplitude
        for c in range(self.n_classes):
            s = self.class_scores(c)
            best = int(np.argmax(s))
            runner_up = np.sort(s)[-2]
            if best != self.preferred[c] or s[best] - runner_up <= noise_gap:
                raise JudgeConfigError(
                    f"class {c}: preferred op {self.preferred[c]} is not the unique "
                    f"argmax by more than the noise band")
        proxy_best = int(np.argmax(self.proxy_scores()))
        disagree = np.mean([proxy_best != p for p in self.preferred])
        if disagree < min_disagreement:
            raise JudgeConfigError(
                f"proxy and synthetic judges disagree on only {disagree:.0%} of classes")


def _noise(noise_seed, task: PromptTask, op: int | None, amplitude: float) -> float:
    if noise_seed is None or amplitude == 0:
        return 0.0
    slot = N_OPERATIONS if op is None else op
    rng = np.random.default_rng([int(noise_seed), task.subject, task.object, slot])
    return float(rng.uniform(-amplitude, amplitude))


def synthetic_judge_score(task: PromptTask, operation_id: int | None, tables: JudgeTables,
                          noise_seed: int | None = None) -> float:
    """Score in [-2, 2]; ``operation_id=None`` scores the untouched raw prompt."""
    u = _noise(noise_seed, task, operation_id, tables.noise_amplitude)
    if operation_id is None:
        return float(np.clip(tables.baseline + u, -2.0, 2.0))
    s = tables.bases[operation_id]
    if operation_id == tables.preferred[task.preference_class]:
        s += tables.beta
    if operation_id in tables.secondary[task.preference_class]:
        s += tables.gamma_bonus
    return float(np.clip(s + u, -2.0, 2.0))


def proxy_judge_score(task: PromptTask, operation_id: int | None, tables: JudgeTables) -> float:
    """Context-free generic score that always favours ``global_pref``."""
    if operation_id is None:
        return tables.baseline
    return tables.bases[operation_id] + tables.beta * (operation_id == tables.global_pref)


class SyntheticJudge:
    def __init__(self, tables: JudgeTables | None = None, noise_seed: int | None = 0):
        self.tables = tables or JudgeTables()
        self.noise_seed = noise_seed

    def score(self, task: PromptTask, operation_id: int | None) -> float:
        return synthetic_judge_score(task, operation_id, self.tables, self.noise_seed)


class ProxyJudge:
    def __init__(self, tables: JudgeTables | None = None):
        self.tables = tables or JudgeTables()

    def score(self, task: PromptTask, operation_id: int | None) -> float:
        return proxy_judge_score(task, operation_id, self.tables)


def all_tasks(tables: JudgeTables) -> list[PromptTask]:
    return [PromptTask(s, o, tables.subject_classes[s])
            for s, o in itertools.product(range(len(SUBJECTS)), range(len(OBJECTS)))]


def task_pool(n_prompts: int, seed: int, tables: JudgeTables) -> tuple[list[PromptTask], list[PromptTask]]:
    """Draw ``n_prompts`` distinct (subject, object) requests; the rest are held out."""
    tasks = all_tasks(tables)
    if not 0 < n_prompts <= len(tasks):
        raise ValueError(f"n_prompts must lie in 1..{len(tasks)}")
    order = np.random.default_rng(seed).permutation(len(tasks))
    pool = [tasks[i] for i in order[:n_prompts]]
    held_out = [tasks[i] for i in order[n_prompts:]]
    return pool, held_out


def state_features(task: PromptTask, baseline_score: float) -> np.ndarray:
    x = np.zeros(OBS_DIM)
    x[task.subject] = 1.0
    x[len(SUBJECTS) + task.object] = 1.0
    x[-1] = baseline_score
    return x


@dataclass
class PromptEnv:
    """One-step environment: observe a raw prompt, choose an operation.

    ``reward_judge`` produces the training reward; ``eval_judge`` (default:
    the same judge) produces the state's baseline feature and the
    ``true_reward`` reported in ``info``.
    """
    tasks: list[PromptTask]
    reward_judge: object
    eval_judge: object = None
    horizon: int = field(default=1, init=False)

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("task pool is empty")
        if self.eval_judge is None:
            self.eval_judge = self.reward_judge
        self.task = None

    @property
    def obs_dim(self) -> int:
        return OBS_DIM

    @property
    def n_actions(self) -> int:
        return N_OPERATIONS

    def features(self, task: PromptTask) -> np.ndarray:
        return state_features(task, self.eval_judge.score(task, None))

    def reset(self, rng: np.random.Generator | None = None, task_id: int | None = None):
        if task_id is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            task_id = int(rng.integers(len(self.tasks)))
        self.task = self.tasks[task_id]
        return self.features(self.task)

    def step(self, action: int):
        if self.task is None:
            raise RuntimeError("step() called before reset()")
        if not 0 <= action < N_OPERATIONS:
            raise ValueError(f"operation id {action} out of range 0..{N_OPERATIONS - 1}")
        task, self.task = self.task, None
        reward = self.reward_judge.score(task, action) - self.reward_judge.score(task, None)
        true = self.eval_judge.score(task, action) - self.eval_judge.score(task, None)
        return self.features(task), reward, True, {"true_reward": true, "task": task}


def expected_delta(tables: JudgeTables, tasks: list[PromptTask], action_probs) -> float:
    """Closed-form mean noise-free quality gain of a per-task action distribution.

    ``action_probs`` is either one length-7 vector shared by all tasks or a
    callable ``task -> vector``.
    """
    total = 0.0
    for task in tasks:
        p = action_probs(task) if callable(action_probs) else np.asarray(action_probs)
        total += float(p @ (tables.class_scores(task.preference_class) - tables.baseline))
    return total / len(tasks)
