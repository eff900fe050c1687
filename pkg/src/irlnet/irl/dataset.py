from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..mdp import Trajectory

SOURCES = ("synthetic_judge", "external_judge", "tabular_policy")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ExpertRecord:
    state_features: tuple[float, ...]
    action: int
    score: float | None = None
    raw_prompt: str | None = None
    crafted_prompt: str | None = None
    # tabular demonstrations only
    state_id: int | None = None
    episode: int | None = None
    step: int | None = None

    def to_json(self) -> dict:
        doc = {"raw_prompt": self.raw_prompt, "crafted_prompt": self.crafted_prompt,
               "operation_id": self.action, "score": self.score,
               "state_features": list(self.state_features)}
        for key in ("state_id", "episode", "step"):
            val = getattr(self, key)
            if val is not None:
                doc[key] = val
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ExpertRecord":
        score = doc.get("score")
        return cls(tuple(float(x) for x in doc["state_features"]), int(doc["operation_id"]),
                   None if score is None else float(score), doc.get("raw_prompt"),
                   doc.get("crafted_prompt"), doc.get("state_id"), doc.get("episode"),
                   doc.get("step"))


@dataclass
class ExpertDataset:
    records: list[ExpertRecord]
    source: str = "synthetic_judge"
    n_actions: int = 7
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.records:
            raise DatasetError("expert dataset is empty")
        if self.source not in SOURCES:
            raise DatasetError(f"unknown source {self.source!r}")
        for r in self.records:
            if not 0 <= r.action < self.n_actions:
                raise DatasetError(f"action id {r.action} out of range")
            if r.score is not None and not np.isfinite(r.score):
                raise DatasetError("non-finite score")

    def __len__(self):
        return len(self.records)

    @property
    def has_scores(self) -> bool:
        return all(r.score is not None for r in self.records)

    def features(self) -> np.ndarray:
        return np.array([r.state_features for r in self.records], dtype=np.float64)

    def actions(self) -> np.ndarray:
        return np.array([r.action for r in self.records], dtype=np.int64)

    def scores(self) -> np.ndarray:
        if not self.has_scores:
            raise DatasetError("some records carry no score")
        return np.array([r.score for r in self.records], dtype=np.float64)

    def expert_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(state features, action) demonstrations.

        Scored judge data keep the top-scoring operation per raw prompt (lowest
        id on ties); tabular data are already demonstrations.
        """
        if self.source == "tabular_policy" or not self.has_scores:
            return self.features(), self.actions()
        best: dict[str, ExpertRecord] = {}
        for r in self.records:
            cur = best.get(r.raw_prompt)
            if cur is None or r.score > cur.score or (r.score == cur.score and r.action < cur.action):
                best[r.raw_prompt] = r
        chosen = list(best.values())
        return (np.array([r.state_features for r in chosen], dtype=np.float64),
                np.array([r.action for r in chosen], dtype=np.int64))

    def trajectories(self, discount: float = 1.0) -> list[Trajectory]:
        if self.source != "tabular_policy" or any(r.state_id is None for r in self.records):
            raise DatasetError("trajectories need tabular demonstrations with state ids")
        episodes = defaultdict(list)
        for r in self.records:
            episodes[r.episode].append(r)
        out = []
        for key in sorted(episodes, key=lambda e: (e is None, e)):
            steps = sorted(episodes[key], key=lambda r: r.step or 0)
            out.append(Trajectory(tuple(r.state_id for r in steps), tuple(r.action for r in steps),
                                  tuple(0.0 for _ in steps), discount))
        return out

    @classmethod
    def from_trajectories(cls, trajectories: list[Trajectory], state_features: np.ndarray,
                          n_actions: int) -> "ExpertDataset":
        records = [ExpertRecord(tuple(state_features[s].tolist()), a, state_id=s, episode=i, step=t)
                   for i, traj in enumerate(trajectories)
                   for t, (s, a) in enumerate(zip(traj.states, traj.actions))]
        return cls(records, "tabular_policy", n_actions)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json()) + "\n" for r in self.records)

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path, source: str | None = None, n_actions: int = 7) -> "ExpertDataset":
        records = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    records.append(ExpertRecord.from_json(json.loads(line)))
                except (KeyError, ValueError, TypeError) as exc:
                    raise DatasetError(f"{path}:{lineno}: bad record ({exc})") from exc
        if source is None:
            source = "tabular_policy" if records and records[0].state_id is not None else "synthetic_judge"
        return cls(records, source, n_actions)
