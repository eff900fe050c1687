from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..mdp import FeatureMap, TabularMDP
from .tabular import TabularEnv

# (dx, dy) per action id
MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))
ACTION_NAMES = ("up", "right", "down", "left")


@dataclass(frozen=True)
class GridWorld:
    width: int
    height: int
    terminals: dict = field(default_factory=dict)  # (x, y) -> reward on entry
    step_penalty: float = 0.0
    horizon: int = 8
    start: tuple[int, int] | None = (0, 0)  # None means uniform over non-terminal cells
    discount: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        for x, y in self.terminals:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"terminal {(x, y)} outside the grid")

    @property
    def n_states(self) -> int:
        return self.width * self.height

    def index(self, x: int, y: int) -> int:
        return y * self.width + x


def gridworld_as_tabular(gw: GridWorld) -> tuple[TabularMDP, FeatureMap]:
    """Four wall-clamped moves; terminal cells absorb with zero reward."""
    S = gw.n_states
    P = np.zeros((S, len(MOVES), S))
    R = np.zeros((S, len(MOVES)))
    terminal = np.zeros(S, dtype=bool)
    for (x, y) in gw.terminals:
        terminal[gw.index(x, y)] = True
    for y in range(gw.height):
        for x in range(gw.width):
            s = gw.index(x, y)
            for a, (dx, dy) in enumerate(MOVES):
                if terminal[s]:
                    P[s, a, s] = 1.0
                    continue
                nx = min(max(x + dx, 0), gw.width - 1)
                ny = min(max(y + dy, 0), gw.height - 1)
                s2 = gw.index(nx, ny)
                P[s, a, s2] = 1.0
                R[s, a] = gw.terminals.get((nx, ny), gw.step_penalty)
    if gw.start is None:
        p0 = (~terminal).astype(np.float64)
        if p0.sum() == 0:
            p0[:] = 1.0
        p0 /= p0.sum()
    else:
        p0 = np.zeros(S)
        p0[gw.index(*gw.start)] = 1.0
    mdp = TabularMDP(P, R, gw.horizon, p0, gw.discount)
    return mdp, FeatureMap.one_hot(S)


def terminal_mask(gw: GridWorld) -> np.ndarray:
    mask = np.zeros(gw.n_states, dtype=bool)
    for (x, y) in gw.terminals:
        mask[gw.index(x, y)] = True
    return mask


def standard_gridworld(horizon: int = 8, discount: float = 0.9) -> GridWorld:
    """5x5 grid, goal in the far corner worth 1, step penalty -0.01."""
    return GridWorld(5, 5, {(4, 4): 1.0}, step_penalty=-0.01, horizon=horizon,
                     start=(0, 0), discount=discount)


def gridworld_env(gw: GridWorld) -> TabularEnv:
    mdp, features = gridworld_as_tabular(gw)
    return TabularEnv(mdp, features, terminal=terminal_mask(gw))
