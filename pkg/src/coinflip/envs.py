"""Sparse-reward gridworld with action noise and exact visit counting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from coinflip.errors import InvalidArgumentError, InvalidStateError

UP, DOWN, LEFT, RIGHT = range(4)
N_ACTIONS = 4
ACTION_NAMES = ("up", "down", "left", "right")
_MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))
ENCODINGS = ("one_hot", "coordinates")


@dataclass
class GridworldConfig:
    width: int = 10
    height: int = 10
    max_steps_base: int = 150
    action_noise: float = 0.0
    encoding: str = "one_hot"

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.max_steps_base < 1:
            raise InvalidArgumentError("grid sizes and step cap must be positive")
        if not 0.0 <= self.action_noise < 1.0:
            raise InvalidArgumentError(f"action noise must lie in [0, 1), got {self.action_noise}")
        if self.encoding not in ENCODINGS:
            raise InvalidArgumentError(f"encoding must be one of {ENCODINGS}")

    @property
    def max_steps(self) -> int:
        # round before ceil so 150 / 0.7 does not become 215 via 214.2857...
        return math.ceil(round(self.max_steps_base / (1.0 - self.action_noise), 9))

    @property
    def n_cells(self) -> int:
        return self.width * self.height


class GridState(NamedTuple):
    x: int
    y: int
    t: int


class StepResult(NamedTuple):
    observation: np.ndarray
    reward: float
    done: bool
    truncated: bool


class Gridworld:
    """Start at the bottom-left (0, 0); reward 1 on reaching (width-1, height-1).

    With probability ``action_noise`` the chosen action is replaced by one
    drawn uniformly from all four.  Reaching ``max_steps`` ends the episode
    as a truncation rather than a termination.
    """

    def __init__(self, config: GridworldConfig | None = None):
        self.config = config or GridworldConfig()
        self.state = GridState(0, 0, 0)
        self.done = True
        self.truncated = False

    @property
    def observation_dim(self) -> int:
        return self.config.n_cells if self.config.encoding == "one_hot" else 2

    @property
    def goal(self) -> tuple[int, int]:
        return self.config.width - 1, self.config.height - 1

    def cell_index(self, state=None) -> int:
        s = self.state if state is None else state
        return s[1] * self.config.width + s[0]

    def cell_from_index(self, index: int) -> tuple[int, int]:
        return index % self.config.width, index // self.config.width

    def encode(self, state=None) -> np.ndarray:
        s = self.state if state is None else state
        if self.config.encoding == "one_hot":
            out = np.zeros(self.config.n_cells)
            out[self.cell_index(s)] = 1.0
            return out
        w, h = self.config.width, self.config.height
        return np.array([s[0] / max(w - 1, 1), s[1] / max(h - 1, 1)])

    def reset(self) -> tuple[GridState, np.ndarray]:
        self.state = GridState(0, 0, 0)
        self.done = False
        self.truncated = False
        return self.state, self.encode()

    def transition(self, x: int, y: int, action: int) -> tuple[int, int]:
        """Deterministic wall-clamped move."""
        dx, dy = _MOVES[action]
        return (min(max(x + dx, 0), self.config.width - 1),
                min(max(y + dy, 0), self.config.height - 1))

    def step(self, action: int, rng: np.random.Generator) -> StepResult:
        if self.done:
            raise InvalidStateError("step() called on a finished episode; call reset()")
        if not 0 <= action < N_ACTIONS:
            raise InvalidArgumentError(f"action must be in 0..3, got {action}")
        eta = self.config.action_noise
        if eta > 0.0 and rng.random() < eta:
            action = int(rng.integers(N_ACTIONS))
        x, y = self.transition(self.state.x, self.state.y, action)
        t = self.state.t + 1
        self.state = GridState(x, y, t)
        reached = (x, y) == self.goal
        self.truncated = not reached and t >= self.config.max_steps
        self.done = reached or self.truncated
        return StepResult(self.encode(), 1.0 if reached else 0.0, self.done, self.truncated)


class GroundTruthCounter:
    """Exact per-cell visit counts."""

    def __init__(self, n_cells: int):
        self.counts = np.zeros(n_cells, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def record(self, cell: int) -> None:
        self.counts[cell] += 1

    def count(self, cell: int) -> int:
        return int(self.counts[cell])

    def visited(self) -> np.ndarray:
        return np.flatnonzero(self.counts)

    def true_bonuses(self, cells=None) -> np.ndarray:
        c = self.counts if cells is None else self.counts[np.asarray(cells)]
        return 1.0 / np.sqrt(np.maximum(c, 1))


def true_bonus(counter: GroundTruthCounter, cell: int) -> float:
    """``1 / sqrt(N(s))``, or 1 for a never-visited cell."""
    n = counter.count(cell)
    return 1.0 if n == 0 else 1.0 / math.sqrt(n)


class TrajectoryLog:
    """Rows of (episode, t, x, y, action, reward) written as CSV."""

    header = ("episode", "t", "x", "y", "action", "reward")

    def __init__(self):
        self.rows: list[tuple] = []

    def append(self, episode: int, t: int, x: int, y: int, action: int, reward: float) -> None:
        self.rows.append((episode, t, x, y, action, reward))

    def recount(self, n_cells: int, width: int) -> np.ndarray:
        counts = np.zeros(n_cells, dtype=np.int64)
        for _, _, x, y, _, _ in self.rows:
            counts[y * width + x] += 1
        return counts

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            w.writerows(self.rows)
