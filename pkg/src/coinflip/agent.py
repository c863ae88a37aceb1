"""Q-learning with an intrinsic bonus added to the TD target.

The per-interaction ordering is: act, step the environment, compute the
bonus of the state just left, let the bonus module observe that state, store
the transition, update Q once, train the bonus module once.

Every stochastic component draws from its own stream (environment noise,
exploration, bonus module, network init) so that with a zero bonus scale the
choice of bonus module cannot perturb the agent's trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from coinflip.baselines import RndConfig, RndModel, RndReplay
from coinflip.buffer import StateStore
from coinflip.cfn import CfnConfig, CfnModel
from coinflip.envs import N_ACTIONS, Gridworld
from coinflip.errors import InvalidArgumentError
from coinflip.function_approx import AdamState, MlpSpec, forward, init_params, mse_grad_step
from coinflip.metrics import RunningStats

BONUS_SOURCES = ("cfn", "rnd", "none")
Q_BACKENDS = ("tabular", "mlp")
EXPLORATION = ("greedy", "epsilon")


@dataclass
class AgentConfig:
    gamma: float = 0.99
    intrinsic_scale: float = 0.01
    learning_rate: float = 0.1
    exploration: str = "greedy"
    epsilon: float = 0.1
    q_backend: str = "tabular"
    bonus_source: str = "cfn"
    reward_normalization: bool = True
    # mlp backend only
    mlp_hidden: tuple = (64, 64)
    mlp_learning_rate: float = 1.25e-4
    target_update_period: int = 1000
    replay_capacity: int = 10_000
    replay_batch_size: int = 32
    min_history: int = 1000

    def __post_init__(self):
        self.mlp_hidden = tuple(self.mlp_hidden)
        if not 0.0 < self.gamma < 1.0:
            raise InvalidArgumentError("gamma must lie in (0, 1)")
        if self.intrinsic_scale < 0:
            raise InvalidArgumentError("intrinsic_scale must be >= 0")
        if self.exploration not in EXPLORATION:
            raise InvalidArgumentError(f"exploration must be one of {EXPLORATION}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidArgumentError("epsilon must lie in [0, 1]")
        if self.q_backend not in Q_BACKENDS:
            raise InvalidArgumentError(f"q_backend must be one of {Q_BACKENDS}")
        if self.bonus_source not in BONUS_SOURCES:
            raise InvalidArgumentError(f"bonus_source must be one of {BONUS_SOURCES}")


class RngStreams(NamedTuple):
    env: np.random.Generator
    explore: np.random.Generator
    bonus: np.random.Generator
    init: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RngStreams":
        return cls(*(np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)))


@dataclass(frozen=True)
class TransitionRecord:
    cell: int
    obs: np.ndarray
    action: int
    reward: float
    bonus: float
    next_cell: int
    next_obs: np.ndarray
    terminal: bool
    truncated: bool


def augmented_target(record: TransitionRecord, q_next_max: float, gamma: float, lam: float) -> float:
    """``R + lam * B + gamma * max Q(s')``, without the bootstrap on goal termination."""
    y = record.reward + lam * record.bonus
    if not record.terminal:
        y += gamma * q_next_max
    return y


# ---------------------------------------------------------------------------
# bonus sources


class NoBonus:
    def compute(self, obs) -> float:
        return 0.0

    def observe(self, obs) -> None:
        pass

    def train(self) -> None:
        pass


class CfnBonus:
    def __init__(self, model: CfnModel, rng: np.random.Generator):
        self.model = model
        self.buffer = model.make_buffer()
        self.rng = rng

    def compute(self, obs) -> float:
        # the very first state precedes any prior statistics; by construction
        # of the normalized prior its pseudocount is 1
        if self.model.config.prior_enabled and self.model.normalizer.count == 0:
            return 1.0
        return self.model.bonus(obs)

    def observe(self, obs) -> None:
        self.model.observe(self.buffer, obs, self.rng)

    def train(self) -> None:
        self.model.train_step(self.buffer, self.rng)


class RndBonus:
    def __init__(self, model: RndModel, rng: np.random.Generator):
        self.model = model
        sparse = 1 if model.sparse_inputs else None
        self.replay = RndReplay(model.config.buffer_capacity, model.spec.input_dim, sparse)
        self.rng = rng

    def compute(self, obs) -> float:
        if self.model.bonus_stats is not None:
            self.model.bonus_stats.update(self.model.raw_bonus(obs))
        return self.model.bonus(obs)

    def observe(self, obs) -> None:
        self.replay.add(obs)

    def train(self) -> None:
        self.model.train_step(self.replay.sample(self.model.config.batch_size, self.rng))


def make_bonus_source(name: str, input_dim: int, rng: np.random.Generator, sparse_inputs: bool = False,
                      cfn_config: CfnConfig | None = None, rnd_config: RndConfig | None = None):
    """Build a bonus source; network init and sampling both use ``rng``."""
    if name == "none":
        return NoBonus()
    if name == "cfn":
        return CfnBonus(CfnModel(input_dim, cfn_config, rng, sparse_inputs=sparse_inputs), rng)
    if name == "rnd":
        return RndBonus(RndModel(input_dim, rnd_config, rng, sparse_inputs=sparse_inputs), rng)
    raise InvalidArgumentError(f"unknown bonus source {name!r}")


# ---------------------------------------------------------------------------
# Q functions


class TabularQ:
    def __init__(self, n_states: int, config: AgentConfig):
        self.table = np.zeros((n_states, N_ACTIONS))
        self.config = config
        self.updates = 0

    def values(self, cell: int, obs) -> np.ndarray:
        return self.table[cell]

    def update(self, rec: TransitionRecord) -> None:
        cfg = self.config
        y = augmented_target(rec, float(self.table[rec.next_cell].max()), cfg.gamma, cfg.intrinsic_scale)
        q = self.table[rec.cell, rec.action]
        self.table[rec.cell, rec.action] = q + cfg.learning_rate * (y - q)
        self.updates += 1


class MlpQ:
    """Q-network with a periodically synced target copy and uniform replay."""

    def __init__(self, obs_dim: int, config: AgentConfig, rng: np.random.Generator,
                 sparse_inputs: bool = False):
        self.config = config
        spec = MlpSpec(obs_dim, config.mlp_hidden, N_ACTIONS, "relu")
        self.online = init_params(spec, rng)
        self.target = self.online.copy()
        self.optimizer = AdamState.for_params(self.online)
        nnz = 1 if sparse_inputs else None
        cap = config.replay_capacity
        self.obs = StateStore(cap, obs_dim, nnz)
        self.next_obs = StateStore(cap, obs_dim, nnz)
        self.actions = np.zeros(cap, dtype=np.int64)
        self.rewards = np.zeros(cap)
        self.bonus = np.zeros(cap)
        self.terminal = np.zeros(cap)
        self.size = 0
        self.cursor = 0
        self.updates = 0
        self.stored = 0
        self.rng = rng

    def values(self, cell: int, obs) -> np.ndarray:
        return forward(self.online, obs)

    def update(self, rec: TransitionRecord) -> None:
        cfg = self.config
        i = self.cursor
        self.obs.put(i, rec.obs)
        self.next_obs.put(i, rec.next_obs)
        self.actions[i] = rec.action
        self.rewards[i] = rec.reward
        self.bonus[i] = rec.bonus
        self.terminal[i] = float(rec.terminal)
        self.cursor = (i + 1) % cfg.replay_capacity
        self.size = min(self.size + 1, cfg.replay_capacity)
        self.stored += 1
        if self.stored < min(cfg.min_history, cfg.replay_capacity):
            return
        idx = self.rng.integers(0, self.size, size=cfg.replay_batch_size)
        x = self.obs.batch(idx)
        q_next = forward(self.target, self.next_obs.batch(idx)).max(axis=1)
        y = (self.rewards[idx] + cfg.intrinsic_scale * self.bonus[idx]
             + cfg.gamma * (1.0 - self.terminal[idx]) * q_next)
        targets = forward(self.online, x).copy()
        targets[np.arange(idx.size), self.actions[idx]] = y
        mse_grad_step(self.online, x, targets, None, self.optimizer, cfg.mlp_learning_rate)
        self.updates += 1
        if self.updates % cfg.target_update_period == 0:
            self.target = self.online.copy()


# ---------------------------------------------------------------------------


class StepMetrics(NamedTuple):
    action: int
    reward: float
    raw_bonus: float
    stored_bonus: float
    done: bool
    truncated: bool


class Agent:
    def __init__(self, config: AgentConfig, env: Gridworld, rngs: RngStreams, bonus_source=None,
                 cfn_config: CfnConfig | None = None, rnd_config: RndConfig | None = None):
        self.config = config
        sparse = env.config.encoding == "one_hot"
        if config.q_backend == "tabular":
            self.q = TabularQ(env.config.n_cells, config)
        else:
            self.q = MlpQ(env.observation_dim, config, rngs.init, sparse_inputs=sparse)
        if bonus_source is None:
            bonus_source = make_bonus_source(config.bonus_source, env.observation_dim, rngs.bonus,
                                             sparse, cfn_config, rnd_config)
        self.bonus_source = bonus_source
        self.reward_stats = RunningStats()
        self.rngs = rngs
        self.obs = None

    def act(self, cell: int, obs, rng: np.random.Generator) -> int:
        """Greedy argmax (lowest index on ties) or epsilon-random."""
        if self.config.exploration == "epsilon":
            if rng.random() < self.config.epsilon:
                return int(rng.integers(N_ACTIONS))
        return int(np.argmax(self.q.values(cell, obs)))

    def begin_episode(self, env: Gridworld) -> None:
        _, self.obs = env.reset()

    def step(self, env: Gridworld) -> StepMetrics:
        cell, obs = env.cell_index(), self.obs
        action = self.act(cell, obs, self.rngs.explore)
        res = env.step(action, self.rngs.env)
        raw = self.bonus_source.compute(obs)
        self.bonus_source.observe(obs)
        stored = raw
        if self.config.reward_normalization and not isinstance(self.bonus_source, NoBonus):
            self.reward_stats.update(raw)
            stored = self.reward_stats.normalize(raw)
        rec = TransitionRecord(cell, obs, action, res.reward, stored, env.cell_index(), res.observation,
                               terminal=res.done and not res.truncated, truncated=res.truncated)
        self.q.update(rec)
        self.bonus_source.train()
        self.obs = res.observation
        return StepMetrics(action, res.reward, raw, stored, res.done, res.truncated)


def agent_step(agent: Agent, env: Gridworld) -> StepMetrics:
    return agent.step(env)
