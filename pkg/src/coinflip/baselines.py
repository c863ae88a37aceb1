"""Random Network Distillation bonus for comparisons.

The bonus is the squared error of a trainable predictor imitating a frozen
random target network.  It has no count semantics; only its ranking of
states is comparable to a count-based bonus.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coinflip.buffer import StateStore
from coinflip.errors import EmptyBufferError, InvalidArgumentError
from coinflip.function_approx import AdamState, MlpSpec, forward, init_params, mse_grad_step, to_sparse_rows
from coinflip.metrics import RunningStats


@dataclass
class RndConfig:
    output_dim: int = 20
    hidden_layers: tuple = (64, 64)
    activation: str = "relu"
    learning_rate: float = 1e-4
    batch_size: int = 256
    buffer_capacity: int = 100_000
    normalize_bonus: bool = False

    def __post_init__(self):
        self.hidden_layers = tuple(self.hidden_layers)
        if self.output_dim < 1 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise InvalidArgumentError("RND sizes must be positive")


class RndModel:
    def __init__(self, input_dim: int, config: RndConfig | None = None,
                 rng: np.random.Generator | None = None, copy_target: bool = False,
                 sparse_inputs: bool = False):
        self.config = config or RndConfig()
        rng = rng if rng is not None else np.random.default_rng()
        self.spec = MlpSpec(input_dim, self.config.hidden_layers, self.config.output_dim, self.config.activation)
        self.target = init_params(self.spec, rng)
        self.predictor = self.target.copy() if copy_target else init_params(self.spec, rng)
        self.optimizer = AdamState.for_params(self.predictor)
        self.bonus_stats = RunningStats() if self.config.normalize_bonus else None
        self.sparse_inputs = sparse_inputs
        self._target_checksum = self.target.checksum()

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def target_intact(self) -> bool:
        return self.target.checksum() == self._target_checksum

    def raw_bonus(self, x):
        single = False
        if self.sparse_inputs:
            x, single = to_sparse_rows(x)
        err = forward(self.predictor, x) - forward(self.target, x)
        out = np.sum(err * err, axis=-1)
        if single:
            out = out[0]
        return float(out) if np.ndim(out) == 0 else out

    def bonus(self, x):
        """Squared prediction error, divided by the running bonus s.d. when configured."""
        raw = self.raw_bonus(x)
        if self.bonus_stats is None or self.bonus_stats.count == 0:
            return raw
        return raw / np.sqrt(self.bonus_stats.variance + 1e-8)

    bonuses = bonus

    def train_step(self, batch, learning_rate: float | None = None) -> float:
        """One Adam step pulling the predictor toward the target on ``batch``."""
        lr = self.config.learning_rate if learning_rate is None else learning_rate
        targets = forward(self.target, batch)
        if np.ndim(targets) == 1:
            targets = targets[None, :]
        _, loss = mse_grad_step(self.predictor, batch, targets, None, self.optimizer, lr)
        return loss


def rnd_bonus(model: RndModel, state_encoding) -> float:
    return model.bonus(state_encoding)


def rnd_train_step(model: RndModel, batch, learning_rate: float | None = None) -> float:
    return model.train_step(batch, learning_rate)


class RndReplay:
    """Uniform FIFO replay of states feeding RND, mirroring the CFN cadence."""

    def __init__(self, capacity: int, state_dim: int, sparse_nnz: int | None = None):
        self.store = StateStore(capacity, state_dim, sparse_nnz)
        self.capacity = capacity
        self.next_id = 0

    def __len__(self) -> int:
        return min(self.next_id, self.capacity)

    def add(self, state_encoding) -> int:
        rid = self.next_id
        self.store.put(rid % self.capacity, state_encoding)
        self.next_id += 1
        return rid

    def sample(self, batch_size: int, rng: np.random.Generator):
        if len(self) == 0:
            raise EmptyBufferError("RND replay is empty")
        return self.store.batch(rng.integers(0, len(self), size=batch_size))
