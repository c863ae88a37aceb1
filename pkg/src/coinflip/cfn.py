"""Coin Flip Network: trainable net plus a normalized frozen random prior.

The network output ``f(s) = f_hat(s) + prior_norm(s)`` is regressed onto a
fresh coin-flip label at every visit, so at the fixed point ``f(s)`` is the
mean of that state's labels and ``(1/d) ||f(s)||^2`` estimates ``1 / N(s)``.
The normalized prior makes ``||prior_norm(s)||^2 / d`` about 1 on unseen
states, i.e. an initial pseudocount of 1.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from coinflip.buffer import CoinFlipBuffer
from coinflip.errors import EmptyBufferError, InvalidArgumentError, InvalidStateError
from coinflip.estimator import sample_coin_flips
from coinflip.function_approx import (
    AdamState,
    MlpSpec,
    forward,
    init_params,
    mse_grad_step,
    params_from_dict,
    params_to_dict,
    to_sparse_rows,
)
from coinflip.metrics import NORMALIZE_EPS, RunningStats


@dataclass
class CfnConfig:
    d: int = 20
    hidden_layers: tuple = (64, 64)
    activation: str = "relu"
    learning_rate: float = 1e-4
    batch_size: int = 256
    buffer_capacity: int = 100_000
    alpha: float = 0.5
    prior_enabled: bool = True
    prioritization_enabled: bool = True
    zero_flip_mode: bool = False
    subtract_prior_mean: bool = True

    def __post_init__(self):
        self.hidden_layers = tuple(self.hidden_layers)
        if self.d < 1:
            raise InvalidArgumentError("d must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidArgumentError("alpha must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise InvalidArgumentError("batch_size and buffer_capacity must be positive")


class PriorNormalizer:
    """Per-dimension running statistics of raw prior outputs.

    With ``subtract_mean`` the prior is standardized; otherwise it is only
    divided by the root running second moment.  Either way the normalized
    outputs have unit second moment over the observed stream.
    """

    def __init__(self, d: int, subtract_mean: bool = True):
        self.stats = RunningStats((d,))
        self.subtract_mean = subtract_mean

    @property
    def count(self) -> int:
        return self.stats.count

    def update(self, raw) -> None:
        self.stats.update(raw)

    def normalize(self, raw) -> np.ndarray:
        if self.stats.count == 0:
            raise InvalidStateError("prior normalizer has no observations")
        if self.subtract_mean:
            return (raw - self.stats.mean) / np.sqrt(self.stats.variance + NORMALIZE_EPS)
        return raw / np.sqrt(self.stats.second_moment + NORMALIZE_EPS)


class CfnModel:
    def __init__(self, input_dim: int, config: CfnConfig | None = None,
                 rng: np.random.Generator | None = None, sparse_inputs: bool = False):
        self.config = config or CfnConfig()
        rng = rng if rng is not None else np.random.default_rng()
        self.spec = MlpSpec(input_dim, self.config.hidden_layers, self.config.d, self.config.activation)
        self.trainable = init_params(self.spec, rng)
        self.prior = init_params(self.spec, rng)
        self.normalizer = PriorNormalizer(self.config.d, self.config.subtract_prior_mean)
        self.optimizer = AdamState.for_params(self.trainable)
        self.sparse_inputs = sparse_inputs
        self._prior_checksum = self.prior.checksum()

    @property
    def d(self) -> int:
        return self.config.d

    def make_buffer(self) -> CoinFlipBuffer:
        return CoinFlipBuffer(
            self.config.buffer_capacity,
            self.spec.input_dim,
            self.config.d,
            alpha=self.config.alpha,
            sparse_nnz=1 if self.sparse_inputs else None,
        )

    def prior_intact(self) -> bool:
        return self.prior.checksum() == self._prior_checksum

    def _prior_part(self, x):
        return self.normalizer.normalize(forward(self.prior, x))

    def _inputs(self, x):
        if self.sparse_inputs:
            return to_sparse_rows(x)
        return x, False

    def output(self, x) -> np.ndarray:
        """``f_hat(x) + prior_norm(x)`` (just ``f_hat`` with the prior disabled)."""
        x, single = self._inputs(x)
        out = forward(self.trainable, x)
        if self.config.prior_enabled:
            if self.normalizer.count == 0:
                raise InvalidStateError("bonus requested before any state was observed")
            out = out + self._prior_part(x)
        return out[0] if single else out

    def inverse_counts(self, x):
        out = self.output(x)
        est = np.mean(out * out, axis=-1)
        return float(est) if np.ndim(est) == 0 else est

    def bonus(self, x):
        """``sqrt((1/d) ||f(x)||^2)``; pure read."""
        est = self.inverse_counts(x)
        return float(np.sqrt(est)) if np.ndim(est) == 0 else np.sqrt(est)

    bonuses = bonus

    def observe(self, buffer: CoinFlipBuffer, state_encoding, rng: np.random.Generator) -> int:
        """Update prior statistics, draw this visit's label, and insert it."""
        state = np.asarray(state_encoding, dtype=np.float64)
        if state.ndim != 1:
            raise InvalidArgumentError("observe takes a single state encoding")
        x, _ = self._inputs(state)
        raw = forward(self.prior, x).reshape(-1)
        self.normalizer.update(raw)
        if self.config.zero_flip_mode:
            flips = np.zeros(self.d)
        else:
            flips = sample_coin_flips(self.d, rng)
        out = forward(self.trainable, x).reshape(-1)
        if self.config.prior_enabled:
            out = out + self.normalizer.normalize(raw)
        return buffer.insert(state, flips, float(np.mean(out * out)))

    def train_step(self, buffer: CoinFlipBuffer, rng: np.random.Generator,
                   batch_size: int | None = None, learning_rate: float | None = None) -> float:
        """One gradient step on a sampled minibatch, then refresh its priorities."""
        if len(buffer) == 0:
            raise EmptyBufferError("CFN buffer is empty")
        batch_size = self.config.batch_size if batch_size is None else batch_size
        lr = self.config.learning_rate if learning_rate is None else learning_rate
        slots = buffer.sample_slots(batch_size, rng, prioritized=self.config.prioritization_enabled)
        x = buffer.states.batch(slots)
        targets = buffer.labels[slots]
        prior = None
        if self.config.prior_enabled:
            prior = self._prior_part(x)
            targets = targets - prior
        _, loss = mse_grad_step(self.trainable, x, targets, None, self.optimizer, lr)
        out = forward(self.trainable, x)
        if prior is not None:
            out = out + prior
        buffer.update_slot_priorities(slots, np.mean(out * out, axis=-1))
        return loss

    def state_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "input_dim": self.spec.input_dim,
            "sparse_inputs": self.sparse_inputs,
            "trainable": params_to_dict(self.trainable),
            "prior": params_to_dict(self.prior),
            "normalizer": self.normalizer.stats.state_dict(),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "CfnModel":
        config = CfnConfig(**state["config"])
        model = cls(state["input_dim"], config, np.random.default_rng(0), state["sparse_inputs"])
        model.trainable = params_from_dict(state["trainable"])
        model.prior = params_from_dict(state["prior"])
        model.optimizer = AdamState.for_params(model.trainable)
        model.normalizer.stats = RunningStats.from_state_dict(state["normalizer"])
        model._prior_checksum = model.prior.checksum()
        return model
