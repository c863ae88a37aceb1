"""Rademacher count mathematics.

Averaging ``n`` fair coin-flip vectors of length ``d`` gives a mean vector
``z`` whose mean squared entry is an unbiased estimate of ``1 / n``.  This
module holds the sampling primitives, the estimate and bonus transforms,
and the closed-form variance of the estimate.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from coinflip.errors import InvalidArgumentError

LABEL_LAWS = ("rademacher", "gaussian")


def sample_coin_flips(d: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """Draw fair signs in {-1, +1}.

    Returns a float64 array of shape ``(d,)``, or ``(*size, d)`` when
    ``size`` is given.
    """
    if d < 1:
        raise InvalidArgumentError(f"flip count d must be >= 1, got {d}")
    shape = (d,) if size is None else (*np.atleast_1d(size).tolist(), d)
    return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0


@dataclass(frozen=True)
class MeanFlipVector:
    entries: np.ndarray
    sample_count: int

    @classmethod
    def from_flips(cls, flips) -> "MeanFlipVector":
        flips = np.atleast_2d(np.asarray(flips, dtype=np.float64))
        if flips.shape[0] == 0:
            raise InvalidArgumentError("cannot average zero coin-flip vectors")
        return cls(flips.mean(axis=0), flips.shape[0])

    def __len__(self) -> int:
        return len(self.entries)


def inverse_count_from_mean(z) -> float | np.ndarray:
    """Mean of squared entries, ``(1/d) * ||z||^2``.

    Accepts a :class:`MeanFlipVector` or an array; for arrays with more than
    one axis the last axis is the flip dimension and one estimate is returned
    per leading index.
    """
    entries = z.entries if isinstance(z, MeanFlipVector) else np.asarray(z, dtype=np.float64)
    if entries.ndim == 0 or entries.shape[-1] == 0:
        raise InvalidArgumentError("mean flip vector must be nonempty")
    est = np.mean(entries * entries, axis=-1)
    return float(est) if est.ndim == 0 else est


def bonus_from_inverse_count(est) -> float | np.ndarray:
    est_arr = np.asarray(est, dtype=np.float64)
    if np.any(est_arr < 0) or not np.all(np.isfinite(est_arr)):
        raise InvalidArgumentError("inverse-count estimate must be finite and nonnegative")
    out = np.sqrt(est_arr)
    return float(out) if out.ndim == 0 else out


def estimator_variance(n: int, fourth_moment: float = 1.0) -> float:
    """Variance of the squared sample mean of ``n`` zero-mean unit-variance draws.

    ``E[X^4] / n^3 + 2 / n^2 - 3 / n^3``; the coin-flip law has
    ``E[X^4] = 1``, which gives ``2 / n^2 - 2 / n^3``.
    """
    if n < 1:
        raise InvalidArgumentError(f"sample count n must be >= 1, got {n}")
    if fourth_moment < 1:
        raise InvalidArgumentError("fourth moment of a unit-variance law is at least 1")
    n = float(n)
    return fourth_moment / n**3 + 2.0 / n**2 - 3.0 / n**3


def simulate_inverse_counts(
    n: int,
    d: int,
    trials: int,
    rng: np.random.Generator,
    labels: str = "rademacher",
    chunk_elements: int = 1 << 23,
) -> np.ndarray:
    """Monte-Carlo draws of the inverse-count estimate.

    Each trial averages ``n`` fresh label vectors of length ``d`` and applies
    :func:`inverse_count_from_mean`.  Work is chunked to bound memory.
    """
    if n < 1 or d < 1 or trials < 0:
        raise InvalidArgumentError("need n >= 1, d >= 1, trials >= 0")
    if labels not in LABEL_LAWS:
        raise InvalidArgumentError(f"unknown label law {labels!r}")
    per_trial = n * d
    chunk = max(1, chunk_elements // per_trial)
    out = np.empty(trials, dtype=np.float64)
    for start in range(0, trials, chunk):
        m = min(chunk, trials - start)
        if labels == "rademacher":
            signs = rng.integers(0, 2, size=(m, n, d), dtype=np.int8)
            # sum of +-1 = 2 * (#ones) - n, exact in integers
            sums = 2 * signs.sum(axis=1, dtype=np.int64) - n
            z = sums / n
        else:
            z = rng.standard_normal(size=(m, n, d)).mean(axis=1)
        out[start:start + m] = inverse_count_from_mean(z)
    return out


def enumerate_flip_outcomes(n: int, d: int) -> np.ndarray:
    """All ``2 ** (n * d)`` equally likely label sets, shape ``(2**(n*d), n, d)``."""
    if n * d > 20:
        raise InvalidArgumentError("exhaustive enumeration limited to n * d <= 20")
    rows = np.array(list(itertools.product((-1.0, 1.0), repeat=n * d)))
    return rows.reshape(-1, n, d)


def exact_expected_inverse_count(n: int, d: int) -> float:
    """Exact expectation of the estimate by enumerating every outcome."""
    outcomes = enumerate_flip_outcomes(n, d)
    estimates = inverse_count_from_mean(outcomes.mean(axis=1))
    return math.fsum(estimates) / len(estimates)
