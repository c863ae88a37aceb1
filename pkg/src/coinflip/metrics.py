"""Streaming statistics, standard errors and rank correlation."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as _stats

from coinflip.errors import InvalidArgumentError, InvalidStateError

NORMALIZE_EPS = 1e-8


class RunningStats:
    """Welford mean / population-variance accumulator.

    Works for scalars (``shape=()``) or per-dimension vectors.
    """

    def __init__(self, shape=()):
        self.shape = tuple(np.atleast_1d(shape)) if shape != () else ()
        self.count = 0
        self.mean = np.zeros(self.shape)
        self._m2 = np.zeros(self.shape)

    def update(self, value) -> "RunningStats":
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.shape:
            raise InvalidArgumentError(f"expected shape {self.shape}, got {value.shape}")
        if not np.all(np.isfinite(value)):
            raise InvalidArgumentError("RunningStats.update received a non-finite value")
        self.count += 1
        delta = value - self.mean
        self.mean = self.mean + delta / self.count
        self._m2 = self._m2 + delta * (value - self.mean)
        return self

    def update_many(self, values) -> "RunningStats":
        for v in np.asarray(values, dtype=np.float64).reshape(-1, *self.shape):
            self.update(v)
        return self

    @property
    def variance(self):
        if self.count == 0:
            return np.zeros(self.shape) if self.shape else 0.0
        var = self._m2 / self.count
        return var if self.shape else float(var)

    @property
    def second_moment(self):
        return self.variance + self.mean * self.mean

    def normalize(self, value):
        """``(value - mean) / sqrt(variance + 1e-8)``; vectorized over leading axes."""
        if self.count == 0:
            raise InvalidStateError("cannot normalize before any observation")
        value = np.asarray(value, dtype=np.float64)
        out = (value - self.mean) / np.sqrt(self.variance + NORMALIZE_EPS)
        return float(out) if out.ndim == 0 else out

    def state_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "count": self.count,
            "mean": np.asarray(self.mean).ravel().tolist(),
            "m2": np.asarray(self._m2).ravel().tolist(),
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "RunningStats":
        shape = tuple(state["shape"])
        out = cls(shape)
        out.count = int(state["count"])
        out.mean = np.asarray(state["mean"], dtype=np.float64).reshape(shape)
        out._m2 = np.asarray(state["m2"], dtype=np.float64).reshape(shape)
        return out


def spearman(xs, ys) -> float:
    """Spearman rank correlation with average ranks for ties.

    Degenerate inputs where either side is constant have no defined
    correlation; 0.0 is returned for them.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise InvalidArgumentError("spearman needs two 1-D sequences of equal length")
    if len(xs) < 2:
        raise InvalidArgumentError("spearman needs at least two points")
    rx = _stats.rankdata(xs)
    ry = _stats.rankdata(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0.0:
        return 0.0
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


def mean_and_se(values) -> tuple[float, float]:
    """Sample mean and its standard error (ddof=1); s.e. is 0 for one value."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InvalidArgumentError("no values")
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def variance_and_se(values) -> tuple[float, float]:
    """Population variance of a sample and the large-sample s.e. of that estimate."""
    values = np.asarray(values, dtype=np.float64)
    m = values.size
    centered = values - values.mean()
    var = float(np.mean(centered**2))
    m4 = float(np.mean(centered**4))
    se = math.sqrt(max(m4 - var * var, 0.0) / m)
    return var, se


def normal_interval(mean: float, se: float, level: float = 0.95) -> tuple[float, float]:
    z = float(_stats.norm.ppf(0.5 + level / 2))
    return mean - z * se, mean + z * se
