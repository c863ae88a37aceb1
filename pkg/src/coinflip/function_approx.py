"""Feed-forward networks with hand-written backprop and Adam.

Inputs may be dense arrays (one row per example, or a single 1-D vector),
:class:`SparseRows` batches, or ``scipy.sparse`` matrices.  The first layer
is applied with ``@``, so a one-hot batch costs a row gather instead of a
dense matmul.

Checkpoint format (JSON)::

    {"format": "coinflip.mlp", "version": 1,
     "spec": {"input_dim": .., "hidden_layers": [..], "output_dim": .., "activation": ..},
     "shapes": [[in, out], [out], ...],     # W0, b0, W1, b1, ... in order
     "values": [float, ...]}                # same order, row-major

Floats are written with ``repr`` precision so a round trip is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from coinflip.errors import InvalidArgumentError, TrainingDivergedError

ACTIVATIONS = ("relu", "tanh")
CHECKPOINT_FORMAT = "coinflip.mlp"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_layers: tuple = (64, 64)
    output_dim: int = 20
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_layers):
            raise InvalidArgumentError(f"layer sizes must be positive: {self}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"activation must be one of {ACTIVATIONS}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_layers, self.output_dim]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_layers": list(self.hidden_layers),
            "output_dim": self.output_dim,
            "activation": self.activation,
        }


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: list
    biases: list

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    scratch: list = field(default_factory=list, repr=False)

    @classmethod
    def for_params(cls, params: MlpParams, **kwargs) -> "AdamState":
        arrays = params.arrays()
        return cls(m=[np.zeros_like(a) for a in arrays], v=[np.zeros_like(a) for a in arrays], **kwargs)


def init_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """He (relu) or LeCun (tanh) normal weights, zero biases."""
    gain = 2.0 if spec.activation == "relu" else 1.0
    sizes = spec.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec, weights, biases)


def _as_batch(params: MlpParams, x):
    if isinstance(x, SparseRows) or sp.issparse(x):
        if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
            raise InvalidArgumentError(f"input has shape {x.shape}, expected (*, {params.spec.input_dim})")
        return x, False
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise InvalidArgumentError(f"input has shape {x.shape}, expected (*, {params.spec.input_dim})")
    return x, single


class SparseRows:
    """Row batch with exactly ``k`` stored (column, value) pairs per row.

    Padding entries carry value 0.  Supports ``rows @ W`` and
    ``rows.T @ delta``, the two products backprop needs.
    """

    ndim = 2

    def __init__(self, cols: np.ndarray, vals: np.ndarray, dim: int):
        self.cols = np.asarray(cols, dtype=np.intp).reshape(len(cols), -1)
        self.vals = np.asarray(vals, dtype=np.float64).reshape(self.cols.shape)
        self.dim = dim

    @classmethod
    def from_dense(cls, x) -> "SparseRows":
        arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
        k = max(1, int(np.max(np.count_nonzero(arr, axis=1))) if arr.size else 1)
        cols = np.zeros((arr.shape[0], k), dtype=np.intp)
        vals = np.zeros((arr.shape[0], k))
        for i, row in enumerate(arr):
            nz = np.flatnonzero(row)
            cols[i, :nz.size] = nz
            vals[i, :nz.size] = row[nz]
        return cls(cols, vals, arr.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.cols.shape[0], self.dim

    def toarray(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (np.repeat(np.arange(self.shape[0]), self.cols.shape[1]), self.cols.ravel()),
                  self.vals.ravel())
        return out

    def __matmul__(self, w: np.ndarray) -> np.ndarray:
        if self.cols.shape[1] == 1:
            return self.vals * w[self.cols[:, 0]]
        return np.einsum("nk,nkj->nj", self.vals, w[self.cols])

    @property
    def T(self) -> "_TransposedRows":
        return _TransposedRows(self)


class _TransposedRows:
    def __init__(self, rows: SparseRows):
        self.rows = rows

    def __matmul__(self, delta: np.ndarray) -> np.ndarray:
        r = self.rows
        out = np.zeros((r.dim, delta.shape[1]))
        contrib = r.vals[:, :, None] * delta[:, None, :]
        np.add.at(out, r.cols.ravel(), contrib.reshape(-1, delta.shape[1]))
        return out


def to_sparse_rows(x):
    """Convert a dense vector or row batch; returns ``(rows, was_1d)``."""
    if isinstance(x, SparseRows):
        return x, False
    if sp.issparse(x):
        x = x.toarray()
    arr = np.asarray(x, dtype=np.float64)
    return SparseRows.from_dense(arr), arr.ndim == 1


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _forward_cache(params: MlpParams, x):
    """Forward pass that keeps every layer input and pre-activation."""
    inputs, preacts = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        if i == last:
            return z, (inputs, preacts)
        preacts.append(z)
        h = _activate(params.spec.activation, z)
    raise AssertionError("unreachable")


def forward(params: MlpParams, x) -> np.ndarray:
    batch, single = _as_batch(params, x)
    out, _ = _forward_cache(params, batch)
    return out[0] if single else out


def _backward(params: MlpParams, cache, grad_out: np.ndarray):
    inputs, preacts = cache
    n_layers = len(params.weights)
    grads = [None] * (2 * n_layers)
    delta = grad_out
    for i in range(n_layers - 1, -1, -1):
        grads[2 * i] = inputs[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ params.weights[i].T
        if params.spec.activation == "relu":
            delta = delta * (preacts[i - 1] > 0)
        else:
            delta = delta * (1.0 - inputs[i] ** 2)
    return [np.asarray(g) for g in grads]


def weighted_mse(params: MlpParams, inputs, targets, weights=None):
    """Loss ``sum_i w_i ||t_i - f(x_i)||^2 / (batch * d)`` and its gradients.

    Returns ``(loss, grads)`` with ``grads`` ordered like :meth:`MlpParams.arrays`.
    """
    batch, _ = _as_batch(params, inputs)
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    n, d = batch.shape[0], params.spec.output_dim
    if n == 0:
        raise InvalidArgumentError("empty batch")
    if t.shape != (n, d):
        raise InvalidArgumentError(f"targets have shape {t.shape}, expected {(n, d)}")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64).reshape(n)
    if np.any(w < 0):
        raise InvalidArgumentError("example weights must be nonnegative")
    out, cache = _forward_cache(params, batch)
    resid = out - t
    scale = 1.0 / (n * d)
    loss = float(scale * np.sum(w[:, None] * resid * resid))
    grads = _backward(params, cache, (2.0 * scale) * w[:, None] * resid)
    return loss, grads


def adam_update(params: MlpParams, grads, state: AdamState, learning_rate: float) -> None:
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    if len(state.scratch) != len(state.m):
        state.scratch = [np.empty_like(m) for m in state.m]
    for a, g, m, v, tmp in zip(params.arrays(), grads, state.m, state.v, state.scratch):
        # in place with one scratch array per parameter; large temporaries
        # would be re-allocated every step
        m *= b1
        np.multiply(g, 1.0 - b1, out=tmp)
        m += tmp
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        if learning_rate:
            np.sqrt(v, out=tmp)
            tmp *= 1.0 / np.sqrt(corr2)
            tmp += state.eps
            np.divide(m, tmp, out=tmp)
            tmp *= learning_rate / corr1
            a -= tmp


def mse_grad_step(params: MlpParams, batch_inputs, batch_targets, weights, optimizer_state: AdamState,
                  learning_rate: float):
    """One Adam step on the weighted MSE; updates ``params`` in place.

    The returned loss is the pre-step value.
    """
    loss, grads = weighted_mse(params, batch_inputs, batch_targets, weights)
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite training loss {loss}")
    adam_update(params, grads, optimizer_state, learning_rate)
    return params, loss


def min_abs_preactivation(params: MlpParams, x) -> float:
    """Smallest |hidden pre-activation| at ``x`` (inf for a linear model)."""
    batch, _ = _as_batch(params, x)
    _, (_, preacts) = _forward_cache(params, batch)
    if not preacts:
        return float("inf")
    return float(min(np.min(np.abs(z)) for z in preacts))


def finite_difference_check(params: MlpParams, x, target, step: float = 1e-5, weights=None) -> float:
    """Max relative gap between analytic and central-difference gradients.

    Relative error per parameter is ``|a - n| / max(|a| + |n|, 1e-6)``; the
    floor keeps exactly-zero gradients from amplifying rounding noise.
    """
    _, analytic = weighted_mse(params, x, target, weights)
    worst = 0.0
    for arr, grad in zip(params.arrays(), analytic):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up, _ = weighted_mse(params, x, target, weights)
            flat[k] = orig - step
            down, _ = weighted_mse(params, x, target, weights)
            flat[k] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(gflat[k] - numeric) / max(abs(gflat[k]) + abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst


def params_to_dict(params: MlpParams) -> dict:
    arrays = params.arrays()
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": params.spec.to_dict(),
        "shapes": [list(a.shape) for a in arrays],
        "values": params.flat().tolist(),
    }


def params_from_dict(data: dict) -> MlpParams:
    if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
        raise InvalidArgumentError("not a version-1 coinflip.mlp checkpoint")
    spec = MlpSpec(**data["spec"])
    sizes = spec.layer_sizes
    expected = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        expected += [(fan_in, fan_out), (fan_out,)]
    if [tuple(s) for s in data["shapes"]] != expected:
        raise InvalidArgumentError("checkpoint shapes inconsistent with spec")
    values = np.asarray(data["values"], dtype=np.float64)
    if values.size != sum(int(np.prod(s)) for s in expected):
        raise InvalidArgumentError("checkpoint value count does not match shapes")
    arrays, offset = [], 0
    for shape in expected:
        size = int(np.prod(shape))
        arrays.append(values[offset:offset + size].reshape(shape).copy())
        offset += size
    return MlpParams(spec, arrays[0::2], arrays[1::2])


def save_params(params: MlpParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)))


def load_params(path) -> MlpParams:
    return params_from_dict(json.loads(Path(path).read_text()))
