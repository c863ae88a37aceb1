"""Prioritized FIFO replay of (state, coin-flip label) records.

Records are sampled with replacement in proportion to

    priority = alpha / max(n_updates, 1) + (1 - alpha) * inverse_count_estimate

where ``n_updates`` counts how often the record has been drawn.  Sampling and
priority refreshes are vectorized over a whole minibatch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coinflip.errors import EmptyBufferError, InvalidArgumentError, RecordNotFoundError
from coinflip.function_approx import SparseRows

PRIORITY_FLOOR = 1e-12


class SumTree:
    """Array-backed binary tree of priorities; leaf ``i`` lives at ``leaves + i``.

    Internal nodes are always recomputed as ``left + right`` (never patched by
    deltas), so the root is the floating-point sum of the leaves with no drift.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidArgumentError("sum tree capacity must be positive")
        self.leaves = 1 << max(0, int(capacity - 1).bit_length())
        self.depth = self.leaves.bit_length() - 1
        self.nodes = np.zeros(2 * self.leaves)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def __getitem__(self, index):
        return self.nodes[self.leaves + np.asarray(index)]

    def set(self, index, values) -> None:
        if np.ndim(index) == 0:
            i = int(index) + self.leaves
            self.nodes[i] = float(np.asarray(values).reshape(-1)[0])
            nodes = self.nodes
            while i > 1:
                i >>= 1
                nodes[i] = nodes[2 * i] + nodes[2 * i + 1]
            return
        idx = np.atleast_1d(np.asarray(index, dtype=np.int64)) + self.leaves
        self.nodes[idx] = values
        # duplicate parents just receive the same value twice
        for _ in range(self.depth):
            idx = idx >> 1
            self.nodes[idx] = self.nodes[2 * idx] + self.nodes[2 * idx + 1]

    def find(self, mass) -> np.ndarray:
        """Leaf indices whose cumulative-priority interval contains ``mass``."""
        mass = np.array(mass, dtype=np.float64, ndmin=1)
        idx = np.ones(mass.shape, dtype=np.int64)
        for _ in range(self.depth):
            left = 2 * idx
            left_mass = self.nodes[left]
            go_right = mass >= left_mass
            mass = np.where(go_right, mass - left_mass, mass)
            idx = left + go_right
        return idx - self.leaves


@dataclass
class BufferRecord:
    state_encoding: np.ndarray
    coin_flips: np.ndarray
    n_updates: int
    priority: float


class StateStore:
    """Fixed-capacity ring of state encodings.

    Dense mode keeps full rows.  With ``sparse_nnz=k`` each row keeps at most
    ``k`` (column, value) pairs and batches come back as
    :class:`~coinflip.function_approx.SparseRows`, which is what makes one-hot
    inputs over large grids cheap.
    """

    def __init__(self, capacity: int, state_dim: int, sparse_nnz: int | None = None, dtype=np.float64):
        if capacity < 1 or state_dim < 1:
            raise InvalidArgumentError("capacity and state_dim must be positive")
        self.capacity = capacity
        self.state_dim = state_dim
        self.sparse_nnz = sparse_nnz
        if sparse_nnz is None:
            self._dense = np.zeros((capacity, state_dim), dtype=dtype)
        else:
            self._cols = np.zeros((capacity, sparse_nnz), dtype=np.intp)
            self._vals = np.zeros((capacity, sparse_nnz), dtype=np.float64)

    def put(self, slot: int, encoding) -> None:
        enc = np.asarray(encoding, dtype=np.float64).reshape(-1)
        if enc.size != self.state_dim:
            raise InvalidArgumentError(f"state encoding has length {enc.size}, expected {self.state_dim}")
        if self.sparse_nnz is None:
            self._dense[slot] = enc
            return
        nz = np.flatnonzero(enc)
        if nz.size > self.sparse_nnz:
            raise InvalidArgumentError(f"encoding has {nz.size} nonzeros, store allows {self.sparse_nnz}")
        self._cols[slot] = 0
        self._vals[slot] = 0.0
        self._cols[slot, :nz.size] = nz
        self._vals[slot, :nz.size] = enc[nz]

    def batch(self, slots):
        slots = np.asarray(slots, dtype=np.int64)
        if self.sparse_nnz is None:
            return self._dense[slots].astype(np.float64, copy=False)
        return SparseRows(self._cols[slots], self._vals[slots], self.state_dim)

    def row(self, slot: int) -> np.ndarray:
        if self.sparse_nnz is None:
            return self._dense[slot].astype(np.float64)
        out = np.zeros(self.state_dim)
        np.add.at(out, self._cols[slot], self._vals[slot])
        return out


class CoinFlipBuffer:
    """Prioritized store of (state, coin-flip label) pairs with FIFO eviction.

    Record ids are insertion ordinals; a record lives in slot ``id % capacity``
    until it is overwritten.
    """

    def __init__(self, capacity: int, state_dim: int, d: int, alpha: float = 0.5,
                 sparse_nnz: int | None = None, state_dtype=np.float64):
        if d < 1:
            raise InvalidArgumentError("flip count d must be positive")
        if not 0.0 <= alpha <= 1.0:
            raise InvalidArgumentError("alpha must lie in [0, 1]")
        self.capacity = capacity
        self.d = d
        self.alpha = alpha
        self.states = StateStore(capacity, state_dim, sparse_nnz, state_dtype)
        self.labels = np.zeros((capacity, d))
        self.n_updates = np.zeros(capacity, dtype=np.int64)
        self.tree = SumTree(capacity)
        self.next_id = 0

    def __len__(self) -> int:
        return min(self.next_id, self.capacity)

    @property
    def state_dim(self) -> int:
        return self.states.state_dim

    def priority_formula(self, n_updates, estimate, alpha=None):
        alpha = self.alpha if alpha is None else alpha
        n = np.maximum(np.asarray(n_updates, dtype=np.float64), 1.0)
        pr = alpha / n + (1.0 - alpha) * np.asarray(estimate, dtype=np.float64)
        return np.maximum(pr, PRIORITY_FLOOR)

    def insert(self, state_encoding, coin_flips, initial_estimate: float) -> int:
        """Store a record with ``n_updates = 0``; returns its id."""
        flips = np.asarray(coin_flips, dtype=np.float64).reshape(-1)
        if flips.size != self.d:
            raise InvalidArgumentError(f"label has length {flips.size}, expected {self.d}")
        if initial_estimate < 0 or not np.isfinite(initial_estimate):
            raise InvalidArgumentError("initial inverse-count estimate must be finite and >= 0")
        rid = self.next_id
        slot = rid % self.capacity
        self.states.put(slot, state_encoding)
        self.labels[slot] = flips
        self.n_updates[slot] = 0
        self.tree.set(slot, self.priority_formula(1, initial_estimate))
        self.next_id += 1
        return rid

    def _slot(self, record_id: int) -> int:
        if not (self.next_id - len(self) <= record_id < self.next_id):
            raise RecordNotFoundError(record_id)
        return record_id % self.capacity

    def slot_ids(self, slots) -> np.ndarray:
        """Record ids currently held in ``slots``."""
        slots = np.asarray(slots, dtype=np.int64)
        base = self.next_id - self.next_id % self.capacity
        ids = base + slots
        return np.where(ids >= self.next_id, ids - self.capacity, ids)

    def record(self, record_id: int) -> BufferRecord:
        slot = self._slot(record_id)
        return BufferRecord(
            state_encoding=self.states.row(slot),
            coin_flips=self.labels[slot].copy(),
            n_updates=int(self.n_updates[slot]),
            priority=float(self.tree[slot]),
        )

    def priorities(self) -> np.ndarray:
        return self.tree[np.arange(len(self))].copy()

    def sample_slots(self, batch_size: int, rng: np.random.Generator, prioritized: bool = True) -> np.ndarray:
        """Draw slots with replacement and bump their ``n_updates``."""
        size = len(self)
        if size == 0:
            raise EmptyBufferError("cannot sample from an empty buffer")
        if batch_size < 0:
            raise InvalidArgumentError("batch_size must be >= 0")
        if batch_size == 0:
            return np.zeros(0, dtype=np.int64)
        if prioritized:
            slots = self.tree.find(rng.random(batch_size) * self.tree.total)
            # rounding at interval edges can step past the live range
            slots = np.minimum(slots, size - 1)
        else:
            slots = rng.integers(0, size, size=batch_size)
        np.add.at(self.n_updates, slots, 1)
        return slots

    def sample(self, batch_size: int, rng: np.random.Generator, prioritized: bool = True):
        """Priority-proportional draw; returns ``[(record_id, BufferRecord), ...]``."""
        slots = self.sample_slots(batch_size, rng, prioritized)
        ids = self.slot_ids(slots)
        return [(int(i), self.record(int(i))) for i in ids]

    def update_priority(self, record_id: int, inverse_count_estimate: float, alpha: float | None = None) -> float:
        slot = self._slot(record_id)
        return float(self.update_slot_priorities([slot], [inverse_count_estimate], alpha)[0])

    def update_slot_priorities(self, slots, estimates, alpha: float | None = None) -> np.ndarray:
        slots = np.asarray(slots, dtype=np.int64)
        pr = self.priority_formula(self.n_updates[slots], estimates, alpha)
        if slots.size:
            self.tree.set(slots, pr)
        return pr
