"""Closed-form linear coin-flip network.

A linear map fitted by least squares to coin-flip labels stores, per right
singular direction of the state matrix, an inverse count.  For one-hot rows
this is exactly the tabular ``1 / N(s)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coinflip.errors import InvalidArgumentError

RCOND = 1e-10


@dataclass(frozen=True)
class LinearCfnSolution:
    weights: np.ndarray          # (p, d)
    singular_basis: np.ndarray   # V, (p, p), columns are right singular vectors
    singular_values: np.ndarray  # (min(n, p),), descending

    @property
    def rank(self) -> int:
        return _rank(self.singular_values)

    def predict(self, query) -> np.ndarray:
        return np.asarray(query, dtype=np.float64) @ self.weights

    def inverse_count(self, query) -> float | np.ndarray:
        """Realized estimate ``(1/d) * ||query @ W||^2`` for this label draw."""
        out = self.predict(query)
        est = np.mean(out * out, axis=-1)
        return float(est) if est.ndim == 0 else est

    def expected_inverse_count(self, query) -> float | np.ndarray:
        """Expectation of :meth:`inverse_count` over label draws."""
        return _expected_from_svd(query, self.singular_basis, self.singular_values)


def _as_state_matrix(states) -> np.ndarray:
    s = np.asarray(states, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
        raise InvalidArgumentError(f"state matrix must be n x p with n, p >= 1; got {s.shape}")
    return s


def _rank(sv: np.ndarray) -> int:
    if sv.size == 0 or sv[0] == 0:
        return 0
    return int(np.sum(sv > RCOND * sv[0]))


def _svd(s: np.ndarray):
    # LAPACK gesdd; V must be p x p even when n < p so queries outside the
    # row space can be expressed, but U stays thin when n >= p
    u, sv, vt = np.linalg.svd(s, full_matrices=s.shape[0] < s.shape[1])
    return u, sv, vt.T


def fit_linear(states, labels) -> LinearCfnSolution:
    """Minimum-norm least-squares weights regressing ``labels`` on ``states``.

    Singular values below ``1e-10`` times the largest are treated as zero.
    """
    s = _as_state_matrix(states)
    c = np.asarray(labels, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    if c.ndim != 2 or c.shape[0] != s.shape[0]:
        raise InvalidArgumentError(
            f"labels must have {s.shape[0]} rows to match states; got shape {c.shape}"
        )
    u, sv, v = _svd(s)
    r = _rank(sv)
    # W = V_r diag(1/sigma_r) U_r^T C
    coeffs = (u[:, :r].T @ c) / sv[:r, None]
    weights = v[:, :r] @ coeffs
    return LinearCfnSolution(weights=weights, singular_basis=v, singular_values=sv)


def _expected_from_svd(query, v: np.ndarray, sv: np.ndarray):
    q = np.asarray(query, dtype=np.float64)
    if q.shape[-1] != v.shape[0]:
        raise InvalidArgumentError(f"query has {q.shape[-1]} components, expected {v.shape[0]}")
    r = _rank(sv)
    coords = q @ v[:, :r]
    out = np.sum((coords / sv[:r]) ** 2, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def expected_inverse_count(query, states) -> float | np.ndarray:
    """``p (Lambda^T Lambda)^-1 p^T`` with ``p`` the query's right-singular coordinates.

    Directions with (numerically) zero singular value contribute nothing.
    """
    s = _as_state_matrix(states)
    _, sv, v = _svd(s)
    return _expected_from_svd(query, v, sv)
