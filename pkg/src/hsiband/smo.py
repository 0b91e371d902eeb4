"""Dual soft-margin SVM solver (sequential minimal optimization).

Solves  min 0.5*a'Qa - sum(a)  s.t.  0 <= a <= C,  y'a = 0,  with
Q_ij = y_i*y_j*K(x_i,x_j), by repeatedly optimizing the maximal violating
pair. Pair selection is via argmax/argmin, so the whole solve is
deterministic for a fixed input order.

Kernel rows are served through an LRU cache; cache capacity affects speed
only, never values, because rows are recomputed identically on a miss.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_BOUND_SNAP = 1e-12


def resolve_gamma(features: np.ndarray, gamma: float | None) -> float:
    """Default RBF width: 1 / (n_features * mean per-feature variance)."""
    if gamma is not None:
        if gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {gamma}")
        return float(gamma)
    x = np.asarray(features, dtype=np.float64)
    d = x.shape[1]
    mean_var = float(x.var(axis=0).mean())
    if mean_var <= 0.0:
        return 1.0 / d
    return 1.0 / (d * mean_var)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a_i - b_j||^2) for all row pairs, in float64."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq = (
        np.einsum("ij,ij->i", a, a)[:, None]
        + np.einsum("ij,ij->i", b, b)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.clip(sq, 0.0, None, out=sq)
    return np.exp(-gamma * sq)


def linear_kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64).T


def kernel_matrix(a: np.ndarray, b: np.ndarray, kind: str, gamma: float) -> np.ndarray:
    if kind == "rbf":
        return rbf_kernel(a, b, gamma)
    if kind == "linear":
        return linear_kernel(a, b)
    raise ConfigError(f"unknown kernel '{kind}' (expected 'rbf' or 'linear')")


class KernelCache:
    """Thread-safe LRU cache of kernel rows over one training set.

    A row is the full kernel column K(x_i, X) as float64. Shared across the
    one-vs-rest binary problems since the kernel depends only on X.
    """

    def __init__(self, x: np.ndarray, kind: str, gamma: float, capacity: int):
        if kind not in ("rbf", "linear"):
            raise ConfigError(f"unknown kernel '{kind}' (expected 'rbf' or 'linear')")
        self.x = np.ascontiguousarray(x, dtype=np.float64)
        self.kind = kind
        self.gamma = gamma
        self.capacity = max(1, capacity)
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self._lock = threading.Lock()
        if kind == "rbf":
            self._sq = np.einsum("ij,ij->i", self.x, self.x)
            self.diag = np.ones(self.x.shape[0])
        else:
            self._sq = None
            self.diag = np.einsum("ij,ij->i", self.x, self.x)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def _compute(self, i: int) -> np.ndarray:
        dots = self.x @ self.x[i]
        if self.kind == "linear":
            return dots
        sq = self._sq + self._sq[i] - 2.0 * dots
        np.clip(sq, 0.0, None, out=sq)
        return np.exp(-self.gamma * sq)

    def row(self, i: int) -> np.ndarray:
        with self._lock:
            if i in self._rows:
                self._rows.move_to_end(i)
                return self._rows[i]
        row = self._compute(i)  # outside the lock; duplicates are identical
        with self._lock:
            self._rows[i] = row
            self._rows.move_to_end(i)
            while len(self._rows) > self.capacity:
                self._rows.popitem(last=False)
        return row


def default_cache_rows(n: int, budget_bytes: int = 512 * 1024 * 1024) -> int:
    """Row capacity that keeps the cache under ~budget_bytes."""
    return max(64, min(n, budget_bytes // (8 * max(1, n))))


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    iterations: int
    converged: bool


def smo_solve(
    cache: KernelCache,
    y: np.ndarray,
    c: float,
    tol: float = 1e-3,
    max_iter: int = 100_000,
) -> SmoResult:
    """Optimize one binary problem to KKT violation <= tol or the iteration cap.

    y must be +-1.0. Returns the dual coefficients, the bias of the decision
    function f(x) = sum_i alpha_i y_i K(x_i, x) + b, the number of pair
    updates, and whether the tolerance was reached.
    """
    n = cache.n
    y = np.asarray(y, dtype=np.float64)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective at alpha = 0
    diag = cache.diag
    pos = y > 0

    iterations = 0
    converged = False
    m_val = 0.0
    big_val = 0.0
    while iterations < max_iter:
        at_upper = alpha >= c * (1.0 - _BOUND_SNAP)
        at_lower = alpha <= c * _BOUND_SNAP
        up = np.where(pos, ~at_upper, ~at_lower)
        lo = np.where(pos, ~at_lower, ~at_upper)
        v = -y * grad
        if not up.any() or not lo.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, v, -np.inf)))
        j = int(np.argmin(np.where(lo, v, np.inf)))
        m_val = v[i]
        big_val = v[j]
        if m_val - big_val <= tol:
            converged = True
            break
        ki = cache.row(i)
        kj = cache.row(j)
        quad = diag[i] + diag[j] - 2.0 * ki[j]
        if quad <= 0.0:
            quad = 1e-12
        # largest step keeping y_i*a_i below its upper bound and y_j*a_j
        # above its lower bound
        room_i = (c - alpha[i]) if pos[i] else alpha[i]
        room_j = alpha[j] if pos[j] else (c - alpha[j])
        lam = min(room_i, room_j, (m_val - big_val) / quad)
        if lam <= 0.0:
            break  # numerically stuck at a bound
        alpha[i] += y[i] * lam
        alpha[j] -= y[j] * lam
        for idx in (i, j):
            if alpha[idx] < c * _BOUND_SNAP:
                alpha[idx] = 0.0
            elif alpha[idx] > c * (1.0 - _BOUND_SNAP):
                alpha[idx] = c
        grad += lam * y * (ki - kj)
        iterations += 1

    v = -y * grad
    free = (alpha > c * _BOUND_SNAP) & (alpha < c * (1.0 - _BOUND_SNAP))
    if free.any():
        bias = float(v[free].mean())
    else:
        at_upper = alpha >= c * (1.0 - _BOUND_SNAP)
        at_lower = alpha <= c * _BOUND_SNAP
        up = np.where(pos, ~at_upper, ~at_lower)
        lo = np.where(pos, ~at_lower, ~at_upper)
        hi = np.where(up, v, -np.inf).max() if up.any() else 0.0
        lw = np.where(lo, v, np.inf).min() if lo.any() else 0.0
        bias = float((hi + lw) / 2.0)
    return SmoResult(alpha=alpha, bias=bias, iterations=iterations, converged=converged)
