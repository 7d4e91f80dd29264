"""Position RMSE and the GOSPA metric."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class GospaParams:
    c: float = 10.0
    alpha: float = 2.0
    p: float = 2.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("GOSPA cutoff c must be > 0")
        if not 0 < self.alpha <= 2:
            raise ValueError("GOSPA alpha must lie in (0, 2]")
        if not 1 <= self.p < math.inf:
            raise ValueError("GOSPA order p must lie in [1, inf)")

    def to_dict(self) -> dict:
        return {"c": self.c, "alpha": self.alpha, "p": self.p}


def squared_errors(truth, est) -> np.ndarray:
    truth = np.asarray(truth, dtype=float)[..., :2]
    est = np.asarray(est, dtype=float)[..., :2]
    if truth.shape != est.shape:
        raise ValueError(f"length mismatch: truth {truth.shape} vs estimates {est.shape}")
    return np.sum((truth - est) ** 2, axis=-1)


def rmse(truth, est) -> float:
    """Position RMSE, pooling squared errors over every leading axis (runs, steps)."""
    return float(math.sqrt(np.mean(squared_errors(truth, est))))


def optimal_assignment(cost) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost injective assignment of the smaller side into the larger."""
    cost = np.asarray(cost, dtype=float)
    if not np.all(np.isfinite(cost)):
        raise ValueError("assignment costs must be finite")
    return linear_sum_assignment(cost)


def optimal_assignment_bruteforce(cost) -> tuple[tuple[int, ...], float]:
    """Exhaustive minimum over injections (test oracle; rows <= cols assumed)."""
    cost = np.asarray(cost, dtype=float)
    n, m = cost.shape
    best, best_perm = math.inf, ()
    for perm in itertools.permutations(range(m), n):
        total = sum(cost[i, j] for i, j in enumerate(perm))
        if total < best:
            best, best_perm = total, perm
    return best_perm, (best if n else 0.0)


def _prepare(X, X_hat):
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    X_hat = np.asarray(X_hat, dtype=float).reshape(-1, 2)
    if X.shape[0] > X_hat.shape[0]:
        X, X_hat = X_hat, X
    return X, X_hat


def gospa(X, X_hat, params: GospaParams = GospaParams()) -> float:
    """GOSPA distance between two finite position sets (symmetric form)."""
    X, X_hat = _prepare(X, X_hat)
    c, alpha, p = params.c, params.alpha, params.p
    total = c**p / alpha * (X_hat.shape[0] - X.shape[0])
    if X.shape[0]:
        d = np.linalg.norm(X[:, None, :] - X_hat[None, :, :], axis=-1)
        cost = np.minimum(d, c) ** p
        rows, cols = optimal_assignment(cost)
        total += float(cost[rows, cols].sum())
    return float(total ** (1.0 / p))


def gospa_bruteforce(X, X_hat, params: GospaParams = GospaParams()) -> float:
    X, X_hat = _prepare(X, X_hat)
    c, alpha, p = params.c, params.alpha, params.p
    d = np.linalg.norm(X[:, None, :] - X_hat[None, :, :], axis=-1) if X.shape[0] else np.zeros((0, X_hat.shape[0]))
    _, best = optimal_assignment_bruteforce(np.minimum(d, c) ** p)
    return float((best + c**p / alpha * (X_hat.shape[0] - X.shape[0])) ** (1.0 / p))


def gospa_trace(truth, est, params: GospaParams = GospaParams()) -> np.ndarray:
    """Per-step GOSPA for ``(T, K, 2+)`` truth and ``(T, K', 2+)`` estimates."""
    truth = np.asarray(truth, dtype=float)
    est = np.asarray(est, dtype=float)
    if truth.shape[0] != est.shape[0]:
        raise ValueError("truth and estimates must cover the same steps")
    return np.array([gospa(truth[t, :, :2], est[t, :, :2], params) for t in range(truth.shape[0])])
