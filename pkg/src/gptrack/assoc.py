"""Loopy belief-propagation data association over target/measurement pairs.

Factors ``psi[k, kappa]`` compare "target k produced measurement kappa"
against "measurement kappa is clutter", relative to a missed detection in
column 0. BP then approximates the marginals of the joint association under
the one-measurement-per-target, one-target-per-measurement constraint.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from gptrack.exceptions import InstanceTooLargeError
from gptrack.kinematics import MeasurementSet
from gptrack.pf import ParticleSet, likelihood

log = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-12
GATE_RATIO = 1e-12
MAX_ENUMERATION = 8


@dataclass
class AssociationFactors:
    """``psi`` is ``(K, n + 1)`` with ``psi[:, 0] == 1``.

    ``likelihoods`` optionally keeps the per-target ``(M, n)`` particle
    likelihood matrices so the weight update need not recompute them.
    """

    psi: np.ndarray
    likelihoods: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        if np.any(self.psi < 0) or not np.all(np.isfinite(self.psi)):
            raise ValueError("association factors must be finite and non-negative")
        if self.psi.shape[1] < 1 or np.any(self.psi[:, 0] != 1.0):
            raise ValueError("column 0 (missed detection) must be exactly 1")

    @property
    def K(self) -> int:
        return self.psi.shape[0]

    @property
    def n_measurements(self) -> int:
        return self.psi.shape[1] - 1


@dataclass
class Marginals:
    """Target-oriented ``p_a`` ``(K, n + 1)`` and measurement-oriented ``p_b`` ``(n, K + 1)``."""

    p_a: np.ndarray
    p_b: np.ndarray
    converged: bool = True
    iterations: int = 0


def _measurement_array(Y_t) -> np.ndarray:
    if isinstance(Y_t, MeasurementSet):
        return Y_t.z
    return np.asarray(Y_t, dtype=float).reshape(-1, 2)


def compute_factors(particle_sets, Y_t, R, P_D: float, lambda_fa: float,
                    clutter_density: float = 1.0) -> AssociationFactors:
    """Likelihood-ratio factors from the particle predictive densities.

    ``psi[k, kappa] = P_D * sum_m w_m p(y_kappa | x_m)
    / (lambda_fa * clutter_density * (1 - P_D))``. The particle predictive
    density integrates to one, which fixes the bracket in the denominator.
    """
    Z = _measurement_array(Y_t)
    K, n = len(particle_sets), Z.shape[0]
    denom = lambda_fa * clutter_density * (1.0 - P_D)
    if denom < DENOMINATOR_FLOOR:
        warnings.warn(
            f"clutter/missed-detection denominator {denom:g} floored at {DENOMINATOR_FLOOR:g}",
            RuntimeWarning, stacklevel=2,
        )
        denom = DENOMINATOR_FLOOR
    psi = np.ones((K, n + 1))
    liks = []
    for k, ps in enumerate(particle_sets):
        L = np.empty((ps.M, n))
        for j in range(n):
            L[:, j] = likelihood(ps.positions, Z[j], R)
        liks.append(L)
        if n:
            psi[k, 1:] = P_D * (ps.weights @ L) / denom
    if n:
        row_max = psi.max(axis=1, keepdims=True)
        gated = psi < GATE_RATIO * row_max
        gated[:, 0] = False
        psi[gated] = 0.0
    return AssociationFactors(psi, liks)


def _normalize_rows(a: np.ndarray) -> np.ndarray:
    return a / a.sum(axis=1, keepdims=True)


def _marginals_from_messages(psi: np.ndarray, V: np.ndarray, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    K, n1 = psi.shape
    p_a = np.ones((K, n1))
    p_a[:, 1:] = psi[:, 1:] * V
    p_b = np.ones((n1 - 1, K + 1))
    p_b[:, 1:] = mu.T
    return _normalize_rows(p_a), _normalize_rows(p_b)


def run_bp(factors: AssociationFactors, max_iter: int = 200, tol: float = 1e-6,
           patience: int = 5, damping: float = 0.5) -> Marginals:
    """Synchronous sum-product sweeps on the association factor graph.

    Each sweep updates every target-to-measurement message ``mu`` from the
    current ``nu`` and then every ``nu`` from the new ``mu``. When the
    largest message change fails to shrink for ``patience`` consecutive
    sweeps, later ``nu`` updates are damped.
    """
    psi = factors.psi
    K, n = factors.K, factors.n_measurements
    if K == 0 or n == 0:
        p_a = np.zeros((K, n + 1))
        p_a[:, 0] = 1.0
        p_b = np.zeros((n, K + 1))
        p_b[:, 0] = 1.0
        return Marginals(p_a, p_b, True, 0)
    P = psi[:, 1:]
    V = np.ones((K, n))
    mu = np.zeros((K, n))
    prev_change = np.inf
    rising = 0
    damp = False
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        S = P * V
        mu_new = P / (1.0 + S.sum(axis=1, keepdims=True) - S)
        V_new = 1.0 / (1.0 + mu_new.sum(axis=0, keepdims=True) - mu_new)
        if damp:
            V_new = damping * V_new + (1.0 - damping) * V
        change = max(np.max(np.abs(V_new - V)), np.max(np.abs(mu_new - mu)))
        V, mu = V_new, mu_new
        if change < tol:
            converged = True
            break
        rising = rising + 1 if change >= prev_change else 0
        if rising >= patience and not damp:
            log.debug("BP oscillating after %d sweeps; enabling damping", it)
            damp = True
        prev_change = change
    p_a, p_b = _marginals_from_messages(psi, V, mu)
    return Marginals(p_a, p_b, converged, it)


def exact_marginals_bruteforce(factors: AssociationFactors) -> Marginals:
    """Exact marginals by enumerating every valid joint association."""
    psi = factors.psi
    K, n = factors.K, factors.n_measurements
    if K > MAX_ENUMERATION or n > MAX_ENUMERATION:
        raise InstanceTooLargeError(f"enumeration limited to K, n <= {MAX_ENUMERATION}; got K={K}, n={n}")
    p_a = np.zeros((K, n + 1))
    p_b = np.zeros((n, K + 1))
    assignment = [0] * K
    used = [False] * (n + 1)

    def recurse(k: int, weight: float):
        if weight == 0.0:
            return
        if k == K:
            for kk, a in enumerate(assignment):
                p_a[kk, a] += weight
            taken = np.zeros(n, dtype=int)
            for kk, a in enumerate(assignment):
                if a:
                    taken[a - 1] = kk + 1
            p_b[np.arange(n), taken] += weight
            return
        for a in range(n + 1):
            if a and used[a]:
                continue
            assignment[k] = a
            used[a] = bool(a)
            recurse(k + 1, weight * psi[k, a])
            if a:
                used[a] = False
        assignment[k] = 0

    recurse(0, 1.0)
    if K == 0:
        p_b[:, 0] = 1.0
        return Marginals(p_a, p_b, True, 0)
    return Marginals(_normalize_rows(p_a), _normalize_rows(p_b) if n else p_b, True, 0)


def total_variation(a: Marginals, b: Marginals) -> float:
    """Largest per-target total-variation distance between two marginal sets."""
    if a.p_a.size == 0:
        return 0.0
    return float(np.max(0.5 * np.abs(a.p_a - b.p_a).sum(axis=1)))
