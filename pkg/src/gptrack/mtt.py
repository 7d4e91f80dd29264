"""Multi-target tracker: GP-driven particle clouds coupled through BP association."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from gptrack import assoc
from gptrack.exceptions import DegenerateWeightsError
from gptrack.kinematics import MeasurementSet
from gptrack.nsim import NsimModel
from gptrack.pf import (
    ParticleSet,
    TrackOutput,
    effective_sample_size,
    estimate,
    initialize_particles,
    likelihood,
    propagate,
    systematic_resample,
)
from gptrack.rng import stream

log = logging.getLogger(__name__)


@dataclass
class MttConfig:
    """Known, fixed target count and the shared filter settings.

    ``missed_detection`` adds the ``p(a=0) * (1 - P_D)`` hypothesis to each
    particle's weight factor. ``clutter_density`` scales the clutter term of
    the association factors (1 keeps the plain ratio). ``target_keys`` names
    each target's RNG stream; it defaults to the slot index.
    """

    K: int = 3
    M: int = 500
    p_d: float = 0.9
    lambda_fa: float = 2.0
    q_xi: float = 1.0
    q_eta: float = 1.0
    sigma_r: float = 5.0
    sigma_bearing: float = math.radians(0.5)
    bp_max_iter: int = 200
    bp_tol: float = 1e-6
    resample: str = "always"
    proposal: str = "predictive"
    missed_detection: bool = False
    clutter_density: float = 1.0
    init_pos_std: float = 1.0
    init_delta_std: float = 0.5
    seed: int = 0
    target_keys: list | None = None
    record_marginals: bool = False

    def __post_init__(self):
        if self.K < 1 or self.M < 1:
            raise ValueError("K and M must be >= 1")
        if self.target_keys is not None and len(self.target_keys) != self.K:
            raise ValueError("one target key per target required")

    @property
    def R(self) -> np.ndarray:
        return np.diag([self.sigma_r**2, self.sigma_bearing**2])

    def key(self, k: int) -> str:
        return f"gp/{self.target_keys[k] if self.target_keys is not None else k}"


def weight_update_mtt(ps: ParticleSet, Y_t, marginals_row, R, P_D: float, missed_detection: bool = False,
                      likelihoods: np.ndarray | None = None) -> ParticleSet:
    """Association-weighted update.

    ``w_m * (sum_kappa p(y_kappa | x_m) p(a = kappa) [+ p(a = 0) (1 - P_D)])``,
    renormalized. An empty measurement set leaves the weights untouched.
    """
    Z = assoc._measurement_array(Y_t)
    n = Z.shape[0]
    p = np.asarray(marginals_row, dtype=float)
    if p.shape != (n + 1,):
        raise ValueError(f"marginals row must have {n + 1} entries")
    if n == 0:
        return ps.copy()
    L = likelihoods
    if L is None:
        L = np.column_stack([likelihood(ps.positions, Z[j], R) for j in range(n)])
    factor = L @ p[1:]
    if missed_detection:
        factor = factor + p[0] * (1.0 - P_D)
    w = ps.weights * factor
    total = float(w.sum())
    if not (total > 0.0 and np.isfinite(total)):
        raise DegenerateWeightsError("all association-weighted particle weights are zero")
    return ParticleSet(ps.states, w / total)


def track_mtt(model: NsimModel, measurement_sets, cfg: MttConfig, priors) -> TrackOutput:
    """Run the GP particle/BP tracker over a sequence of measurement sets.

    ``priors`` gives one initial state per target (KinematicState or vector
    ``[xi, eta, dxi, deta]``) describing step 0.
    """
    if len(priors) != cfg.K:
        raise ValueError(f"expected {cfg.K} priors, got {len(priors)}")
    sets = [
        initialize_particles(cfg.M, stream(cfg.seed, cfg.key(k), "init"), prior=priors[k],
                             pos_std=cfg.init_pos_std, delta_std=cfg.init_delta_std)
        for k in range(cfg.K)
    ]
    T = len(measurement_sets)
    est = np.empty((T, cfg.K, 4))
    ess = np.empty((T, cfg.K))
    converged = np.ones(T, dtype=bool)
    iterations = np.zeros(T, dtype=int)
    fallbacks = 0
    recorded = []
    R = cfg.R
    for t, Y in enumerate(measurement_sets):
        if t > 0:
            sets = [
                propagate(ps, model, cfg.q_xi, cfg.q_eta, stream(cfg.seed, cfg.key(k), t, "propagate"),
                          proposal=cfg.proposal)
                for k, ps in enumerate(sets)
            ]
        Z = assoc._measurement_array(Y)
        if Z.shape[0]:
            factors = assoc.compute_factors(sets, Z, R, cfg.p_d, cfg.lambda_fa, cfg.clutter_density)
            marg = assoc.run_bp(factors, max_iter=cfg.bp_max_iter, tol=cfg.bp_tol)
            converged[t] = marg.converged
            iterations[t] = marg.iterations
            if cfg.record_marginals:
                recorded.append((t, marg.p_a))
            updated = []
            for k, ps in enumerate(sets):
                try:
                    updated.append(weight_update_mtt(ps, Z, marg.p_a[k], R, cfg.p_d, cfg.missed_detection,
                                                     likelihoods=factors.likelihoods[k]))
                except DegenerateWeightsError:
                    log.info("target %d: degenerate association weights at t=%d; keeping prior", k, t)
                    fallbacks += 1
                    updated.append(ps)
            sets = updated
        for k, ps in enumerate(sets):
            est[t, k] = estimate(ps)
            ess[t, k] = effective_sample_size(ps)
            if cfg.resample == "always" or ess[t, k] < ps.M / 2:
                sets[k] = systematic_resample(ps, stream(cfg.seed, cfg.key(k), t, "resample"))
    out = TrackOutput(est, ess, filter="gp-bp", bp_converged=converged, bp_iterations=iterations)
    out.diagnostics["degenerate_fallbacks"] = fallbacks
    if cfg.record_marginals:
        out.diagnostics["marginals"] = recorded
    return out
