"""Bootstrap particle filter driven by a learned velocity-delta model.

A particle's first four state columns are always ``[xi, eta, dxi, deta]``:
position and the displacement of the step that led to it. Baseline filters
append extra columns (speed, heading) but reuse the update, resampling and
estimation code here unchanged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from gptrack.exceptions import DegenerateWeightsError
from gptrack.kinematics import MeasurementSet, to_cartesian, wrap_angle
from gptrack.nsim import NsimModel, predict_velocities
from gptrack.rng import stream

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class ParticleSet:
    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.states.shape[0] < 1:
            raise ValueError("a particle set needs at least one particle")
        if self.weights.shape[0] != self.states.shape[0]:
            raise ValueError("one weight per particle required")

    @property
    def M(self) -> int:
        return self.states.shape[0]

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.states.copy(), self.weights.copy())


@dataclass
class PfConfig:
    """Particle-filter settings shared by the learned and baseline filters.

    ``proposal`` selects the velocity sampling variance: ``"latent"`` uses the
    GP latent variance only, ``"predictive"`` adds the GP observation noise.
    """

    M: int = 200
    q_xi: float = 1.0
    q_eta: float = 1.0
    sigma_r: float = 5.0
    sigma_bearing: float = math.radians(0.5)
    resample: str = "always"
    proposal: str = "predictive"
    init_pos_std: float = 1.0
    init_delta_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.resample not in ("always", "ess"):
            raise ValueError("resample must be 'always' or 'ess'")
        if self.proposal not in ("latent", "predictive"):
            raise ValueError("proposal must be 'latent' or 'predictive'")

    @property
    def R(self) -> np.ndarray:
        return np.diag([self.sigma_r**2, self.sigma_bearing**2])


@dataclass
class TrackOutput:
    """Per-step, per-target estimates ``[xi, eta, dxi, deta]``.

    ``estimates`` has shape ``(T, K, 4)``; ``ess`` is ``(T, K)``. BP fields
    are filled by the multi-target tracker only.
    """

    estimates: np.ndarray
    ess: np.ndarray
    filter: str = "gp"
    bp_converged: np.ndarray | None = None
    bp_iterations: np.ndarray | None = None
    respread: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.estimates.shape[0]

    @property
    def K(self) -> int:
        return self.estimates.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return self.estimates[..., :2]


def _prior_vector(prior) -> np.ndarray:
    if hasattr(prior, "velocity_delta"):
        return np.concatenate([[prior.xi, prior.eta], prior.velocity_delta()])
    return np.asarray(prior, dtype=float).ravel()


def initialize_particles(
    M: int,
    rng: np.random.Generator,
    prior=None,
    fixes=None,
    pos_std: float = 1.0,
    delta_std: float = 0.5,
) -> ParticleSet:
    """Uniformly weighted Gaussian cloud around a prior or two position fixes.

    ``prior`` is a KinematicState or a vector starting ``[xi, eta, dxi,
    deta]``; any further entries are copied unperturbed. Without a prior,
    ``fixes`` must give at least two measurements (range, bearing): the cloud
    centers on the second fix with the delta between the two.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if prior is not None:
        center = _prior_vector(prior)
    else:
        if fixes is None or len(fixes) < 2:
            raise ValueError("need a prior state or at least two measurement fixes")
        p = to_cartesian(np.asarray(fixes[:2], dtype=float))
        center = np.concatenate([p[1], p[1] - p[0]])
    states = np.tile(center, (M, 1))
    states[:, :2] += pos_std * rng.standard_normal((M, 2))
    states[:, 2:4] += delta_std * rng.standard_normal((M, 2))
    return ParticleSet(states, np.full(M, 1.0 / M))


def propagate(
    ps: ParticleSet,
    model: NsimModel,
    Q_xi: float,
    Q_eta: float,
    rng: np.random.Generator,
    proposal: str = "latent",
) -> ParticleSet:
    """Draw new deltas from the GPs, then new positions around old + delta."""
    means, var = predict_velocities(model, ps.states[:, 2:4])
    if proposal == "predictive":
        var = var + np.array([model.gp_xi.hp.noise_var, model.gp_eta.hp.noise_var])
    noise = rng.standard_normal((ps.M, 4))
    delta = means + np.sqrt(var) * noise[:, :2]
    pos = ps.states[:, :2] + delta + np.sqrt([Q_xi, Q_eta]) * noise[:, 2:]
    states = ps.states.copy()
    states[:, :2] = pos
    states[:, 2:4] = delta
    return ParticleSet(states, ps.weights.copy())


def log_likelihood(positions: np.ndarray, z, R) -> np.ndarray:
    """Log range-bearing likelihood of ``z`` for each ``(M, 2)`` position."""
    var = np.diag(R) if np.ndim(R) == 2 else np.asarray(R, dtype=float)
    p = np.asarray(positions, dtype=float)
    res_r = z[0] - np.hypot(p[:, 0], p[:, 1])
    res_b = wrap_angle(z[1] - np.arctan2(p[:, 0], p[:, 1]))
    return -0.5 * (res_r**2 / var[0] + res_b**2 / var[1]) - _LOG_2PI - 0.5 * math.log(var[0] * var[1])


def likelihood(positions: np.ndarray, z, R) -> np.ndarray:
    return np.exp(log_likelihood(positions, z, R))


def _normalized(ps: ParticleSet, unnormalized: np.ndarray) -> ParticleSet:
    total = float(np.sum(unnormalized))
    if not (total > 0.0 and np.isfinite(total)):
        raise DegenerateWeightsError("all unnormalized particle weights are zero")
    return ParticleSet(ps.states, unnormalized / total)


def weight_update_stt(ps: ParticleSet, z, R) -> ParticleSet:
    """Multiply weights by the measurement likelihood and renormalize."""
    z = np.asarray([z.r, z.bearing] if hasattr(z, "bearing") else z, dtype=float)
    return _normalized(ps, ps.weights * likelihood(ps.positions, z, R))


def systematic_resample(ps: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    """Systematic resampling; offspring of particle m number floor or ceil of M*w_m."""
    M = ps.M
    cdf = np.cumsum(ps.weights)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(M)) / M
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), M - 1)
    return ParticleSet(ps.states[idx], np.full(M, 1.0 / M))


def effective_sample_size(ps: ParticleSet) -> float:
    return float(1.0 / np.sum(ps.weights**2))


def estimate(ps: ParticleSet) -> np.ndarray:
    """Weighted mean of ``[xi, eta, dxi, deta]``."""
    return ps.weights @ ps.states[:, :4]


def respread(ps: ParticleSet, z, R, rng: np.random.Generator) -> ParticleSet:
    """Scatter positions uniformly in a 3-sigma disc around the fix ``z``."""
    std = np.sqrt(np.diag(R) if np.ndim(R) == 2 else R)
    radius = 3.0 * max(std[0], z[0] * std[1])
    fix = to_cartesian(np.asarray(z, dtype=float))
    rho = radius * np.sqrt(rng.random(ps.M))
    theta = rng.uniform(-np.pi, np.pi, ps.M)
    states = ps.states.copy()
    states[:, 0] = fix[0] + rho * np.cos(theta)
    states[:, 1] = fix[1] + rho * np.sin(theta)
    return ParticleSet(states, np.full(ps.M, 1.0 / ps.M))


def target_measurements(measurements, k: int = 0) -> list[np.ndarray]:
    """Normalize STT input to one ``(n, 2)`` array (n in {0, 1}) per step.

    Labelled measurement sets yield target ``k``'s own detection; unlabelled
    sets and raw arrays must already hold at most one detection per step.
    """
    out = []
    for item in measurements:
        if isinstance(item, MeasurementSet):
            z = item.for_target(k) if item.origin is not None else item.z
        else:
            z = np.asarray(item, dtype=float).reshape(-1, 2)
        if z.shape[0] > 1:
            raise ValueError("single-target tracking needs at most one detection per step")
        out.append(z)
    return out


def run_filter(
    ps: ParticleSet,
    propagate_fn: Callable[[ParticleSet, int, np.random.Generator], ParticleSet],
    measurements: Sequence[np.ndarray],
    R,
    seed: int,
    key,
    resample: str = "always",
) -> tuple[np.ndarray, np.ndarray, int]:
    """The predict / update / estimate / resample loop shared by all STT filters.

    ``ps`` describes the state at step 0, so step 0 is update-only. Returns
    ``(estimates (T, 4), ess (T,), respread_count)``.
    """
    T = len(measurements)
    est = np.empty((T, 4))
    ess = np.empty(T)
    n_respread = 0
    for t, z in enumerate(measurements):
        if t > 0:
            ps = propagate_fn(ps, t, stream(seed, key, t, "propagate"))
        if z.shape[0]:
            try:
                ps = weight_update_stt(ps, z[0], R)
            except DegenerateWeightsError:
                log.warning("degenerate likelihood at t=%d (%s); re-spreading particles", t, key)
                ps = respread(ps, z[0], R, stream(seed, key, t, "respread"))
                n_respread += 1
        est[t] = estimate(ps)
        ess[t] = effective_sample_size(ps)
        if resample == "always" or ess[t] < ps.M / 2:
            ps = systematic_resample(ps, stream(seed, key, t, "resample"))
    return est, ess, n_respread


def track_stt(model: NsimModel, measurements, config: PfConfig, prior=None, key="gp/0") -> TrackOutput:
    """GP-driven bootstrap PF for one target.

    Without ``prior`` the first two detections initialize the cloud and the
    filter starts at the second step; the first estimate is then the fix.
    """
    zs = target_measurements(measurements)
    if not zs:
        return TrackOutput(np.empty((0, 1, 4)), np.empty((0, 1)), filter="gp")
    rng0 = stream(config.seed, key, "init")
    if prior is None:
        fixes = [z[0] for z in zs if z.shape[0]]
        if len(fixes) < 2 or zs[0].shape[0] == 0 or zs[1].shape[0] == 0:
            raise ValueError("without a prior the first two steps must carry detections")
        ps = initialize_particles(config.M, rng0, fixes=fixes, pos_std=config.init_pos_std,
                                  delta_std=config.init_delta_std)
        head = np.concatenate([to_cartesian(fixes[0]), [0.0, 0.0]])
        sub = zs[1:]
    else:
        ps = initialize_particles(config.M, rng0, prior=prior, pos_std=config.init_pos_std,
                                  delta_std=config.init_delta_std)
        head = None
        sub = zs

    def step(p, t, rng):
        return propagate(p, model, config.q_xi, config.q_eta, rng, proposal=config.proposal)

    est, ess, n = run_filter(ps, step, sub, config.R, config.seed, key, config.resample)
    if head is not None:
        est = np.vstack([head, est])
        ess = np.concatenate([[float(config.M)], ess])
    return TrackOutput(est[:, None, :], ess[:, None], filter="gp", respread=n)
