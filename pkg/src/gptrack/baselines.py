"""Reference filters: the oracle PF and interacting-multiple-model PFs.

Both carry particles ``[xi, eta, dxi, deta, v, phi]`` and propagate with
the curvilinear kinematics, so the columns consumed by the shared update,
resampling and estimation routines keep their meaning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from gptrack.exceptions import ConfigError
from gptrack.kinematics import S2_ACCEL_LEVELS, advance
from gptrack.pf import (
    ParticleSet,
    PfConfig,
    TrackOutput,
    effective_sample_size,
    estimate,
    initialize_particles,
    likelihood,
    respread,
    run_filter,
    systematic_resample,
    target_measurements,
)
from gptrack.rng import stream

MIN_SPEED = 0.1


def _kinematic_prior(state_row) -> np.ndarray:
    xi, eta, v, phi = (float(x) for x in state_row[:4])
    return np.array([xi, eta, v * math.cos(phi), v * math.sin(phi), v, phi])


def propagate_kinematic(ps: ParticleSet, a_t, a_n, q, rng, dt=1.0, sigma_v=0.0, sigma_phi=0.0) -> ParticleSet:
    """Curvilinear step for every particle plus Gaussian position noise."""
    s = ps.states
    v = s[:, 4]
    if sigma_v or sigma_phi:
        extra = rng.standard_normal((ps.M, 2))
        v = v + sigma_v * extra[:, 0]
        phi = s[:, 5] + sigma_phi * extra[:, 1]
    else:
        phi = s[:, 5]
    v = np.maximum(v, MIN_SPEED)
    xi, eta, v_new, phi_new = advance(s[:, 0], s[:, 1], v, phi, a_t, a_n, dt)
    noise = rng.standard_normal((ps.M, 2)) * np.sqrt(q)
    out = np.empty_like(s)
    out[:, 0] = xi + noise[:, 0]
    out[:, 1] = eta + noise[:, 1]
    out[:, 2] = xi - s[:, 0]
    out[:, 3] = eta - s[:, 1]
    out[:, 4] = np.maximum(v_new, MIN_SPEED)
    out[:, 5] = phi_new
    return ParticleSet(out, ps.weights.copy())


def track_oracle_pf(truth: np.ndarray, measurements, cfg: PfConfig, k: int = 0, dt: float = 1.0,
                    key="oracle") -> TrackOutput:
    """PF that knows the true per-step accelerations and association.

    ``truth`` is the ``(T, 6)`` state array of this target; its first row
    seeds the particle cloud.
    """
    truth = np.asarray(truth, dtype=float)
    zs = target_measurements(measurements, k)
    if len(zs) > truth.shape[0]:
        raise ValueError("truth is shorter than the measurement sequence")
    prior = _kinematic_prior(truth[0])
    ps = initialize_particles(cfg.M, stream(cfg.seed, key, "init"), prior=prior,
                              pos_std=cfg.init_pos_std, delta_std=0.0)
    q = np.array([cfg.q_xi, cfg.q_eta])

    def step(p, t, rng):
        a_t, a_n = truth[t - 1, 4], truth[t - 1, 5]
        return propagate_kinematic(p, a_t, a_n, q, rng, dt)

    est, ess, n = run_filter(ps, step, zs, cfg.R, cfg.seed, key, cfg.resample)
    return TrackOutput(est[:, None, :], ess[:, None], filter="oracle", respread=n)


@dataclass(frozen=True)
class MotionHypothesis:
    """Constant accelerations, or a constant turn rate (rad/s) when set."""

    a_t: float = 0.0
    a_n: float = 0.0
    turn_rate: float | None = None

    def accelerations(self, v: np.ndarray):
        if self.turn_rate is not None:
            return np.full_like(v, self.a_t), self.turn_rate * v
        return self.a_t, self.a_n


@dataclass
class ImmConfig:
    """Model bank, Markov switching matrix and initial model probabilities.

    With ``split_particles`` the particle budget ``M`` is divided across the
    bank so every compared filter uses the same total count.
    """

    bank: list
    transition: np.ndarray | None = None
    initial_probs: np.ndarray | None = None
    self_transition: float = 0.95
    split_particles: bool = True
    sigma_v: float = 0.0
    sigma_phi: float = 0.0

    def __post_init__(self):
        self.bank = [b if isinstance(b, MotionHypothesis) else MotionHypothesis(**b) for b in self.bank]
        n = len(self.bank)
        if n == 0:
            raise ConfigError("IMM bank must be nonempty")
        if self.transition is None:
            if n == 1:
                self.transition = np.ones((1, 1))
            else:
                off = (1.0 - self.self_transition) / (n - 1)
                self.transition = np.full((n, n), off)
                np.fill_diagonal(self.transition, self.self_transition)
        self.transition = np.asarray(self.transition, dtype=float)
        if self.transition.shape != (n, n) or np.any(self.transition < 0):
            raise ConfigError("transition must be a non-negative n x n matrix")
        if not np.allclose(self.transition.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigError("transition rows must sum to 1")
        if self.initial_probs is None:
            self.initial_probs = np.full(n, 1.0 / n)
        self.initial_probs = np.asarray(self.initial_probs, dtype=float)
        if self.initial_probs.shape != (n,) or abs(self.initial_probs.sum() - 1.0) > 1e-9:
            raise ConfigError("initial_probs must be a probability vector over the bank")

    @property
    def n_models(self) -> int:
        return len(self.bank)


def imm2_config(turn_rate_deg: float = 15.0, **kwargs) -> ImmConfig:
    """Left and right constant coordinated turns."""
    w = math.radians(turn_rate_deg)
    return ImmConfig(bank=[MotionHypothesis(turn_rate=w), MotionHypothesis(turn_rate=-w)], **kwargs)


def imm9_config(seed: int = 0, levels: Sequence[float] = S2_ACCEL_LEVELS, **kwargs) -> ImmConfig:
    """All along/cross-track magnitude pairs, each with a fixed random sign pair."""
    rng = stream(seed, "imm9-signs")
    bank = []
    for a_t in levels:
        for a_n in levels:
            s = np.where(rng.random(2) < 0.5, -1.0, 1.0)
            bank.append(MotionHypothesis(a_t=float(s[0] * a_t), a_n=float(s[1] * a_n)))
    return ImmConfig(bank=bank, **kwargs)


def _mix(sets: list[ParticleSet], probs: np.ndarray, weights_ij: np.ndarray, j: int, M_j: int,
         rng: np.random.Generator) -> ParticleSet:
    """Draw model j's particles from the mixture of all model posteriors."""
    if len(sets) == 1:
        return systematic_resample(sets[0], rng)
    states = np.concatenate([s.states for s in sets])
    w = np.concatenate([weights_ij[i] * s.weights for i, s in enumerate(sets)])
    total = w.sum()
    if not total > 0:
        # Model j carries no predicted mass; keep its own posterior alive.
        return systematic_resample(sets[j], rng)
    w = w / total
    pooled = ParticleSet(states, w)
    cdf = np.cumsum(pooled.weights)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(M_j)) / M_j
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), states.shape[0] - 1)
    return ParticleSet(states[idx], np.full(M_j, 1.0 / M_j))


def track_imm_pf(imm: ImmConfig, measurements, cfg: PfConfig, prior_row, k: int = 0, dt: float = 1.0,
                 key="imm") -> TrackOutput:
    """IMM particle filter: interaction, per-model PF update, model probabilities.

    ``prior_row`` is the initial ``[xi, eta, v, phi, ...]`` state.
    """
    zs = target_measurements(measurements, k)
    n = imm.n_models
    M_j = max(1, cfg.M // n) if imm.split_particles else cfg.M
    prior = _kinematic_prior(prior_row)
    q = np.array([cfg.q_xi, cfg.q_eta])
    probs = imm.initial_probs.copy()
    sets = [
        initialize_particles(M_j, stream(cfg.seed, f"{key}/{j}", "init"), prior=prior,
                             pos_std=cfg.init_pos_std, delta_std=0.0)
        for j in range(n)
    ]
    Pi = imm.transition
    T = len(zs)
    est = np.empty((T, 4))
    ess = np.empty(T)
    model_probs = np.empty((T, n))
    n_respread = 0
    for t, z in enumerate(zs):
        if t > 0:
            c = Pi.T @ probs
            mix_w = (Pi * probs[:, None]) / np.where(c > 0, c, 1.0)[None, :]
            new_sets = []
            for j, hyp in enumerate(imm.bank):
                mixed = _mix(sets, probs, mix_w[:, j], j, M_j, stream(cfg.seed, f"{key}/{j}", t - 1, "resample"))
                a_t, a_n = hyp.accelerations(mixed.states[:, 4])
                new_sets.append(propagate_kinematic(mixed, a_t, a_n, q, stream(cfg.seed, f"{key}/{j}", t, "propagate"),
                                                    dt, imm.sigma_v, imm.sigma_phi))
            sets = new_sets
        else:
            c = probs.copy()
        if z.shape[0]:
            lam = np.empty(n)
            updated = []
            for j, s in enumerate(sets):
                w = s.weights * likelihood(s.positions, z[0], cfg.R)
                lam[j] = w.sum()
                updated.append(ParticleSet(s.states, w / lam[j]) if lam[j] > 0 else s)
            if not np.any(lam * c > 0):
                updated = [respread(s, z[0], cfg.R, stream(cfg.seed, f"{key}/{j}", t, "respread"))
                           for j, s in enumerate(sets)]
                probs = c / c.sum()
                n_respread += 1
            else:
                probs = lam * c
                probs = probs / probs.sum()
            sets = updated
        else:
            probs = c / c.sum()
        model_probs[t] = probs
        est[t] = sum(p * estimate(s) for p, s in zip(probs, sets))
        ess[t] = sum(p * effective_sample_size(s) for p, s in zip(probs, sets))
    name = f"imm{n}" if n in (2, 9) else "imm"
    out = TrackOutput(est[:, None, :], ess[:, None], filter=name, respread=n_respread)
    out.diagnostics["model_probs"] = model_probs
    return out
