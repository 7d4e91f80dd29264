"""Shift-invariant motion model learned on Cartesian velocity deltas.

Two GPs share the same inputs, the previous per-step displacement
``(dxi, deta)``, and predict the next displacement along X and Y. Nothing
here depends on absolute position, so a trajectory and any translated copy
produce the same model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from gptrack import gpr
from gptrack.gpr import GpModel, Hyperparameters


@dataclass(frozen=True)
class VelocityDelta:
    dxi: float
    deta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dxi, self.deta])


@dataclass(frozen=True, eq=False)
class NsimTrainingSet:
    inputs: np.ndarray
    xi_targets: np.ndarray
    eta_targets: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True, eq=False)
class NsimModel:
    gp_xi: GpModel
    gp_eta: GpModel
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.array_equal(self.gp_xi.inputs, self.gp_eta.inputs):
            raise ValueError("both axis GPs must share identical training inputs")

    @property
    def n_pairs(self) -> int:
        return self.gp_xi.n_samples

    def to_dict(self) -> dict:
        return {
            "format": "gptrack.nsim/1",
            "metadata": dict(self.metadata),
            "gp_xi": self.gp_xi.to_dict(),
            "gp_eta": self.gp_eta.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NsimModel":
        return cls(
            GpModel.from_dict(data["gp_xi"]),
            GpModel.from_dict(data["gp_eta"]),
            dict(data.get("metadata", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "NsimModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _as_trajectories(positions) -> list[np.ndarray]:
    if isinstance(positions, np.ndarray) and positions.ndim == 2:
        return [positions]
    if isinstance(positions, np.ndarray) and positions.ndim == 3:
        return list(positions)
    items = list(positions)
    if items and np.ndim(items[0]) == 1:
        return [np.asarray(items, dtype=float)]
    return [np.asarray(p, dtype=float) for p in items]


def build_training_set(positions) -> NsimTrainingSet:
    """Velocity-delta pairs from one ``(n, 2)`` position track or a list of them.

    Pairs never straddle two trajectories.
    """
    ins, txi, teta = [], [], []
    for traj in _as_trajectories(positions):
        traj = np.asarray(traj, dtype=float)[:, :2]
        if traj.shape[0] < 3:
            raise ValueError(f"need at least 3 positions to form a training pair, got {traj.shape[0]}")
        if not np.all(np.isfinite(traj)):
            raise ValueError("positions must be finite")
        d = np.diff(traj, axis=0)
        ins.append(d[:-1])
        txi.append(d[1:, 0])
        teta.append(d[1:, 1])
    return NsimTrainingSet(np.concatenate(ins), np.concatenate(txi), np.concatenate(teta))


def default_grid(noise_vars: float | Sequence[float] = 1.0) -> list[Hyperparameters]:
    if np.ndim(noise_vars) == 0:
        noise_vars = (float(noise_vars),)
    return gpr.hyperparameter_grid(noise_vars=noise_vars)


def train_nsim(
    positions,
    hp_grid: Sequence[Hyperparameters] | None = None,
    shared: bool = True,
    metadata: dict | None = None,
) -> NsimModel:
    """Fit the X/Y velocity GPs.

    With ``shared`` the two axes use one hyperparameter triple chosen by the
    summed log marginal likelihood; otherwise each axis is selected alone.
    """
    ts = build_training_set(positions)
    grid = list(hp_grid) if hp_grid is not None else default_grid()
    if shared:
        hp_xi = hp_eta = gpr.select_hyperparameters(ts.inputs, [ts.xi_targets, ts.eta_targets], grid)
    else:
        hp_xi = gpr.select_hyperparameters(ts.inputs, ts.xi_targets, grid)
        hp_eta = gpr.select_hyperparameters(ts.inputs, ts.eta_targets, grid)
    meta = {"n_pairs": len(ts), "shared_hyperparameters": bool(shared)}
    meta.update(metadata or {})
    return NsimModel(gpr.fit(ts.inputs, ts.xi_targets, hp_xi), gpr.fit(ts.inputs, ts.eta_targets, hp_eta), meta)


def predict_velocities(model: NsimModel, deltas) -> tuple[np.ndarray, np.ndarray]:
    """Batch prediction: ``(M, 2)`` means and ``(M, 2)`` latent variances."""
    D = np.atleast_2d(np.asarray(deltas, dtype=float))
    a, b = model.gp_xi, model.gp_eta
    if a.hp == b.hp and a.jitter == b.jitter:
        # Same kernel and factor: one cross-covariance and one solve serve both axes.
        Kt = gpr.kernel_matrix(D, a.inputs, a.hp)
        v = linalg.solve_triangular(a.chol, Kt.T, lower=True, check_finite=False)
        var = np.maximum(a.hp.signal_var - np.einsum("ij,ij->j", v, v), 0.0)
        means = np.column_stack([Kt @ a.alpha, Kt @ b.alpha])
        return means, np.column_stack([var, var])
    mx, vx = gpr.predict(a, D)
    my, vy = gpr.predict(b, D)
    return np.column_stack([mx, my]), np.column_stack([vx, vy])


def predict_velocity(model: NsimModel, delta) -> tuple[tuple[float, float], tuple[float, float]]:
    """Per-axis ``(mean, variance)`` of the next displacement after ``delta``."""
    d = delta.as_array() if isinstance(delta, VelocityDelta) else np.asarray(delta, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("delta must be finite")
    m, v = predict_velocities(model, d[None, :])
    return (float(m[0, 0]), float(v[0, 0])), (float(m[0, 1]), float(v[0, 1]))


class NsimMotionModel(BaseEstimator):
    """Estimator wrapper: ``fit`` on position tracks, ``predict`` next deltas.

    Parameters
    ----------
    grid : sequence of Hyperparameters, optional
        Search grid; defaults to ``default_grid(noise_vars)``.
    noise_vars : float or sequence of float
        Observation-noise values scanned when ``grid`` is None.
    shared_hyperparameters : bool
        Use one hyperparameter triple for both axes.
    """

    def __init__(self, grid=None, noise_vars=1.0, shared_hyperparameters=True):
        self.grid = grid
        self.noise_vars = noise_vars
        self.shared_hyperparameters = shared_hyperparameters

    def fit(self, X, y=None):
        grid = self.grid if self.grid is not None else default_grid(self.noise_vars)
        self.model_ = train_nsim(X, grid, shared=self.shared_hyperparameters)
        self.n_features_in_ = 2
        return self

    def predict(self, X, return_var=False):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != 2:
            raise ValueError("deltas must have two columns (dxi, deta)")
        means, var = predict_velocities(self.model_, X)
        return (means, var) if return_var else means
