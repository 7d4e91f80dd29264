"""Exact Gaussian-process regression with the squared-exponential kernel.

The functional core (``fit``, ``predict``, ``log_marginal_likelihood``,
``select_hyperparameters``) operates on immutable :class:`GpModel` values.
:class:`GaussianProcessSE` wraps it in a scikit-learn compatible regressor.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from gptrack.exceptions import IllConditionedError

JITTER_START = 1e-9
JITTER_MAX = 1e-3
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Hyperparameters:
    """SE kernel hyperparameters.

    ``signal_var`` and ``length_scale`` must be strictly positive.
    ``noise_var`` may be zero to express the noiseless interpolation limit.
    """

    signal_var: float
    length_scale: float
    noise_var: float

    def __post_init__(self):
        for name in ("signal_var", "length_scale", "noise_var"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
        if self.signal_var <= 0 or self.length_scale <= 0:
            raise ValueError("signal_var and length_scale must be > 0")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")

    def to_dict(self) -> dict:
        return {
            "signal_var": float(self.signal_var),
            "length_scale": float(self.length_scale),
            "noise_var": float(self.noise_var),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Hyperparameters":
        return cls(float(data["signal_var"]), float(data["length_scale"]), float(data["noise_var"]))


@dataclass(frozen=True, eq=False)
class GpModel:
    """A fitted GP: training data plus the factorized noisy Gram matrix."""

    inputs: np.ndarray
    targets: np.ndarray
    hp: Hyperparameters
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    def to_dict(self) -> dict:
        return {
            "hyperparameters": self.hp.to_dict(),
            "inputs": self.inputs.tolist(),
            "targets": self.targets.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GpModel":
        return fit(
            np.asarray(data["inputs"], dtype=float),
            np.asarray(data["targets"], dtype=float),
            Hyperparameters.from_dict(data["hyperparameters"]),
        )


def kernel_se(x, x_prime, hp: Hyperparameters) -> float:
    """Squared-exponential covariance between two input vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_prime.shape}")
    sq = float(np.sum((x - x_prime) ** 2))
    return hp.signal_var * math.exp(-0.5 * sq / hp.length_scale**2)


def kernel_matrix(A: np.ndarray, B: np.ndarray, hp: Hyperparameters) -> np.ndarray:
    """Cross-covariance matrix ``K[i, j] = k(A[i], B[j])``."""
    sq = cdist(A, B, "sqeuclidean")
    return hp.signal_var * np.exp(-0.5 / hp.length_scale**2 * sq)


def _factorize(gram: np.ndarray, hp: Hyperparameters) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``gram``, escalating diagonal jitter on failure."""
    n = gram.shape[0]
    jitter = 0.0
    while True:
        try:
            L = linalg.cholesky(gram + jitter * np.eye(n), lower=True, check_finite=False)
            if np.all(np.isfinite(L)):
                return L, jitter
        except linalg.LinAlgError:
            pass
        jitter = JITTER_START * hp.signal_var if jitter == 0.0 else jitter * 10.0
        if jitter > JITTER_MAX * hp.signal_var * (1 + 1e-12):
            raise IllConditionedError(
                f"Cholesky failed for N={n} with jitter up to {JITTER_MAX:g}*signal_var"
            )


def fit(inputs, targets, hp: Hyperparameters) -> GpModel:
    """Condition a zero-mean SE GP on ``(inputs, targets)``."""
    X = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] < 1:
        raise ValueError("need at least one training point")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"inputs have {X.shape[0]} rows but targets have {y.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    gram = kernel_matrix(X, X, hp)
    gram[np.diag_indices_from(gram)] += hp.noise_var
    L, jitter = _factorize(gram, hp)
    alpha = linalg.cho_solve((L, True), y, check_finite=False)
    X = X.copy()
    y = y.copy()
    for arr in (X, y, L, alpha):
        arr.setflags(write=False)
    return GpModel(inputs=X, targets=y, hp=hp, chol=L, alpha=alpha, jitter=jitter)


def predict(model: GpModel, x):
    """Predictive mean and latent-function variance at ``x``.

    ``x`` may be a single d-vector (scalars returned) or an ``(n, d)`` array
    (length-n arrays returned). The variance excludes the observation noise
    and is clamped at zero.
    """
    Xq = np.asarray(x, dtype=float)
    single = Xq.ndim == 1
    Xq = np.atleast_2d(Xq)
    if Xq.shape[1] != model.inputs.shape[1]:
        raise ValueError(
            f"query dimension {Xq.shape[1]} does not match training dimension {model.inputs.shape[1]}"
        )
    Kt = kernel_matrix(Xq, model.inputs, model.hp)
    mean = Kt @ model.alpha
    v = linalg.solve_triangular(model.chol, Kt.T, lower=True, check_finite=False)
    var = np.maximum(model.hp.signal_var - np.einsum("ij,ij->j", v, v), 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def log_marginal_likelihood(model: GpModel) -> float:
    n = model.n_samples
    return float(
        -0.5 * model.targets @ model.alpha
        - np.sum(np.log(np.diag(model.chol)))
        - 0.5 * n * _LOG_2PI
    )


def hyperparameter_grid(
    length_scales: Iterable[float] | None = None,
    signal_vars: Iterable[float] | None = None,
    noise_vars: Iterable[float] = (1.0,),
) -> list[Hyperparameters]:
    """Cartesian product grid; defaults are 8 log-spaced points per axis."""
    if length_scales is None:
        length_scales = np.logspace(-1, 2, 8)
    if signal_vars is None:
        signal_vars = np.logspace(-2, 4, 8)
    return [
        Hyperparameters(float(s), float(l), float(n))
        for s, l, n in itertools.product(signal_vars, length_scales, noise_vars)
    ]


def _grid_scores(inputs, target_columns: Sequence[np.ndarray], grid) -> np.ndarray:
    """Summed log marginal likelihood of each target column, per grid element.

    The Gram factorization is shared across columns, which is what makes
    joint selection for several outputs on one input set cheap.
    """
    X = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.column_stack([np.asarray(t, dtype=float).ravel() for t in target_columns])
    sq = cdist(X, X, "sqeuclidean")
    n = X.shape[0]
    scores = np.empty(len(grid))
    for i, hp in enumerate(grid):
        gram = hp.signal_var * np.exp(-0.5 / hp.length_scale**2 * sq)
        gram[np.diag_indices_from(gram)] += hp.noise_var
        try:
            L, _ = _factorize(gram, hp)
        except IllConditionedError:
            scores[i] = -np.inf
            continue
        A = linalg.cho_solve((L, True), Y, check_finite=False)
        logdet = np.sum(np.log(np.diag(L)))
        scores[i] = float(np.sum(-0.5 * np.einsum("ij,ij->j", Y, A) - logdet - 0.5 * n * _LOG_2PI))
    return scores


def select_hyperparameters(inputs, targets, grid: Sequence[Hyperparameters]) -> Hyperparameters:
    """Grid element with the largest log marginal likelihood (first on ties)."""
    if len(grid) == 0:
        raise ValueError("hyperparameter grid is empty")
    cols = targets if isinstance(targets, (list, tuple)) else [targets]
    scores = _grid_scores(inputs, cols, grid)
    if not np.any(np.isfinite(scores)):
        raise IllConditionedError("no grid element produced a usable factorization")
    return grid[int(np.argmax(scores))]


class GaussianProcessSE(RegressorMixin, BaseEstimator):
    """Zero-mean SE-kernel GP regressor with optional grid-search selection.

    Parameters
    ----------
    signal_var, length_scale, noise_var : float
        Kernel hyperparameters used when ``grid`` is None.
    grid : sequence of Hyperparameters, optional
        Candidates scored by log marginal likelihood during ``fit``.

    Attributes
    ----------
    model_ : GpModel
    hyperparameters_ : Hyperparameters
    """

    def __init__(self, signal_var=1.0, length_scale=1.0, noise_var=1e-2, grid=None):
        self.signal_var = signal_var
        self.length_scale = length_scale
        self.noise_var = noise_var
        self.grid = grid

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.grid is not None:
            hp = select_hyperparameters(X, y, list(self.grid))
        else:
            hp = Hyperparameters(self.signal_var, self.length_scale, self.noise_var)
        self.model_ = fit(X, y, hp)
        self.hyperparameters_ = hp
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "model_")
        X = check_array(X)
        mean, var = predict(self.model_, X)
        if return_std:
            return mean, np.sqrt(var)
        return mean

    def log_marginal_likelihood(self):
        check_is_fitted(self, "model_")
        return log_marginal_likelihood(self.model_)
