"""Learned shift-invariant motion models for particle-filter target tracking."""

__version__ = "0.1.0"

from gptrack.gpr import GaussianProcessSE, GpModel, Hyperparameters
from gptrack.nsim import NsimModel, NsimMotionModel

__all__ = [
    "GaussianProcessSE",
    "GpModel",
    "Hyperparameters",
    "NsimModel",
    "NsimMotionModel",
    "__version__",
]
