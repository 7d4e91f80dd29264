"""Exception types raised across the toolkit."""


class GptrackError(Exception):
    """Base class for toolkit errors."""


class InvalidStateError(GptrackError, ValueError):
    """A kinematic state or measurement contains unusable values."""


class IllConditionedError(GptrackError, ValueError):
    """Cholesky factorization failed even after maximal jitter."""


class DegenerateWeightsError(GptrackError, FloatingPointError):
    """Every unnormalized particle weight is zero or non-finite."""


class InstanceTooLargeError(GptrackError, ValueError):
    """An exhaustive enumeration was requested on an oversized instance."""


class ConfigError(GptrackError, ValueError):
    """A configuration document is malformed or inconsistent."""


class DataError(GptrackError, ValueError):
    """Malformed or inconsistent input data."""
