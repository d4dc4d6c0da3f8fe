"""
Exception hierarchy for dpcorder.

Every error raised on purpose by the package derives from DpcError so the
command line front end can map it to an exit code in one place.
"""

import numpy as np


class DpcError(Exception):
    """Base class for all dpcorder errors."""

    exit_code = 1


class ConfigError(DpcError, ValueError):
    """Invalid configuration file or settings."""

    exit_code = 2


class InstanceValidationError(DpcError, ValueError):
    """A problem instance violates its invariants."""

    exit_code = 2


class InstanceFileError(DpcError, ValueError):
    """Malformed instance file (schema, field or JSON syntax error)."""

    exit_code = 2


class SizeLimitError(DpcError, ValueError):
    """The requested operation is refused for this many users."""

    exit_code = 2


class NotPositiveDefiniteError(DpcError, np.linalg.LinAlgError):
    """A Hermitian factorization lost positive definiteness."""

    exit_code = 3


class SolverError(DpcError, RuntimeError):
    """Numerical fault inside one of the solvers."""

    exit_code = 3


class ConvergenceError(SolverError):
    """An iterative solver stopped without reaching its tolerance."""


class DualityError(SolverError):
    """The uplink-downlink power system could not be solved."""


class TimeSharingError(SolverError):
    """No convex combination of rate vertices meets the targets."""
