"""Input validation helpers and the package exception hierarchy."""

from __future__ import annotations

import numpy as np

SUM_TOL = 1e-12


class PFDError(Exception):
    """Base class for every error raised by this package."""


class DomainError(PFDError, ValueError):
    """An argument lies outside the domain of the operation."""


class BoundaryError(DomainError):
    """A log of a zero mass was required (measure on the simplex boundary)."""


class UnsupportedOperation(PFDError, NotImplementedError):
    """The functional does not provide what the operation needs."""


class NumericalError(PFDError, ArithmeticError):
    """Non-finite value or a failed numerical routine.

    ``trace`` carries whatever partial trace the failing run produced.
    """

    def __init__(self, message, trace=None, step=None):
        super().__init__(message)
        self.trace = trace
        self.step = step


class EstimatorDivergence(NumericalError):
    """An inner optimisation kept getting worse."""


class ConfigError(PFDError, ValueError):
    """Invalid configuration (unknown preset, missing key, bad value)."""


def as_float_array(x, name="x", ndim=1):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise DomainError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise DomainError(f"{name} must be non-empty")
    return arr


def check_prob_vector(p, name="mu", tol=SUM_TOL):
    """Validate a probability vector and return it as a float64 array.

    The sum tolerance scales with the length because float64 summation of
    ``n`` terms carries ``O(n * eps)`` rounding even when each mass is exact.
    """
    arr = as_float_array(p, name)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    if np.any(arr < 0):
        raise DomainError(f"{name} has negative entries (min {arr.min():.3g})")
    total = float(np.sum(arr))
    if abs(total - 1.0) > max(tol, arr.size * 1e-15):
        raise DomainError(f"{name} sums to {total!r}, expected 1")
    return arr


def check_interior(p, name="mu"):
    arr = check_prob_vector(p, name)
    if np.any(arr <= 0):
        raise BoundaryError(f"{name} must be strictly positive (index {int(np.argmin(arr))} is 0)")
    return arr


def check_same_shape(a, b, names=("mu", "nu")):
    if a.shape != b.shape:
        raise DomainError(f"{names[0]} and {names[1]} differ in shape: {a.shape} vs {b.shape}")


def check_positive_int(value, name, minimum=1):
    if int(value) != value or value < minimum:
        raise DomainError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
