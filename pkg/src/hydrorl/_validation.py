"""Input checks shared across the package."""

import numpy as np

DIST_ATOL = 1e-12


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class FailStateAssumptionError(ValueError):
    """Raised when a fail-state specialised formula receives a value vector
    whose minimum is not zero."""


class NonConvergenceWarning(UserWarning):
    pass


def check_distribution(p, name="p", atol=DIST_ATOL):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-d array")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise InvalidInputError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > atol:
        raise InvalidInputError(f"{name} sums to {p.sum()!r}, expected 1")
    return p


def check_sigma(sigma):
    sigma = float(sigma)
    if not 0.0 <= sigma <= 1.0:
        raise InvalidInputError(f"sigma must lie in [0, 1], got {sigma}")
    return sigma


def check_gamma(gamma):
    gamma = float(gamma)
    if not 0.0 < gamma < 1.0:
        raise InvalidInputError(f"gamma must lie in (0, 1), got {gamma}")
    return gamma


def check_finite(x, name="v"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return x
