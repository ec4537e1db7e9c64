"""Input checks shared by the public operations."""

import numpy as np

from .exceptions import InvalidInputError

# Lower bound applied to every factor entry after initialization and after
# each multiplicative update.
EPS = 1e-12


def check_matrix(X, name="X", *, nonnegative=True, ndim=2):
    """Return ``X`` as a finite float64 array, raising InvalidInputError otherwise."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional, got shape {X.shape}")
    if X.size == 0:
        raise InvalidInputError(f"{name} is empty")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    if nonnegative and np.any(X < 0):
        raise InvalidInputError(f"{name} must be non-negative")
    return X


def check_vector(b, name="b", *, nonnegative=True):
    return check_matrix(b, name, nonnegative=nonnegative, ndim=1)


def check_same_shape(A, B, names=("A", "B")):
    if A.shape != B.shape:
        raise InvalidInputError(
            f"shape mismatch: {names[0]} {A.shape} vs {names[1]} {B.shape}"
        )


def check_positive_int(value, name, *, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise InvalidInputError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
