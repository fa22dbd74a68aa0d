"""Input validation helpers shared by the estimators and the functional API."""
import numpy as np
from sklearn.utils import check_array, check_consistent_length

from .exceptions import DimensionMismatch, ZeroPropensity

_ATOL = 1e-12


def check_distribution(p, name="rho", size=None):
    """Return ``p`` as a float vector after checking it is a probability vector."""
    p = check_array(p, ensure_2d=False, dtype=np.float64, input_name=name)
    if p.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {p.shape}")
    if size is not None and p.shape[0] != size:
        raise DimensionMismatch(f"{name} has {p.shape[0]} entries, expected {size}")
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > _ATOL * max(1, p.size):
        raise ValueError(f"{name} sums to {p.sum():.17g}, not 1")
    return p


def check_policy(pi, shape=None, name="policy"):
    """Return a row-stochastic policy matrix ``pi[i, j] = pi(j | i)``."""
    pi = check_array(pi, dtype=np.float64, input_name=name)
    if shape is not None and pi.shape != tuple(shape):
        raise DimensionMismatch(f"{name} has shape {pi.shape}, expected {tuple(shape)}")
    if np.any(pi < 0):
        raise ValueError(f"{name} has negative entries")
    rows = pi.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > _ATOL * max(1, pi.shape[1])):
        raise ValueError(f"rows of {name} must sum to 1")
    return pi


def check_omega(omega, shape=None, require_positive=True):
    """Validate a joint (context, arm) distribution."""
    omega = check_array(omega, dtype=np.float64, input_name="omega")
    if shape is not None and omega.shape != tuple(shape):
        raise DimensionMismatch(f"omega has shape {omega.shape}, expected {tuple(shape)}")
    if np.any(omega < 0):
        raise ValueError("omega has negative entries")
    if abs(omega.sum() - 1.0) > _ATOL * max(1, omega.size):
        raise ValueError(f"omega sums to {omega.sum():.17g}, not 1")
    if require_positive and omega.min() <= 0:
        raise ZeroPropensity("every (context, arm) pair needs positive probability")
    return omega


def check_pairs(X, y=None, shape=None):
    """Validate an array of 0-based ``(context, arm)`` index pairs.

    Returns integer arrays ``(i, j)`` and, when given, the float rewards.
    """
    X = check_array(X, dtype=None, input_name="X")
    if X.shape[1] != 2:
        raise ValueError(f"X must have two columns (context, arm), got {X.shape[1]}")
    if not np.all(np.equal(np.mod(X, 1), 0)):
        raise ValueError("X must contain integer indices")
    X = X.astype(np.int64)
    if np.any(X < 0):
        raise ValueError("indices in X must be nonnegative")
    if shape is not None:
        m, n = shape
        if X[:, 0].max() >= m or X[:, 1].max() >= n:
            raise DimensionMismatch(f"indices in X exceed matrix shape {shape}")
    if y is None:
        return X[:, 0], X[:, 1]
    y = check_array(y, ensure_2d=False, dtype=np.float64, input_name="y")
    check_consistent_length(X, y)
    return X[:, 0], X[:, 1], y.ravel()


def check_orthonormal(A, name="A", atol=1e-8):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    gram = A.T @ A
    if not np.allclose(gram, np.eye(A.shape[1]), atol=atol):
        raise ValueError(f"{name} does not have orthonormal columns")
    return A
