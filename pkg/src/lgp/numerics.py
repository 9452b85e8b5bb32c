"""Numerically stable dense kernels used by every stage of the scoring pipeline.

All functions take array-likes, compute in float64, and return numpy arrays
or Python floats.  They are pure and safe to call concurrently.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError, ShapeError

# Guard for the standard-deviation denominator of standardize().
DEFAULT_EPS = 1e-8


def as_vector(x, name: str = "x") -> np.ndarray:
    """Validate and convert to a finite, nonempty 1-D float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-dimensional, got shape {a.shape}")
    if a.size == 0:
        raise InvalidArgumentError(f"{name} must be nonempty")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} must contain only finite values")
    return a


def as_matrix(x, name: str = "M") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} must contain only finite values")
    return a


def softmax(x) -> np.ndarray:
    """Max-shifted softmax of a vector; output sums to 1."""
    a = as_vector(x)
    e = np.exp(a - a.max())
    return e / e.sum()


def logsumexp(x) -> float:
    """log(sum(exp(x))), max-shifted so large inputs do not overflow."""
    a = as_vector(x)
    m = float(a.max())
    return m + float(np.log(np.exp(a - m).sum()))


def mean_over_rows(mat) -> np.ndarray:
    """Column means: maps an m x d matrix to a length-d vector."""
    a = as_matrix(mat)
    if a.shape[0] == 0:
        raise InvalidArgumentError("mean_over_rows needs at least one row")
    return a.mean(axis=0)


def mean_over_features(mat) -> np.ndarray:
    """Row means: maps a K x d matrix to a length-K vector."""
    a = as_matrix(mat)
    if a.shape[1] == 0:
        raise InvalidArgumentError("mean_over_features needs at least one column")
    return a.mean(axis=1)


def cosine(u, v) -> float:
    """Cosine similarity; rejects zero-norm operands so callers decide the fallback."""
    a = as_vector(u, "u")
    b = as_vector(v, "v")
    if a.shape != b.shape:
        raise ShapeError(f"cosine operands disagree: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine of a zero-norm vector is undefined")
    return float(np.dot(a, b) / (na * nb))


def standardize(x, eps: float = DEFAULT_EPS) -> tuple[np.ndarray, float, float]:
    """Population z-score of a vector.

    Returns (z, mu, sigma) with z = (x - mu) / max(sigma, eps).  sigma is the
    population standard deviation, so a singleton or constant vector maps to
    zeros instead of dividing by zero.
    """
    a = as_vector(x)
    if eps <= 0:
        raise InvalidArgumentError("eps must be positive")
    mu = float(a.mean())
    sigma = float(np.sqrt(np.mean((a - mu) ** 2)))
    z = (a - mu) / max(sigma, eps)
    return z, mu, sigma
