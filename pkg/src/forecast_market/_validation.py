"""Input validation helpers shared across estimators and market operations."""

import numpy as np


def check_array_2d(X, name="X"):
    """Coerce to a 2-D float array, rejecting non-finite entries."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={X.ndim}")
    if X.size and not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


def check_vector(y, name="y", n=None):
    """Coerce to a 1-D float array, optionally checking its length."""
    y = np.asarray(y, dtype=float).ravel()
    if n is not None and y.shape[0] != n:
        raise ValueError(f"{name} has length {y.shape[0]}, expected {n}")
    if y.size and not np.all(np.isfinite(y)):
        raise ValueError(f"{name} contains non-finite entries")
    return y


def check_same_rows(X, y, xname="X", yname="y"):
    if X.shape[0] != y.shape[0]:
        raise ValueError(
            f"{xname} and {yname} disagree on rows: {X.shape[0]} vs {y.shape[0]}"
        )


def check_positive(value, name, strict=True):
    if strict and not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and not value >= 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value


def check_in_range(value, lo, hi, name, include_lo=True, include_hi=True):
    ok_lo = value >= lo if include_lo else value > lo
    ok_hi = value <= hi if include_hi else value < hi
    if not (ok_lo and ok_hi):
        lo_b = "[" if include_lo else "("
        hi_b = "]" if include_hi else ")"
        raise ValueError(f"{name} must lie in {lo_b}{lo}, {hi}{hi_b}, got {value}")
    return value


def standardize_columns(X):
    """Column-wise z-scoring; constant columns get scale 1 so they map to zero.

    Returns (Z, mean, scale).
    """
    mean = X.mean(axis=0) if X.shape[0] else np.zeros(X.shape[1])
    scale = X.std(axis=0) if X.shape[0] else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    return (X - mean) / scale, mean, scale
