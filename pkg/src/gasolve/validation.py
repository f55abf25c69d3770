"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np


def check_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a finite 2-D float array (n_samples, n_features)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_paired(X, y):
    """Validate a paired (inputs, targets) design with matching shapes."""
    X = check_matrix(X, "X")
    y = check_matrix(y, "y")
    if X.shape != y.shape:
        raise ValueError(
            f"X and y must have matching shapes, got {X.shape} and {y.shape}"
        )
    return X, y


def check_n_features(X, n_features: int, name: str = "X") -> np.ndarray:
    X = check_matrix(X, name)
    if X.shape[1] != n_features:
        raise ValueError(
            f"{name} has {X.shape[1]} features, expected {n_features}"
        )
    return X
