"""Input validation helpers shared by the estimator API and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def as_float_matrix(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if X.shape[0] == 0 or X.shape[1] == 0:
        raise ValidationError(f"{name} must be non-empty, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains non-finite values")
    return X


def check_unit_range(X: np.ndarray, name: str = "X") -> np.ndarray:
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValidationError(f"{name} values must lie in [0, 1]")
    return X


def as_binary_matrix(X, name: str = "X") -> np.ndarray:
    X = as_float_matrix(X, name)
    if not np.all((X == 0.0) | (X == 1.0)):
        raise ValidationError(f"{name} values must be 0 or 1 (binarize first)")
    return X


def as_label_vector(y, n_rows: int | None = None, name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValidationError(f"{name} must be 1-dimensional, got shape {y.shape}")
    if y.shape[0] == 0:
        raise ValidationError(f"{name} must be non-empty")
    if n_rows is not None and y.shape[0] != n_rows:
        raise ValidationError(f"{name} has {y.shape[0]} entries for {n_rows} rows of X")
    return y
