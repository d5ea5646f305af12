"""Input validation helpers raising the package's own exception types."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DomainError


def as_matrix(X, *, n_features=None, name="X") -> np.ndarray:
    try:
        arr = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    except ValueError as exc:
        raise DomainError(f"{name}: {exc}") from None
    if n_features is not None and arr.shape[1] != n_features:
        raise DomainError(f"{name} has {arr.shape[1]} features, expected {n_features}")
    return arr


def as_vector(v, *, n=None, name="y", allow_nan=False) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise DomainError(f"{name} has length {arr.shape[0]}, expected {n}")
    if not allow_nan and not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def as_binary(v, *, n=None, name="labels") -> np.ndarray:
    arr = as_vector(v, n=n, name=name)
    if not np.all((arr == 0) | (arr == 1)):
        raise DomainError(f"{name} must be 0/1")
    return arr


def as_weights(w, *, n, name="sample_weight") -> np.ndarray:
    if w is None:
        return np.ones(n)
    arr = as_vector(w, n=n, name=name)
    if np.any(arr < 0):
        raise DomainError(f"{name} must be nonnegative")
    return arr
