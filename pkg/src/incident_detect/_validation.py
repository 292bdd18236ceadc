"""Input validation helpers shared by the estimators."""

import numpy as np

from .exceptions import DimensionError, InputError


def check_features(X, n_features=None, allow_empty=False):
    """Return ``X`` as a finite float64 matrix, optionally with a fixed width."""
    try:
        X = np.asarray(X, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InputError(f"features are not numeric: {exc}") from exc
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if not allow_empty and X.shape[0] == 0:
        raise InputError("feature matrix has no rows")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError(f"expected {n_features} features, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise InputError("feature matrix contains NaN or Inf")
    return X


def check_binary_labels(y, n_rows=None):
    y = np.asarray(y)
    if y.ndim != 1:
        y = y.reshape(-1)
    if n_rows is not None and len(y) != n_rows:
        raise DimensionError(f"{len(y)} labels for {n_rows} rows")
    bad = ~np.isin(y, (0, 1))
    if bad.any():
        raise InputError(f"labels must be 0 or 1; row {int(np.argmax(bad))} holds {y[bad][0]!r}")
    return y.astype(np.int64)
