"""Input checks for the array-level estimator interfaces."""

import numpy as np

from .exceptions import DataValidationError, NonMonotoneError
from .data import validate_monotone


def check_panel(X, y, sample_weight=None):
    """Validate ``(n, T, p)`` designs, ``(n, T)`` outcomes and weights.

    Returns float copies of ``X`` and ``y``, the observation indicator
    ``r`` derived from ``NaN`` outcomes, and the weight matrix (``r`` when
    no weights are given).  Weights at unobserved cells are forced to 0.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise DataValidationError(f"X must be (n, T, p), got shape {X.shape}")
    if y.shape != X.shape[:2]:
        raise DataValidationError(f"y has shape {y.shape}, expected {X.shape[:2]}")
    if not np.isfinite(X).all():
        raise DataValidationError("X contains non-finite values")
    r = (~np.isnan(y)).astype(np.int8)
    bad = validate_monotone(r)
    if bad:
        raise NonMonotoneError(bad)
    if sample_weight is None:
        w = r.astype(float)
    else:
        w = np.asarray(sample_weight, dtype=float)
        if w.shape != y.shape:
            raise DataValidationError(f"sample_weight has shape {w.shape}, expected {y.shape}")
        if np.any(w[r == 1] < 0) or not np.isfinite(w[r == 1]).all():
            raise DataValidationError("sample_weight must be finite and non-negative")
        w = np.where(r == 1, w, 0.0)
    return X, y, r, w
