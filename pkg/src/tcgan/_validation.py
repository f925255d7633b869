"""Input checks shared by the estimators."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.utils import check_array


def check_series(X, n: Optional[int] = None, d: Optional[int] = None) -> np.ndarray:
    """Coerce ``X`` to a finite float array of shape ``[N, n, d]``.

    2-D input is read as univariate ``[N, n]``.
    """
    X = np.asarray(getattr(X, "data", X))
    if X.ndim == 2:
        X = X[:, :, None]
    if X.ndim != 3:
        raise ValueError(f"expected series of shape [N, n] or [N, n, d], got {X.shape}")
    X = check_array(X, allow_nd=True, dtype=[np.float64, np.float32], ensure_min_samples=1)
    if n is not None and X.shape[1] != n:
        raise ValueError(f"expected series of length {n}, got {X.shape[1]}")
    if d is not None and X.shape[2] != d:
        raise ValueError(f"expected {d} variables per step, got {X.shape[2]}")
    return X


def check_features(X) -> np.ndarray:
    return check_array(np.asarray(getattr(X, "data", X)), dtype=np.float64)
