"""Input validation helpers shared by the estimators."""

import numpy as np
from sklearn.utils import check_array


def check_series_array(X, min_length=1, name="X"):
    """Coerce ``X`` to a finite float64 array shaped (n_series, channels, length).

    A 2-D input is read as a univariate batch (n_series, length).
    """
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=True, input_name=name)
    if X.ndim == 2:
        X = X[:, None, :]
    if X.ndim != 3:
        raise ValueError(f"{name} must have shape (n_series, channels, length), got {X.shape}")
    if X.shape[2] < min_length:
        raise ValueError(f"{name} series have length {X.shape[2]}, need at least {min_length}")
    return X


def check_labels(y, n):
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
    return y.astype(np.int64)


def check_random_generator(seed):
    """``None``/int/Generator -> ``np.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
