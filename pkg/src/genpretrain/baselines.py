"""1-nearest-neighbour baselines under Euclidean and DTW distances."""

from enum import Enum

import numba
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .validation import check_labels, check_series_array


class DistanceKind(str, Enum):
    EUCLIDEAN = "euclidean"
    DTW = "dtw"


def _as_2d(a):
    a = np.asarray(a, dtype=np.float64)
    return a[None, :] if a.ndim == 1 else a


def euclidean_distance(a, b):
    """Square root of the summed squared differences over channels and time."""
    a, b = _as_2d(a), _as_2d(b)
    if a.shape != b.shape:
        raise ValueError(f"euclidean distance needs equal shapes, got {a.shape} and {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


@numba.njit(cache=True)
def _dtw_dp(cost, window):
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        lo = max(1, i - window)
        hi = min(m, i + window)
        for j in range(lo, hi + 1):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = cost[i - 1, j - 1] + best
    return acc[n, m]


def dtw_distance(a, b, window=None):
    """Dependent DTW with steps (1,0), (0,1), (1,1).

    Cell cost is the squared difference summed over channels; the result is
    the square root of the optimal accumulated cost. ``window`` is a
    Sakoe-Chiba band half-width (``None`` = unconstrained); an infeasible band
    gives ``inf``.
    """
    a, b = _as_2d(a), _as_2d(b)
    if a.shape[1] == 0 or b.shape[1] == 0:
        raise ValueError("DTW needs non-empty series")
    if a.shape[0] != b.shape[0]:
        raise ValueError("series must have the same number of channels")
    n, m = a.shape[1], b.shape[1]
    if window is None:
        window = max(n, m)
    if window < 0:
        raise ValueError("window must be >= 0")
    cost = ((a.T[:, None, :] - b.T[None, :, :]) ** 2).sum(axis=-1)
    return float(np.sqrt(_dtw_dp(cost, int(window))))


def pairwise_distances(queries, references, kind="euclidean", window=None):
    kind = DistanceKind(kind)
    out = np.empty((len(queries), len(references)))
    for i, q in enumerate(queries):
        for j, r in enumerate(references):
            out[i, j] = euclidean_distance(q, r) if kind is DistanceKind.EUCLIDEAN else dtw_distance(q, r, window)
    return out


def one_nn_classify(train_X, train_y, query, kind="euclidean", window=None):
    """Label of the nearest training series; ties go to the lowest index."""
    if len(train_X) == 0:
        raise ValueError("the training set is empty")
    d = pairwise_distances([query], train_X, kind, window)[0]
    return int(np.asarray(train_y)[int(np.argmin(d))])


class OneNearestNeighborClassifier(ClassifierMixin, BaseEstimator):
    """1NN time-series classifier.

    Parameters
    ----------
    metric : {"euclidean", "dtw"}
    window : int or None
        Sakoe-Chiba half-width for DTW; ``None`` means unconstrained.
    """

    def __init__(self, metric="euclidean", window=None):
        self.metric = metric
        self.window = window

    def fit(self, X, y):
        X = check_series_array(X)
        y = check_labels(y, len(X))
        if len(X) == 0:
            raise ValueError("the training set is empty")
        DistanceKind(self.metric)
        self.X_ = X
        self.y_ = y
        self.classes_ = np.unique(y)
        return self

    def predict(self, X):
        check_is_fitted(self, "X_")
        X = check_series_array(X)
        d = pairwise_distances(X, self.X_, self.metric, self.window)
        return self.y_[np.argmin(d, axis=1)]
