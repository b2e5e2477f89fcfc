"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .exceptions import DegenerateDataError, ParameterError


def check_features(X, n_features=None):
    try:
        X = check_array(X, dtype=np.float64, ensure_all_finite=True, order="C")
    except ValueError as exc:
        raise ParameterError(str(exc)) from exc
    if n_features is not None and X.shape[1] != n_features:
        raise ParameterError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_treatment_data(X, t, y):
    X = check_features(X)
    t = np.asarray(t)
    y = np.asarray(y, dtype=np.float64)
    check_consistent_length(X, t, y)
    if t.ndim != 1 or y.ndim != 1:
        raise ParameterError("t and y must be 1-d")
    if not np.all((t == 0) | (t == 1)):
        raise ParameterError("treatment values must be exactly 0 or 1")
    if not np.all(np.isfinite(y)):
        raise ParameterError("y contains non-finite values")
    t = t.astype(np.int8)
    n1 = int(t.sum())
    if n1 == 0 or n1 == t.size:
        raise DegenerateDataError("both treatment arms must be present")
    return X, t, np.ascontiguousarray(y)
