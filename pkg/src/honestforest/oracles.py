"""Independent reference implementations used to check the estimators.

Nothing here calls into the tree, forest or Lasso code; only plain numpy
and the data model are used.
"""

import numpy as np

from .exceptions import ParameterError, SingularSystemError

ZERO_REL = 1e-20
TIE_REL = 1e-12


def population_mse_gain(p_left, tau_left, tau_right):
    """MSE reduction of a split: ``P(left) P(right) (tau_left - tau_right)^2``."""
    if not (0.0 <= p_left <= 1.0):
        raise ParameterError("p_left must lie in [0, 1]")
    return p_left * (1.0 - p_left) * (tau_left - tau_right) ** 2


def population_mse_gain_stylized(theta, split_feature):
    """Population gain of splitting the stylized model on ``split_feature`` (0-based).

    Feature 0 separates CATEs ``+theta`` and ``-theta`` with equal mass, so
    the gain is ``theta**2``; any other feature leaves both halves with SPATE 0.
    """
    if theta < 0:
        raise ParameterError("theta must be >= 0")
    return population_mse_gain(0.5, theta, -theta) if int(split_feature) == 0 else 0.0


def expected_balance_binomial(n):
    """``E[n1 n2 / n^2]`` when ``n1 ~ Binomial(n, 1/2)``."""
    return 0.25 * (1.0 - 1.0 / n)


# ------------------------------------------------------------------ tree oracle


def _arm_means(t, y, rows):
    tr = [r for r in rows if t[r] == 1]
    co = [r for r in rows if t[r] == 0]
    return len(tr), len(co), (sum(y[r] for r in tr) / len(tr) if tr else None), (
        sum(y[r] for r in co) / len(co) if co else None
    )


def _node_split(X, t, y, rows, min_leaf, min_arm):
    best = None
    n = len(rows)
    for f in range(X.shape[1]):
        values = sorted(set(float(X[r, f]) for r in rows))
        for lo, hi in zip(values[:-1], values[1:]):
            thr = 0.5 * (lo + hi)
            if thr >= hi:
                thr = lo
            left = [r for r in rows if X[r, f] <= thr]
            right = [r for r in rows if X[r, f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            lt, lc, lmt, lmc = _arm_means(t, y, left)
            rt, rc, rmt, rmc = _arm_means(t, y, right)
            if min(lt, lc, rt, rc) < min_arm:
                continue
            crit = len(left) * len(right) / (n * n) * ((lmt - lmc) - (rmt - rmc)) ** 2
            if best is None or crit > best[2] * (1.0 + TIE_REL):
                best = (f, thr, crit, left, right)
    return best


def exhaustive_tree_oracle(X, t, y, min_leaf=5, min_arm=2, max_depth=None, rows=None, depth=0):
    """Brute-force causal tree as nested tuples ``(feature, threshold, left, right)`` / ``("leaf",)``.

    Every candidate threshold of every feature is evaluated from scratch at
    every node. Tie-breaks and the no-gain rule match the production tree.
    """
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(t).astype(int)
    y = np.asarray(y, dtype=np.float64)
    if rows is None:
        rows = list(range(X.shape[0]))
    if max_depth is not None and depth >= max_depth:
        return ("leaf",)
    best = _node_split(X, t, y, rows, min_leaf, min_arm)
    if best is None:
        return ("leaf",)
    f, thr, crit, left, right = best
    if crit <= ZERO_REL * max(y[r] ** 2 for r in rows):
        return ("leaf",)
    return (
        f,
        thr,
        exhaustive_tree_oracle(X, t, y, min_leaf, min_arm, max_depth, left, depth + 1),
        exhaustive_tree_oracle(X, t, y, min_leaf, min_arm, max_depth, right, depth + 1),
    )


# ---------------------------------------------------------- least squares oracle


def least_squares_oracle(Z, y, rank_tol=1e-10):
    """Solve the normal equations by Gaussian elimination with complete pivoting.

    Raises :class:`SingularSystemError` when a pivot falls below ``rank_tol``
    times the largest diagonal entry of ``Z'Z``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if Z.ndim != 2 or y.shape != (Z.shape[0],):
        raise ParameterError("design and response have incompatible shapes")
    A = Z.T @ Z
    b = Z.T @ y
    p = A.shape[0]
    scale = float(np.max(np.abs(np.diag(A)))) if p else 0.0
    if scale <= 0:
        raise SingularSystemError("design has no non-zero column")
    A = A.copy()
    b = b.copy()
    perm = list(range(p))
    for k in range(p):
        sub = np.abs(A[k:, k:])
        i, j = np.unravel_index(int(np.argmax(sub)), sub.shape)
        i += k
        j += k
        if sub[i - k, j - k] <= rank_tol * scale:
            raise SingularSystemError(f"normal equations are rank deficient (rank {k} < {p})")
        A[[k, i]] = A[[i, k]]
        b[[k, i]] = b[[i, k]]
        A[:, [k, j]] = A[:, [j, k]]
        perm[k], perm[j] = perm[j], perm[k]
        for r in range(k + 1, p):
            m = A[r, k] / A[k, k]
            A[r, k:] -= m * A[k, k:]
            b[r] -= m * b[k]
    x = np.zeros(p)
    for k in range(p - 1, -1, -1):
        x[k] = (b[k] - A[k, k + 1:] @ x[k + 1:]) / A[k, k]
    out = np.zeros(p)
    out[perm] = x
    return out
