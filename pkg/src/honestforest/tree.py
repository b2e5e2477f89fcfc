"""Single causal tree: treatment-effect splitting and leaf SPATE estimates."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from ._random import as_seed, child_rng, child_seed
from ._validation import check_features, check_treatment_data
from .exceptions import DegenerateDataError, EmptyArmError, ParameterError


@dataclass(frozen=True)
class SplitRule:
    """Route left iff ``x[feature_index] <= threshold``."""

    feature_index: int
    threshold: float


@dataclass(frozen=True)
class TreeGrowConfig:
    min_samples_leaf: int = 5
    min_arm_count: int = 2
    max_depth: Optional[int] = None
    feature_subsample: Optional[int] = None

    def __post_init__(self):
        if int(self.min_samples_leaf) < 1:
            raise ParameterError("min_samples_leaf must be >= 1")
        if int(self.min_arm_count) < 1:
            raise ParameterError("min_arm_count must be >= 1")
        if self.max_depth is not None and int(self.max_depth) < 0:
            raise ParameterError("max_depth must be >= 0")
        if self.feature_subsample is not None and int(self.feature_subsample) < 1:
            raise ParameterError("feature_subsample must be >= 1")


def spate_estimate(rows, ds):
    """Difference in mean outcomes between treated and control rows.

    Returns ``(tau_hat, n_treated, n_control)``; raises :class:`EmptyArmError`
    when either arm is absent.
    """
    rows = np.asarray(rows)
    if rows.size == 0:
        raise ParameterError("leaf_rows must be non-empty")
    t = ds.t[rows]
    y = ds.y[rows]
    treated = t == 1
    n1 = int(treated.sum())
    n0 = int(rows.size - n1)
    if n1 == 0 or n0 == 0:
        raise EmptyArmError(f"leaf has {n1} treated and {n0} control units")
    return float(y[treated].mean() - y[~treated].mean()), n1, n0


def split_criterion(n1, n2, tau1, tau2):
    """Balance-weighted squared SPATE difference between two children."""
    if n1 < 1 or n2 < 1:
        raise ParameterError("child sizes must be >= 1")
    n = n1 + n2
    return (n1 * n2) / (n * n) * (tau1 - tau2) ** 2


class Tree:
    """Fitted partition stored as flat node arrays.

    ``value[node]`` is the node's SPATE estimate from the estimation sample;
    ``inherited[node]`` flags nodes whose estimation rows lacked an arm and
    which therefore carry their nearest valid ancestor's estimate.
    """

    def __init__(self, feature, threshold, left, right, parent, depth, value, inherited, n_treated, n_control):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.parent = parent
        self.depth = depth
        self.value = value
        self.inherited = inherited
        self.n_treated = n_treated
        self.n_control = n_control
        for a in (feature, threshold, left, right, parent, depth, value, inherited, n_treated, n_control):
            a.setflags(write=False)

    @property
    def node_count(self):
        return self.feature.size

    @property
    def is_leaf(self):
        return self.feature < 0

    @property
    def leaf_ids(self):
        return np.flatnonzero(self.feature < 0)

    @property
    def n_leaves(self):
        return int(np.count_nonzero(self.feature < 0))

    @property
    def max_depth(self):
        return int(self.depth.max())

    def apply(self, X):
        """Leaf id reached by each row of ``X``."""
        return _kernels.apply_all(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X):
        return self.value[self.apply(X)]

    def with_estimates(self, X, t, y, estimation_rows):
        """Same partition, SPATEs recomputed from ``estimation_rows``."""
        value, inherited, nT, nC = _estimate(self, X, t, y, estimation_rows)
        return Tree(
            self.feature, self.threshold, self.left, self.right, self.parent, self.depth,
            value, inherited, nT, nC,
        )

    def rule(self, node):
        if self.feature[node] < 0:
            return None
        return SplitRule(int(self.feature[node]), float(self.threshold[node]))

    def to_nested(self, node=0, with_values=False):
        """Recursive tuple form; handy for structural comparison."""
        if self.feature[node] < 0:
            return ("leaf", float(self.value[node])) if with_values else ("leaf",)
        return (
            int(self.feature[node]),
            float(self.threshold[node]),
            self.to_nested(int(self.left[node]), with_values),
            self.to_nested(int(self.right[node]), with_values),
        )

    def dump(self):
        """Plain-text node list, one line per node in id order."""
        lines = []
        for node in range(self.node_count):
            pad = "  " * int(self.depth[node])
            if self.feature[node] >= 0:
                lines.append(
                    f"{pad}node {node}: x{self.feature[node]} <= {self.threshold[node]!r}"
                    f" -> [{self.left[node]}, {self.right[node]}]"
                )
            else:
                flag = " inherited" if self.inherited[node] else ""
                lines.append(
                    f"{pad}leaf {node}: tau={self.value[node]!r} n1={self.n_treated[node]}"
                    f" n0={self.n_control[node]}{flag}"
                )
        return "\n".join(lines)


def _estimate(tree, X, t, y, rows):
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    nT, nC, sT, sC = _kernels.node_arm_stats(X, t, y, rows, tree.feature, tree.threshold, tree.left, tree.right)
    if nT[0] == 0 or nC[0] == 0:
        raise DegenerateDataError(
            f"estimation sample has {nT[0]} treated and {nC[0]} control units; both arms are required"
        )
    value, inherited = _kernels.node_values(tree.parent, nT, nC, sT, sC)
    return value, inherited, nT, nC


def _rng_state(rng):
    if rng is None:
        return 0
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63 - 1))
    return int(rng)


def best_split(node_rows, ds, cfg, rng=None):
    """Best valid split of ``node_rows`` or ``None``.

    Returns ``(SplitRule, criterion)``. ``rng`` is only consulted when
    ``cfg.feature_subsample`` restricts the candidate features.
    """
    rows = np.ascontiguousarray(node_rows, dtype=np.int64)
    d = ds.d
    k = cfg.feature_subsample
    if k is None or k >= d:
        feats = np.arange(d, dtype=np.int64)
    else:
        feats = np.ascontiguousarray(np.sort(child_rng(_rng_state(rng), "features").choice(d, k, replace=False)))
    f, thr, crit = _kernels.best_split_segment(
        ds.X, ds.t, ds.y, rows, feats, int(cfg.min_samples_leaf), int(cfg.min_arm_count)
    )
    if f < 0:
        return None
    ymax2 = float(np.max(ds.y[rows] ** 2))
    if crit <= _kernels.ZERO_REL * ymax2:
        return None
    return SplitRule(int(f), float(thr)), float(crit)


def _grow_arrays(X, t, y, rows, cfg, seed, order=None):
    if order is None:
        order = _kernels.feature_order(X)
    max_depth = -1 if cfg.max_depth is None else int(cfg.max_depth)
    k = 0 if cfg.feature_subsample is None else int(cfg.feature_subsample)
    return _kernels.grow(
        X, t, y, rows, order, int(cfg.min_samples_leaf), int(cfg.min_arm_count), max_depth, k, np.uint64(seed)
    )


def grow_tree(splitting_rows, estimation_rows, ds, cfg, rng=None):
    """Learn a partition on ``splitting_rows``; estimate leaf SPATEs on ``estimation_rows``.

    Pass the same rows twice for adaptive estimation, disjoint rows for
    honest estimation.
    """
    sp = np.ascontiguousarray(splitting_rows, dtype=np.int64)
    es = np.ascontiguousarray(estimation_rows, dtype=np.int64)
    if sp.size == 0 or es.size == 0:
        raise ParameterError("splitting and estimation rows must be non-empty")
    return _grow_tree_arrays(ds.X, ds.t, ds.y, sp, es, cfg, _rng_state(rng))


def _grow_tree_arrays(X, t, y, sp, es, cfg, seed, order=None):
    feature, threshold, left, right, parent, depth = _grow_arrays(X, t, y, sp, cfg, seed, order)
    skeleton = Tree(
        feature, threshold, left, right, parent, depth,
        np.zeros(feature.size), np.zeros(feature.size, bool),
        np.zeros(feature.size, np.int64), np.zeros(feature.size, np.int64),
    )
    value, inherited, nT, nC = _estimate(skeleton, X, t, y, es)
    return Tree(feature, threshold, left, right, parent, depth, value, inherited, nT, nC)


def predict_tree(tree, x):
    """``(leaf_id, tau_hat)`` for a single feature row."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if not np.all(np.isfinite(x)):
        raise ParameterError("feature row contains non-finite values")
    leaf = int(tree.apply(x)[0])
    return leaf, float(tree.value[leaf])


class CausalTree(BaseEstimator):
    """Causal tree estimator.

    Parameters
    ----------
    min_samples_leaf : int, default=5
        Minimum splitting-sample rows per child.
    min_arm_count : int, default=2
        Minimum treated and control rows per child in the splitting sample.
    max_depth : int or None, default=None
    max_features : int or None, default=None
        Features considered per node; ``None`` uses all of them.
    honest : bool, default=False
        Estimate leaves on a disjoint part of the data.
    split_fraction : float, default=0.5
        Share of rows used for splitting when ``honest`` is set.
    random_state : int or None
    """

    def __init__(self, min_samples_leaf=5, min_arm_count=2, max_depth=None, max_features=None,
                 honest=False, split_fraction=0.5, random_state=None):
        self.min_samples_leaf = min_samples_leaf
        self.min_arm_count = min_arm_count
        self.max_depth = max_depth
        self.max_features = max_features
        self.honest = honest
        self.split_fraction = split_fraction
        self.random_state = random_state

    def _grow_config(self):
        return TreeGrowConfig(self.min_samples_leaf, self.min_arm_count, self.max_depth, self.max_features)

    def fit(self, X, t, y):
        X, t, y = check_treatment_data(X, t, y)
        cfg = self._grow_config()
        seed = as_seed(self.random_state)
        rows = np.arange(X.shape[0], dtype=np.int64)
        if self.honest:
            if not (0.0 < self.split_fraction < 1.0):
                raise ParameterError("split_fraction must lie strictly inside (0, 1)")
            perm = child_rng(seed, "honest-split").permutation(rows.size)
            k = int(np.floor(self.split_fraction * rows.size))
            sp, es = np.sort(perm[:k]), np.sort(perm[k:])
        else:
            sp = es = rows
        self.tree_ = _grow_tree_arrays(X, t, y, sp, es, cfg, child_seed(seed, "tree", 0))
        self.n_features_in_ = X.shape[1]
        return self

    def apply(self, X):
        check_is_fitted(self, "tree_")
        return self.tree_.apply(check_features(X, self.n_features_in_))

    def predict(self, X):
        check_is_fitted(self, "tree_")
        return self.tree_.predict(check_features(X, self.n_features_in_))
