"""Causal forests built from subsampled honest or adaptive trees."""

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import List

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from ._random import as_seed, child_rng, child_seed
from ._validation import check_features, check_treatment_data
from .data import Dataset
from .exceptions import DegenerateDataError, ParameterError
from .tree import Tree, TreeGrowConfig, _grow_tree_arrays


@dataclass(frozen=True)
class HonestyMode:
    """Adaptive (``honest=False``) or honest with a splitting share of each subsample."""

    honest: bool = False
    split_fraction: float = 0.5

    def __post_init__(self):
        if self.honest and not (0.0 < self.split_fraction < 1.0):
            raise ParameterError("split_fraction must lie strictly inside (0, 1)")

    @property
    def label(self):
        return "HE" if self.honest else "AE"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        if v in ("ae", "adaptive"):
            return ADAPTIVE
        if v in ("he", "honest"):
            return HONEST
        raise ParameterError(f"unknown honesty mode {value!r}")


ADAPTIVE = HonestyMode(False)
HONEST = HonestyMode(True, 0.5)


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = 100
    subsample_rate: float = 0.5
    honesty: HonestyMode = ADAPTIVE
    grow: TreeGrowConfig = field(default_factory=TreeGrowConfig)
    seed: int = 0

    def __post_init__(self):
        if int(self.num_trees) < 1:
            raise ParameterError("num_trees must be >= 1")
        if not (0.0 < self.subsample_rate <= 1.0):
            raise ParameterError("subsample_rate must lie in (0, 1]")

    def with_leaf_size(self, min_samples_leaf):
        g = self.grow
        grow = TreeGrowConfig(int(min_samples_leaf), g.min_arm_count, g.max_depth, g.feature_subsample)
        return ForestConfig(self.num_trees, self.subsample_rate, self.honesty, grow, self.seed)

    def with_seed(self, seed):
        return ForestConfig(self.num_trees, self.subsample_rate, self.honesty, self.grow, int(seed))

    def to_dict(self):
        g = self.grow
        return {
            "num_trees": self.num_trees,
            "subsample_rate": self.subsample_rate,
            "honest": self.honesty.honest,
            "split_fraction": self.honesty.split_fraction,
            "min_samples_leaf": g.min_samples_leaf,
            "min_arm_count": g.min_arm_count,
            "max_depth": g.max_depth,
            "feature_subsample": g.feature_subsample,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class Forest:
    """Fitted ensemble; keeps each tree's splitting and estimation rows."""

    trees: List[Tree]
    splitting_rows: List[np.ndarray]
    estimation_rows: List[np.ndarray]
    config: ForestConfig
    n_features: int
    n_train: int

    def predict_trees(self, X):
        """Per-tree predictions, shape ``(B, n)``."""
        X = _check_rows(X, self.n_features)
        return np.stack([tr.predict(X) for tr in self.trees])

    def predict(self, X):
        return self.predict_trees(X).mean(axis=0)

    def apply(self, X):
        """Leaf id of each row in each tree, shape ``(n, B)``."""
        X = _check_rows(X, self.n_features)
        return np.stack([tr.apply(X) for tr in self.trees], axis=1)

    def summary(self):
        leaves = [tr.n_leaves for tr in self.trees]
        depths = Counter(tr.max_depth for tr in self.trees)
        return {
            "num_trees": len(self.trees),
            "leaf_counts": leaves,
            "mean_leaves": float(np.mean(leaves)),
            "depth_histogram": {str(k): v for k, v in sorted(depths.items())},
            "config": self.config.to_dict(),
        }

    def summary_text(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _check_rows(X, d):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != d:
        raise ParameterError(f"X has {X.shape[1]} features, expected {d}")
    if not np.all(np.isfinite(X)):
        raise ParameterError("X contains non-finite values")
    return X


def tree_samples(n, cfg, b):
    """Splitting and estimation row sets of tree ``b`` (sorted, int64)."""
    rng = child_rng(cfg.seed, "tree", b)
    size = int(np.floor(cfg.subsample_rate * n))
    size = max(size, 1)
    sub = rng.choice(n, size=size, replace=False) if size < n else np.arange(n)
    if not cfg.honesty.honest:
        sub = np.sort(sub).astype(np.int64)
        return sub, sub
    perm = rng.permutation(sub)
    k = int(np.floor(cfg.honesty.split_fraction * size))
    return np.sort(perm[:k]).astype(np.int64), np.sort(perm[k:]).astype(np.int64)


def _fit_one(X, t, y, order, cfg, b):
    sp, es = tree_samples(X.shape[0], cfg, b)
    if sp.size == 0 or es.size == 0:
        raise DegenerateDataError(f"tree {b}: subsample too small to split into two samples")
    tree = _grow_tree_arrays(X, t, y, sp, es, cfg.grow, child_seed(cfg.seed, "tree-features", b), order)
    return tree, sp, es


def fit_forest(ds, cfg, n_jobs=1):
    """Fit ``cfg.num_trees`` trees on subsamples drawn without replacement.

    Tree ``b`` draws from the stream ``(cfg.seed, "tree", b)``, so the result
    does not depend on ``n_jobs``.
    """
    X, t, y = ds.X, ds.t, ds.y
    n1 = int(t.sum())
    if n1 == 0 or n1 == ds.n:
        raise DegenerateDataError("both treatment arms must be present")
    order = _kernels.feature_order(X)
    B = int(cfg.num_trees)
    if n_jobs == 1:
        out = [_fit_one(X, t, y, order, cfg, b) for b in range(B)]
    else:
        out = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_fit_one)(X, t, y, order, cfg, b) for b in range(B)
        )
    trees, sps, ess = zip(*out)
    return Forest(list(trees), list(sps), list(ess), cfg, ds.d, ds.n)


def predict_forest(forest, X):
    return forest.predict(X)


def refit_leaf_estimates(forest, ds):
    """Keep every partition; recompute leaf SPATEs from ``ds`` on each tree's estimation rows."""
    if ds.n != forest.n_train:
        raise ParameterError(f"dataset has {ds.n} rows, forest was fitted on {forest.n_train}")
    trees = [tr.with_estimates(ds.X, ds.t, ds.y, es) for tr, es in zip(forest.trees, forest.estimation_rows)]
    return Forest(trees, forest.splitting_rows, forest.estimation_rows, forest.config, forest.n_features, forest.n_train)


class CausalForest(BaseEstimator):
    """Causal forest estimator.

    Parameters
    ----------
    n_estimators : int, default=100
    subsample_rate : float, default=0.5
        Share of rows drawn without replacement for each tree.
    honest : bool, default=False
        Split each subsample into disjoint splitting and estimation halves.
    split_fraction : float, default=0.5
    min_samples_leaf : int, default=5
        Minimum splitting-sample rows per child.
    min_arm_count : int, default=2
    max_depth : int or None, default=None
    max_features : int or None, default=None
    n_jobs : int, default=1
    random_state : int or None, default=None
    """

    def __init__(self, n_estimators=100, subsample_rate=0.5, honest=False, split_fraction=0.5,
                 min_samples_leaf=5, min_arm_count=2, max_depth=None, max_features=None,
                 n_jobs=1, random_state=None):
        self.n_estimators = n_estimators
        self.subsample_rate = subsample_rate
        self.honest = honest
        self.split_fraction = split_fraction
        self.min_samples_leaf = min_samples_leaf
        self.min_arm_count = min_arm_count
        self.max_depth = max_depth
        self.max_features = max_features
        self.n_jobs = n_jobs
        self.random_state = random_state

    def forest_config(self):
        return ForestConfig(
            num_trees=self.n_estimators,
            subsample_rate=self.subsample_rate,
            honesty=HonestyMode(bool(self.honest), self.split_fraction),
            grow=TreeGrowConfig(self.min_samples_leaf, self.min_arm_count, self.max_depth, self.max_features),
            seed=as_seed(self.random_state),
        )

    def fit(self, X, t, y):
        X, t, y = check_treatment_data(X, t, y)
        self.forest_ = fit_forest(Dataset(X, t, y), self.forest_config(), n_jobs=self.n_jobs)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "forest_")
        return self.forest_.predict(check_features(X, self.n_features_in_))

    def apply(self, X):
        check_is_fitted(self, "forest_")
        return self.forest_.apply(check_features(X, self.n_features_in_))

    @property
    def estimators_(self):
        check_is_fitted(self, "forest_")
        return self.forest_.trees
