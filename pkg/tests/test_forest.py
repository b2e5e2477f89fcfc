import numpy as np
import pytest

from honestforest.data import Dataset, DgpSpec, generate_dataset
from honestforest.exceptions import DegenerateDataError, ParameterError
from honestforest.forest import (
    ADAPTIVE,
    CausalForest,
    ForestConfig,
    HonestyMode,
    fit_forest,
    predict_forest,
    refit_leaf_estimates,
    tree_samples,
)
from honestforest.tree import TreeGrowConfig, grow_tree, predict_tree


def test_one_tree_full_sample_equals_single_tree(linear_ds):
    ds = linear_ds
    cfg = ForestConfig(1, 1.0, ADAPTIVE, TreeGrowConfig(20, 2), seed=0)
    forest = fit_forest(ds, cfg)
    rows = np.arange(ds.n)
    tree = grow_tree(rows, rows, ds, TreeGrowConfig(20, 2))
    assert np.array_equal(forest.predict(ds.X), tree.predict(ds.X))


def test_subsample_sizes():
    cfg = ForestConfig(5, 0.5, ADAPTIVE, seed=1)
    for b in range(5):
        sp, es = tree_samples(4000, cfg, b)
        assert sp.size == 2000 and np.array_equal(sp, es)


def test_honest_halves_disjoint():
    cfg = ForestConfig(5, 0.5, HonestyMode(True, 0.5), seed=1)
    for b in range(5):
        sp, es = tree_samples(4000, cfg, b)
        assert sp.size == es.size == 1000
        assert not set(sp) & set(es)


def test_prediction_is_mean_of_trees(linear_ds):
    forest = fit_forest(linear_ds, ForestConfig(25, 0.5, HonestyMode(True), TreeGrowConfig(10, 2), seed=4))
    X = linear_ds.X[:50]
    per_tree = np.array([[predict_tree(tr, x)[1] for x in X] for tr in forest.trees])
    assert np.max(np.abs(predict_forest(forest, X) - per_tree.mean(axis=0))) <= 1e-12


def test_constant_trees_average(linear_ds):
    ds = linear_ds
    forest = fit_forest(ds, ForestConfig(3, 0.5, ADAPTIVE, TreeGrowConfig(ds.n, 1), seed=0))
    vals = [tr.value[0] for tr in forest.trees]
    assert np.allclose(forest.predict(ds.X[:7]), np.mean(vals))


def test_refit_identities(linear_ds):
    ds = linear_ds
    forest = fit_forest(ds, ForestConfig(10, 0.5, HonestyMode(True), TreeGrowConfig(10, 2), seed=2))
    base = forest.predict(ds.X)
    assert np.array_equal(refit_leaf_estimates(forest, ds).predict(ds.X), base)
    shifted = refit_leaf_estimates(forest, ds.with_outcome(ds.y + 7.0)).predict(ds.X)
    assert np.allclose(shifted, base, atol=1e-10)
    doubled = refit_leaf_estimates(forest, ds.with_outcome(2.0 * ds.y)).predict(ds.X)
    assert np.allclose(doubled, 2.0 * base, atol=1e-12)


def test_refit_rejects_other_size(linear_ds):
    forest = fit_forest(linear_ds, ForestConfig(2, seed=0))
    with pytest.raises(ParameterError):
        refit_leaf_estimates(forest, linear_ds.subset(np.arange(10)))


def test_thread_count_does_not_change_forest(linear_ds):
    cfg = ForestConfig(16, 0.5, HonestyMode(True), TreeGrowConfig(10, 2), seed=7)
    a = fit_forest(linear_ds, cfg, n_jobs=1).predict(linear_ds.X)
    b = fit_forest(linear_ds, cfg, n_jobs=4).predict(linear_ds.X)
    assert np.array_equal(a, b)


def test_single_arm_rejected():
    ds = Dataset(np.random.default_rng(0).random((20, 2)), np.ones(20, int), np.zeros(20))
    with pytest.raises(DegenerateDataError):
        fit_forest(ds, ForestConfig(2))


def test_forest_config_validation():
    with pytest.raises(ParameterError):
        ForestConfig(0)
    with pytest.raises(ParameterError):
        ForestConfig(subsample_rate=0.0)
    with pytest.raises(ParameterError):
        HonestyMode(True, 1.0)


def test_honest_forest_beats_noise_on_strong_signal():
    ds = generate_dataset(DgpSpec("stylized", n=2000, d=5, effect_scale=2.0, noise_sd=0.5, seed=0))
    est = CausalForest(n_estimators=30, honest=True, min_samples_leaf=20, random_state=0).fit(ds.X, ds.t, ds.y)
    assert np.mean((est.predict(ds.X) - ds.true_cate) ** 2) < 0.1 * np.var(ds.true_cate)
    assert est.apply(ds.X).shape == (ds.n, 30)


def test_summary_fields(linear_ds):
    forest = fit_forest(linear_ds, ForestConfig(4, seed=0))
    s = forest.summary()
    assert s["num_trees"] == 4 and len(s["leaf_counts"]) == 4
