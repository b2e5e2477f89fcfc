import numpy as np
import pytest

from honestforest._random import child_rng
from honestforest.data import Dataset, DgpSpec, generate_dataset, reassign_treatment, split_indices
from honestforest.decomposition import (
    COMPONENTS,
    ComplexityRegime,
    ReplicationRecord,
    additivity_gaps,
    approx_target,
    decompose,
    default_train_n,
    regime_leaf_sizes,
    run_regime,
    run_replications,
)
from honestforest.exceptions import ParameterError, UnsupportedOperationError
from honestforest.forest import ADAPTIVE, ForestConfig, HonestyMode
from honestforest.tree import TreeGrowConfig


def test_target_single_leaf_excludes_self():
    aux = np.array([1.0, 2.0, 3.0])
    target, used = approx_target(None, None, aux, leaves=np.zeros((3, 1), np.int64))
    assert target[1] == pytest.approx(2.0)
    assert target[0] == pytest.approx(2.5) and target[2] == pytest.approx(1.5)
    assert np.all(used == 1)


def test_target_constant_leaf_cate():
    target, _ = approx_target(None, None, np.full(5, 0.7), leaves=np.zeros((5, 2), np.int64))
    assert np.allclose(target, 0.7)


def test_target_averages_over_trees():
    # Unit 0 shares tree 0's leaf with a CATE-1 unit and tree 1's leaf with a CATE-3 unit.
    aux = np.array([0.0, 1.0, 3.0])
    leaves = np.array([[0, 0], [0, 1], [1, 0]])
    target, used = approx_target(None, None, aux, leaves=leaves)
    assert target[0] == pytest.approx(2.0)
    assert used[0] == 2


def test_target_nan_when_always_alone():
    target, used = approx_target(None, None, np.array([1.0, 2.0]), leaves=np.array([[0], [1]]))
    assert np.all(np.isnan(target)) and np.all(used == 0)


def test_target_needs_truth():
    with pytest.raises(UnsupportedOperationError):
        approx_target(None, None, None, leaves=np.zeros((2, 1), np.int64))


def test_regime_leaf_sizes():
    assert regime_leaf_sizes("AEMatched", 80, 13) == (80, 40)
    assert regime_leaf_sizes(ComplexityRegime.HE_MATCHED, 7, 40) == (80, 40)
    assert regime_leaf_sizes("selfoptimal", 80, 13) == (80, 13)
    with pytest.raises(ParameterError):
        ComplexityRegime.parse("bogus")


def test_default_train_share():
    assert default_train_n(4802) == 4000


def _record(r, idx, pred, tgt):
    return ReplicationRecord(r, np.asarray(idx), np.asarray(pred, float), np.asarray(tgt, float), 5)


def test_constant_predictions_have_zero_variance():
    beta = np.array([0.0, 1.0, 2.0])
    recs = [_record(r, [0, 1, 2], [0.5] * 3, [0.4, 1.2, 1.9 + 0.1 * r]) for r in range(4)]
    rep = decompose(recs, beta)
    assert np.allclose(rep.per_unit["variance"], 0.0)
    assert np.allclose(rep.per_unit["bias2"], (0.5 - beta) ** 2)


def test_constant_target_components():
    beta = np.array([0.0, 2.0])
    rng = np.random.default_rng(0)
    recs = [_record(r, [0, 1], rng.standard_normal(2), [0.3, 1.0]) for r in range(50)]
    rep = decompose(recs, beta)
    assert np.allclose(rep.per_unit["target_coupling"], 0.0)
    assert np.allclose(rep.per_unit["spillover"], 0.0, atol=1e-15)
    preds = np.array([[rec.prediction[k] for rec in recs] for k in range(2)])
    assert np.allclose(rep.per_unit["noise_overlap"], preds.var(axis=1))


def test_units_seen_once_are_excluded():
    beta = np.array([0.0, 1.0, 2.0])
    recs = [_record(0, [0, 1], [0.1, 0.2], [0.0, 1.0]), _record(1, [0, 2], [0.3, 0.4], [0.0, 2.0])]
    rep = decompose(recs, beta)
    assert list(rep.units) == [0]
    assert rep.excluded_units == 2


def test_nan_targets_are_dropped_and_counted():
    beta = np.array([0.0, 1.0])
    recs = [_record(r, [0, 1], [0.1, 0.2], [np.nan if r == 0 else 0.0, 1.0]) for r in range(3)]
    rep = decompose(recs, beta)
    assert rep.flagged_observations == 1
    assert list(rep.replications) == [2, 3]


def _small_run(leaf=20, R=8, honest=True, seed=0):
    ds = generate_dataset(DgpSpec("linear", n=300, d=4, effect_scale=1.0, seed=seed))
    cfg = ForestConfig(10, 0.5, HonestyMode(honest), TreeGrowConfig(leaf, 2), seed=0)
    return ds, run_replications(ds, cfg, R=R, seed=seed)


def test_replications_deterministic():
    _, a = _small_run()
    _, b = _small_run()
    for x, y in zip(a, b):
        assert np.array_equal(x.prediction, y.prediction) and np.array_equal(x.test_index, y.test_index)


def test_identities_hold_on_real_run():
    ds, recs = _small_run(R=12)
    rep = decompose(recs, ds.true_cate)
    gaps = additivity_gaps(rep)
    assert gaps["bias"] <= 1e-10 and gaps["variance"] <= 1e-10 and gaps["mse"] <= 1e-10
    assert gaps["aggregate"] <= 1e-8
    assert set(rep.aggregate) == set(COMPONENTS)


def test_expected_appearances():
    ds = generate_dataset(DgpSpec("linear", n=4802, d=2, seed=0))
    cfg = ForestConfig(1, 0.5, ADAPTIVE, TreeGrowConfig(10**6, 1), seed=0)
    recs = run_replications(ds, cfg, R=600, seed=1)
    counts = np.bincount(np.concatenate([r.test_index for r in recs]), minlength=ds.n)
    assert counts.mean() == pytest.approx(600 * 802 / 4802)
    assert abs(np.median(counts) - 100) <= 3


def test_single_leaf_forest_closed_form():
    ds = generate_dataset(DgpSpec("linear", n=200, d=2, effect_scale=1.0, seed=3))
    cfg = ForestConfig(1, 1.0, ADAPTIVE, TreeGrowConfig(10**6, 1), seed=0)
    recs = run_replications(ds, cfg, R=30, train_n=150, seed=2)
    for rec in recs[:5]:
        rng = child_rng(2, "rep", rec.replication)
        redrawn = reassign_treatment(ds, 0.5, rng)
        tr, te = split_indices(ds.n, 150, rng)
        t, y = redrawn.t[tr], redrawn.y[tr]
        dim = y[t == 1].mean() - y[t == 0].mean()
        assert np.allclose(rec.prediction, dim)
        beta = ds.true_cate[te]
        assert np.allclose(rec.target, (beta.sum() - beta) / (beta.size - 1))
    # Every test unit sees the same single-leaf estimate, so its variance is the spread of those estimates.
    rep = decompose(recs, ds.true_cate)
    unit = recs[0].test_index[0]
    seen = [rec.prediction[0] for rec in recs if unit in rec.test_index]
    assert rep.per_unit["variance"][np.searchsorted(rep.units, unit)] == pytest.approx(np.var(seen))
    assert np.var(seen) > 0


def test_run_regime_leaf_sizes_and_shared_streams():
    ds = generate_dataset(DgpSpec("linear", n=300, d=3, seed=0))
    run = run_regime(ds, "AEMatched", 40, 99, R=4, base=ForestConfig(5, seed=0))
    assert run.leaf_sizes == {"AE": 40, "HE": 20}
    ae, he = run.records["AE"], run.records["HE"]
    assert all(np.array_equal(a.test_index, h.test_index) for a, h in zip(ae, he))


def test_replications_need_generator():
    ds = Dataset(np.zeros((10, 1)), np.arange(10) % 2, np.zeros(10))
    with pytest.raises(UnsupportedOperationError):
        run_replications(ds, ForestConfig(1), R=2)
