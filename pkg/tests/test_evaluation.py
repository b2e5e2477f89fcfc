import numpy as np
import pytest

from honestforest.data import Dataset, DgpSpec, generate_dataset
from honestforest.evaluation import (
    AE_GRID,
    CHOSE_AE,
    CHOSE_HE,
    HE_GRID,
    NO_HETEROGENEITY,
    calibration_slope_test,
    cv_tune,
    evaluate,
    fold_ids,
    heterogeneity_gate,
    mode_config,
    one_se_choice,
    regret,
    s_squared,
    select_estimator,
    transform_outcome,
)
from honestforest._random import child_rng
from honestforest.exceptions import ParameterError
from honestforest.forest import ForestConfig, HonestyMode


@pytest.mark.parametrize("t,y,w,z", [(1, 2.0, 0.5, 4.0), (0, 2.0, 0.5, -4.0), (1, 1.0, 0.25, 4.0)])
def test_transform_outcome(t, y, w, z):
    ds = Dataset(np.zeros((2, 1)), [t, 1 - t], [y, 0.0], propensity=w)
    assert transform_outcome(ds)[0] == pytest.approx(z)


def test_transform_outcome_unbiased_for_cate():
    ds = generate_dataset(DgpSpec("stylized", n=200_000, d=1, effect_scale=0.5, noise_sd=1.0, seed=0))
    z = transform_outcome(ds)
    se = z.std() / np.sqrt(ds.n)
    assert abs(z.mean() - ds.true_cate.mean()) < 4 * se


def test_s_squared_reference_points():
    truth = np.array([1.0, 2.0, 3.0, 6.0])
    assert s_squared(truth, truth) == 1.0
    assert s_squared(np.full(4, truth.mean()), truth) == pytest.approx(0.0)
    assert s_squared(truth[::-1], truth) < 0


def test_regret_formula():
    assert regret(0.8, 0.7, 0.7) == pytest.approx(0.1)
    assert regret(0.8, 0.7, 0.8) == 0.0
    assert regret(0.8, 0.7, 0.75) == pytest.approx(0.05)


def test_grids():
    assert len(AE_GRID) == 8
    assert HE_GRID == tuple(v // 2 for v in AE_GRID)


def test_fold_ids_balanced():
    f = fold_ids(103, 5, child_rng(0, "f"))
    counts = np.bincount(f)
    assert counts.max() - counts.min() <= 1 and counts.sum() == 103


def test_cv_tune_singleton_and_tie(linear_ds):
    base = ForestConfig(5, seed=0)
    assert cv_tune(linear_ds, "AE", [37], 3, 0, base).chosen == 37
    # Leaf sizes above the sample size all produce the same root-only forests.
    res = cv_tune(linear_ds, "HE", [5000, 9000], 3, 0, base)
    assert res.cv_mse[0] == res.cv_mse[1]
    assert res.chosen == 9000


def test_constant_predictor_fails_gate():
    z = np.random.default_rng(0).standard_normal(100)
    assert calibration_slope_test(z, np.full(100, 0.3)) == (0.0, 1.0)


def test_calibration_detects_signal():
    rng = np.random.default_rng(1)
    pred = rng.standard_normal(2000)
    _, p = calibration_slope_test(pred + rng.standard_normal(2000), pred)
    assert p < 1e-10


def test_gate_passes_strong_signal():
    ds = generate_dataset(DgpSpec("stylized", n=1000, d=4, effect_scale=2.0, noise_sd=0.5, seed=0))
    passed, p = heterogeneity_gate(ds, mode_config("HE", 20, ForestConfig(20)), seed=0)
    assert passed and p < 1e-6


@pytest.mark.slow
def test_gate_power_strong_signal():
    passed = [
        heterogeneity_gate(
            generate_dataset(DgpSpec("stylized", n=4000, d=4, effect_scale=2.0, noise_sd=0.5, seed=7000 + s)),
            mode_config("HE", 40, ForestConfig(20), seed=s),
            seed=s,
        )[0]
        for s in range(200)
    ]
    assert np.mean(passed) >= 0.95


@pytest.mark.slow
def test_gate_null_false_positive_rate_fixed_config():
    passed = [
        heterogeneity_gate(
            generate_dataset(DgpSpec("null", n=833, d=10, seed=8000 + s)), mode_config("AE", 20, seed=s), seed=s
        )[0]
        for s in range(200)
    ]
    assert np.mean(passed) <= 0.075


def test_gate_alpha_bounds(linear_ds):
    with pytest.raises(ParameterError):
        heterogeneity_gate(linear_ds, mode_config("AE", 20), alpha=1.0)


@pytest.mark.parametrize(
    "ae,he,mse_ae,mse_he,se,expected",
    [
        (False, False, 1.0, 2.0, 0.1, NO_HETEROGENEITY),
        (True, False, 2.0, 1.0, 0.1, CHOSE_AE),
        (False, True, 1.0, 2.0, 0.1, CHOSE_HE),
        (True, True, 1.0, 1.0, 0.0, CHOSE_HE),
        (True, True, 1.0, 1.05, 0.1, CHOSE_HE),
        (True, True, 1.0, 1.2, 0.1, CHOSE_AE),
    ],
)
def test_one_se_rule(ae, he, mse_ae, mse_he, se, expected):
    assert one_se_choice(ae, he, mse_ae, mse_he, se) == expected


def test_select_estimator_identical_configs_keeps_he(linear_ds):
    cfg = mode_config("HE", 20, ForestConfig(5), seed=0)
    dec = select_estimator(linear_ds, cfg, cfg, seed=0)
    assert dec.mse_ae == dec.mse_he
    assert dec.outcome in (CHOSE_HE, NO_HETEROGENEITY)


def test_evaluate_without_truth():
    ds = Dataset(np.zeros((4, 1)), [0, 1, 0, 1], [1.0, 2.0, 0.0, 1.0])
    rep = evaluate(np.zeros(4), ds)
    assert np.isnan(rep.s2) and rep.mse_z > 0


def test_cv_tune_deterministic(linear_ds):
    base = ForestConfig(5, seed=0)
    a = cv_tune(linear_ds, HonestyMode(True), [10, 40], 3, 3, base)
    b = cv_tune(linear_ds, HonestyMode(True), [10, 40], 3, 3, base, n_jobs=2)
    assert a.cv_mse == b.cv_mse
