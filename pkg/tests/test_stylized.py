import numpy as np
import pytest

from honestforest._random import child_rng
from honestforest.exceptions import ParameterError
from honestforest.stylized import (
    StylizedConfig,
    choose_feature,
    coupling_curve,
    mc_bias_suite,
    simulate_many,
    simulate_once,
)


def test_noiseless_picks_informative():
    cfg = StylizedConfig(n=200, m=6, theta=0.5, sigma=1e-8)
    for i in range(20):
        out = simulate_once(cfg, "AE", child_rng(0, "s", i))
        assert out.chosen_feature == 0
        assert out.estimate == pytest.approx(0.5, abs=1e-6)


def test_null_selection_is_uniform():
    cfg = StylizedConfig(n=100, m=5, theta=0.0)
    chosen, _, _ = simulate_many(cfg, "AE", 2000, seed=1)
    p = np.mean(chosen == 0)
    assert abs(p - 0.2) < 4 * np.sqrt(0.2 * 0.8 / 2000)


def test_tie_goes_to_lowest_index():
    tau0 = np.array([0.0, 1.0, 0.0, 1.0])
    tau1 = np.array([0.5, 0.5, -0.5, 1.5])
    assert choose_feature((tau0, tau1)) == 0


def test_null_bias_zero_both_modes():
    cfg = StylizedConfig(n=100, m=5, theta=0.0, reps=600)
    summary, _ = mc_bias_suite(cfg, seed=2)
    for mode in ("AE", "HE"):
        s = summary["modes"][mode]
        assert abs(s["bias"]) < 4 * s["bias_se"]


def test_honest_estimates_unbiased_given_selection():
    cfg = StylizedConfig(n=200, m=5, theta=0.3, reps=1500)
    chosen, est, _ = simulate_many(cfg, "HE", 1500, seed=3)
    inf = chosen == 0
    m, se = est[inf].mean(), est[inf].std(ddof=1) / np.sqrt(inf.sum())
    assert abs(m - 0.3) < 4 * se


def test_simulation_deterministic():
    cfg = StylizedConfig(n=60, m=4)
    a = simulate_many(cfg, "HE", 20, seed=5)
    b = simulate_many(cfg, "HE", 20, seed=5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_coupling_curve_shape():
    p, v = coupling_curve(0.5, [0.0, 0.5, 1.0])
    assert np.allclose(v, [0.0, 0.0625, 0.0])
    with pytest.raises(ParameterError):
        coupling_curve(0.5, [1.5])


def test_config_validation():
    with pytest.raises(ParameterError):
        StylizedConfig(m=1)
    with pytest.raises(ParameterError):
        StylizedConfig(sigma=0.0)
