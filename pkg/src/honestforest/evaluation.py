"""Transformed-outcome tuning, the heterogeneity gate and AE/HE selection."""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy import stats

from ._random import child_rng
from .exceptions import DegenerateDataError, ParameterError
from .forest import ForestConfig, HonestyMode, fit_forest

AE_GRID = (10, 20, 40, 80, 120, 160, 240, 320)
HE_GRID = tuple(v // 2 for v in AE_GRID)

TUNE_STREAM = "tune-folds"
GATE_STREAM = "gate-folds"

NO_HETEROGENEITY = "NoHeterogeneity"
CHOSE_HE = "ChoseHE"
CHOSE_AE = "ChoseAE"


def default_grid(mode):
    return HE_GRID if HonestyMode.parse(mode).honest else AE_GRID


def transform_outcome(ds):
    """Inverse-propensity transformed outcome; its conditional mean is the CATE."""
    w = ds.propensity
    t = ds.t.astype(np.float64)
    return t * ds.y / w - (1.0 - t) * ds.y / (1.0 - w)


def s_squared(pred, truth):
    """Share of CATE variance captured: ``1 - MSE / Var(truth)``."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 1 or pred.size < 2:
        raise ParameterError("pred and truth must be 1-d with equal length >= 2")
    var = float(np.var(truth))
    if var <= 0:
        raise ParameterError("S^2 is undefined when the true CATE has zero variance")
    return 1.0 - float(np.mean((pred - truth) ** 2)) / var


def regret(s2_ae, s2_he, s2_m):
    return max(s2_ae, s2_he) - s2_m


def fold_ids(n, k_folds, rng):
    """Balanced random fold labels ``0..k-1``."""
    if k_folds < 2:
        raise ParameterError("k_folds must be >= 2")
    if n < k_folds:
        raise ParameterError(f"cannot make {k_folds} folds from {n} rows")
    perm = rng.permutation(n)
    out = np.empty(n, np.int64)
    for k, chunk in enumerate(np.array_split(perm, k_folds)):
        out[chunk] = k
    return out


def _check_folds(ds, folds, k_folds):
    for k in range(k_folds):
        for part in (folds == k, folds != k):
            t = ds.t[part]
            if t.size == 0 or t.min() == t.max():
                raise DegenerateDataError(f"fold {k} does not contain both treatment arms")


def out_of_fold_predictions(ds, cfg, folds, n_jobs=1):
    """Predict each row from a forest fitted on the other folds."""
    k_folds = int(folds.max()) + 1
    _check_folds(ds, folds, k_folds)
    pred = np.empty(ds.n)
    for k in range(k_folds):
        test = folds == k
        forest = fit_forest(ds.subset(np.flatnonzero(~test)), cfg.with_seed(_fold_seed(cfg.seed, k)), n_jobs)
        pred[test] = forest.predict(ds.X[test])
    return pred


def _fold_seed(seed, k):
    return int(child_rng(seed, "cv-fit", k).integers(0, 2**62))


@dataclass(frozen=True, eq=False)
class TuningResult:
    mode: str
    grid: Tuple[int, ...]
    cv_mse: Tuple[float, ...]
    chosen: int
    folds: np.ndarray = field(repr=False)
    fold_stream: str = TUNE_STREAM

    def to_dict(self):
        return {
            "mode": self.mode,
            "grid": list(self.grid),
            "cv_mse": list(self.cv_mse),
            "chosen": self.chosen,
            "fold_stream": self.fold_stream,
        }


def _argmin_prefer_larger(grid, losses):
    best = None
    for g, loss in zip(grid, losses):
        if best is None or loss < best[1] or (loss == best[1] and g > best[0]):
            best = (g, loss)
    return best[0]


def cv_tune(ds, mode, grid=None, k_folds=5, seed=0, base=None, n_jobs=1):
    """Choose ``min_samples_leaf`` by k-fold transformed-outcome MSE.

    ``base`` supplies the non-tuned forest settings. Equal losses resolve to
    the larger leaf size.
    """
    mode = HonestyMode.parse(mode)
    grid = tuple(int(g) for g in (default_grid(mode) if grid is None else grid))
    if not grid:
        raise ParameterError("tuning grid must be non-empty")
    base = base or ForestConfig()
    base = ForestConfig(base.num_trees, base.subsample_rate, mode, base.grow, seed)
    folds = fold_ids(ds.n, k_folds, child_rng(seed, TUNE_STREAM))
    z = transform_outcome(ds)
    _check_folds(ds, folds, k_folds)
    losses = []
    for g in grid:
        pred = out_of_fold_predictions(ds, base.with_leaf_size(g), folds, n_jobs)
        fold_mse = [np.mean((pred[folds == k] - z[folds == k]) ** 2) for k in range(k_folds)]
        losses.append(float(np.mean(fold_mse)))
    chosen = _argmin_prefer_larger(grid, losses)
    return TuningResult(mode.label, grid, tuple(losses), chosen, folds)


def calibration_slope_test(z, pred):
    """One-sided test that z rises with the demeaned predictions.

    Least-squares slope of ``z`` on ``pred - mean(pred)`` with intercept;
    heteroskedasticity-robust (HC1) standard error; returns
    ``(slope, p_value)``. A constant predictor gives ``(0.0, 1.0)``.
    """
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(pred, dtype=np.float64) - np.mean(pred)
    n = z.size
    sxx = float(x @ x)
    if n < 3 or sxx <= 1e-14 * max(1.0, float(np.max(np.abs(pred))) ** 2) * n:
        return 0.0, 1.0
    slope = float(x @ (z - z.mean())) / sxx
    resid = z - z.mean() - slope * x
    var = float(np.sum(x * x * resid * resid)) / sxx**2 * n / (n - 2)
    if var <= 0:
        return slope, 0.0 if slope > 0 else 1.0
    tstat = slope / np.sqrt(var)
    return slope, float(stats.t.sf(tstat, df=n - 2))


def heterogeneity_gate(ds, cfg, k_folds=5, alpha=0.05, seed=0, n_jobs=1):
    """Out-of-fold calibration test for one tuned configuration.

    Folds come from the ``gate-folds`` stream of ``seed``, independent of
    the tuning folds. Returns ``(passed, p_value)``.
    """
    if not (0.0 < alpha < 1.0):
        raise ParameterError("alpha must lie strictly inside (0, 1)")
    folds = fold_ids(ds.n, k_folds, child_rng(seed, GATE_STREAM))
    pred = out_of_fold_predictions(ds, cfg, folds, n_jobs)
    _, p = calibration_slope_test(transform_outcome(ds), pred)
    return p < alpha, p


@dataclass(frozen=True, eq=False)
class SelectionDecision:
    outcome: str
    ae_passed: bool
    he_passed: bool
    ae_p_value: float
    he_p_value: float
    mse_ae: float
    mse_he: float
    paired_se: float
    oof_ae: np.ndarray = field(repr=False, default=None)
    oof_he: np.ndarray = field(repr=False, default=None)
    fold_stream: str = GATE_STREAM

    def to_dict(self):
        return {
            "outcome": self.outcome,
            "ae_passed": self.ae_passed,
            "he_passed": self.he_passed,
            "ae_p_value": self.ae_p_value,
            "he_p_value": self.he_p_value,
            "mse_ae": self.mse_ae,
            "mse_he": self.mse_he,
            "paired_se": self.paired_se,
            "fold_stream": self.fold_stream,
        }


def one_se_choice(ae_passed, he_passed, mse_ae, mse_he, paired_se):
    if not ae_passed and not he_passed:
        return NO_HETEROGENEITY
    if ae_passed and not he_passed:
        return CHOSE_AE
    if he_passed and not ae_passed:
        return CHOSE_HE
    if mse_ae < mse_he and mse_he - mse_ae >= paired_se:
        return CHOSE_AE
    return CHOSE_HE


def select_estimator(ds, cfg_ae, cfg_he, k_folds=5, alpha=0.05, seed=0, n_jobs=1):
    """Gate both tuned forests, then keep HE unless AE wins by one paired SE.

    ``cfg_ae``/``cfg_he`` are the tuned forest configurations. Both are
    scored on the same fresh fold split.
    """
    if not (0.0 < alpha < 1.0):
        raise ParameterError("alpha must lie strictly inside (0, 1)")
    folds = fold_ids(ds.n, k_folds, child_rng(seed, GATE_STREAM))
    z = transform_outcome(ds)
    pred_ae = out_of_fold_predictions(ds, cfg_ae, folds, n_jobs)
    pred_he = out_of_fold_predictions(ds, cfg_he, folds, n_jobs)
    _, p_ae = calibration_slope_test(z, pred_ae)
    _, p_he = calibration_slope_test(z, pred_he)
    sq_ae = (pred_ae - z) ** 2
    sq_he = (pred_he - z) ** 2
    diff = sq_ae - sq_he
    mse_ae = float(sq_ae.mean())
    mse_he = float(sq_he.mean())
    se = float(np.std(diff, ddof=1) / np.sqrt(diff.size))
    outcome = one_se_choice(p_ae < alpha, p_he < alpha, mse_ae, mse_he, se)
    return SelectionDecision(outcome, bool(p_ae < alpha), bool(p_he < alpha), p_ae, p_he,
                             mse_ae, mse_he, se, pred_ae, pred_he)


@dataclass(frozen=True)
class MetricsReport:
    mse_te: float
    s2: float
    var_te: float
    mse_z: float

    def to_dict(self):
        return {"mse_te": self.mse_te, "s2": self.s2, "var_te": self.var_te, "mse_z": self.mse_z}


def evaluate(pred, ds_test):
    """Test-set metrics; S^2 fields are NaN when the true CATE is unknown or constant."""
    pred = np.asarray(pred, dtype=np.float64)
    z = transform_outcome(ds_test)
    mse_z = float(np.mean((pred - z) ** 2))
    if ds_test.true_cate is None:
        return MetricsReport(float("nan"), float("nan"), float("nan"), mse_z)
    beta = ds_test.true_cate
    mse = float(np.mean((pred - beta) ** 2))
    var = float(np.var(beta))
    s2 = 1.0 - mse / var if var > 0 else float("nan")
    return MetricsReport(mse, s2, var, mse_z)


def mode_config(mode, leaf, base=None, seed=0):
    base = base or ForestConfig()
    mode = HonestyMode.parse(mode)
    return ForestConfig(base.num_trees, base.subsample_rate, mode, base.grow, seed).with_leaf_size(leaf)

