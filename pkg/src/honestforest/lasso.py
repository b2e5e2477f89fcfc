"""Linear interaction model for CATEs under adaptive and honest Lasso.

The design is ``[1, T, X - xbar, T * (X - xbar)]``; the CATE of a unit is
``gamma0 + (x - xbar)' gamma`` where ``gamma0`` is the coefficient on ``T``
and ``gamma`` those on the interactions. Intercept and ``T`` are never
penalized; the other columns are scaled to unit variance for the penalty.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _kernels
from ._random import as_seed, child_rng
from ._validation import check_features, check_treatment_data
from .data import Dataset
from .evaluation import fold_ids, transform_outcome
from .exceptions import ConvergenceError, DegenerateDataError, ParameterError

LAMBDA_GRID = tuple(np.logspace(-3, np.log10(3.0), 30))
VARIANTS = ("adaptive", "crossfit", "single")
RIDGE_EPS = 1e-8
LOSS_TIE_REL = 1e-9


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    Z: np.ndarray
    penalized: np.ndarray
    xbar: np.ndarray

    @property
    def d(self):
        return self.xbar.size


@dataclass(frozen=True, eq=False)
class InteractionDesign:
    """Column layout of the interaction model, centred at the training means."""

    xbar: np.ndarray

    @classmethod
    def from_training(cls, X):
        X = np.asarray(X, dtype=np.float64)
        return cls(X.mean(axis=0))

    @property
    def d(self):
        return self.xbar.size

    def build(self, X, t):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ParameterError(f"X must have {self.d} columns")
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        Xc = X - self.xbar
        Z = np.column_stack([np.ones(X.shape[0]), t, Xc, t[:, None] * Xc])
        pen = np.ones(Z.shape[1], np.bool_)
        pen[:2] = False
        return DesignMatrix(Z, pen, self.xbar)


@dataclass(frozen=True, eq=False)
class LassoFit:
    coef: np.ndarray
    lam: float
    xbar: np.ndarray = None
    iterations: int = 0
    kkt_residual: float = 0.0
    penalized: np.ndarray = field(default=None, repr=False)

    @property
    def active(self):
        """Indices of non-zero penalized coefficients."""
        pen = np.ones(self.coef.size, bool) if self.penalized is None else self.penalized
        return np.flatnonzero(pen & (self.coef != 0.0))

    @property
    def gamma0(self):
        return float(self.coef[1])

    @property
    def gamma(self):
        d = self.xbar.size
        return self.coef[2 + d: 2 + 2 * d]


def _column_scale(Z, penalized):
    sd = Z.std(axis=0)
    scale = np.ones(Z.shape[1])
    live = np.ones(Z.shape[1], np.bool_)
    for j in range(Z.shape[1]):
        if penalized[j]:
            if sd[j] > 0:
                scale[j] = sd[j]
            else:
                live[j] = False
    return scale, live


def fit_lasso(design, y, lam, tol=1e-8, max_iter=100_000, penalized=None, warm_start=None):
    """Coordinate-descent Lasso on a :class:`DesignMatrix` (or a raw matrix plus ``penalized``).

    Minimizes ``||y - Z b||^2 / (2n) + lam * sum_j s_j |b_j|`` over the
    penalized columns, with ``s_j`` the column standard deviation; penalized
    columns of zero variance stay at 0. Raises :class:`ConvergenceError`
    when the KKT residual exceeds ``tol`` after ``max_iter`` sweeps.
    """
    if isinstance(design, DesignMatrix):
        Z, pen, xbar = design.Z, design.penalized, design.xbar
    else:
        Z = np.asarray(design, dtype=np.float64)
        pen = np.ones(Z.shape[1], np.bool_) if penalized is None else np.asarray(penalized, np.bool_)
        xbar = None
    y = np.asarray(y, dtype=np.float64)
    if lam < 0 or not np.isfinite(lam):
        raise ParameterError("lambda must be finite and >= 0")
    if Z.ndim != 2 or y.shape != (Z.shape[0],):
        raise ParameterError("design and response have incompatible shapes")
    n = Z.shape[0]
    scale, live = _column_scale(Z, pen)
    Zs = Z / scale
    Zs[:, ~live] = 0.0
    G = Zs.T @ Zs / n
    c = Zs.T @ y / n
    beta = np.zeros(Z.shape[1]) if warm_start is None else np.asarray(warm_start, dtype=np.float64) * scale
    beta = np.ascontiguousarray(beta)
    beta[~live] = 0.0
    it, res = _kernels.lasso_cd_gram(G, c, float(lam), np.ascontiguousarray(pen), beta, float(tol), int(max_iter))
    if res > tol:
        raise ConvergenceError(f"coordinate descent stopped after {it} sweeps with KKT residual {res:.3e}", res)
    return LassoFit(beta / scale, float(lam), xbar, int(it), float(res), pen)


def kkt_certificate(fit, design, y):
    """KKT residual of ``fit`` recomputed from scratch on the scaled design."""
    Z = design.Z if isinstance(design, DesignMatrix) else np.asarray(design, dtype=np.float64)
    pen = fit.penalized
    scale, live = _column_scale(Z, pen)
    Zs = Z / scale
    Zs[:, ~live] = 0.0
    b = fit.coef * scale
    grad = Zs.T @ (np.asarray(y, dtype=np.float64) - Zs @ b) / Z.shape[0]
    G = Zs.T @ Zs / Z.shape[0]
    return float(_kernels.kkt_residual(grad, b, fit.lam, np.ascontiguousarray(pen), G))


def predict_cate_lasso(fit, X):
    """``gamma0 + (X - xbar)' gamma``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    return fit.gamma0 + (X - fit.xbar) @ fit.gamma


def restricted_ols(design, y, columns):
    """Least squares of ``y`` on the chosen design columns.

    Returns ``(coef over all columns, used_ridge)``; a rank-deficient system
    gets a ridge term of ``RIDGE_EPS`` times the mean Gram diagonal.
    """
    Z = design.Z[:, columns]
    y = np.asarray(y, dtype=np.float64)
    coef = np.zeros(design.Z.shape[1])
    ridge = np.linalg.matrix_rank(Z) < len(columns)
    if not ridge:
        sol = np.linalg.lstsq(Z, y, rcond=None)[0]
    else:
        G = Z.T @ Z
        eps = RIDGE_EPS * max(float(np.trace(G)) / len(columns), 1.0)
        sol = np.linalg.solve(G + eps * np.eye(len(columns)), Z.T @ y)
    coef[columns] = sol
    return coef, bool(ridge)


def _check_arms(t, what):
    n1 = int(np.sum(t))
    if n1 == 0 or n1 == t.size:
        raise DegenerateDataError(f"{what} does not contain both treatment arms")


def lasso_path(design, y, grid, tol=1e-8, max_iter=100_000):
    """Fits along ``grid`` visited from the largest lambda down, warm-started."""
    order = np.argsort(-np.asarray(grid, dtype=np.float64), kind="stable")
    fits = [None] * len(grid)
    warm = None
    for i in order:
        f = fit_lasso(design, y, float(grid[i]), tol, max_iter, warm_start=warm)
        fits[i] = f
        warm = f.coef
    return fits


def _argmin_prefer_larger(grid, losses):
    """Largest lambda whose loss is within ``LOSS_TIE_REL`` of the minimum.

    The solver stops at a finite KKT tolerance, so fits that agree in exact
    arithmetic can differ in the last digits; those count as ties.
    """
    floor = min(losses)
    return max(g for g, loss in zip(grid, losses) if loss <= floor + LOSS_TIE_REL * abs(floor))


def cv_lambda(ds, grid=None, k_folds=5, seed=0, stream="lasso-folds"):
    """Lambda minimizing the k-fold transformed-outcome MSE of the predicted CATE.

    Returns ``(lambda, cv_mse)``; ties go to the larger lambda.
    """
    grid = tuple(float(g) for g in (LAMBDA_GRID if grid is None else grid))
    if not grid or min(grid) < 0:
        raise ParameterError("lambda grid must be non-empty and non-negative")
    folds = fold_ids(ds.n, k_folds, child_rng(seed, stream))
    z = transform_outcome(ds)
    fold_mse = np.zeros((k_folds, len(grid)))
    for k in range(k_folds):
        tr = folds != k
        te = ~tr
        _check_arms(ds.t[tr], f"fold {k} training part")
        des = InteractionDesign.from_training(ds.X[tr])
        fits = lasso_path(des.build(ds.X[tr], ds.t[tr]), ds.y[tr], grid)
        for g, f in enumerate(fits):
            fold_mse[k, g] = np.mean((predict_cate_lasso(f, ds.X[te]) - z[te]) ** 2)
    losses = fold_mse.mean(axis=0)
    return _argmin_prefer_larger(grid, losses), tuple(float(v) for v in losses)


def fit_adaptive(ds, lam):
    des = InteractionDesign.from_training(ds.X)
    return fit_lasso(des.build(ds.X, ds.t), ds.y, lam)


@dataclass(frozen=True, eq=False)
class HonestPredictor:
    """Select on one half, refit the selected columns by OLS on the other."""

    coef: np.ndarray
    xbar: np.ndarray
    active: np.ndarray
    lam: float
    used_ridge: bool

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        d = self.xbar.size
        return self.coef[1] + (X - self.xbar) @ self.coef[2 + d: 2 + 2 * d]


@dataclass(frozen=True, eq=False)
class CrossFitPredictor:
    parts: tuple

    def predict(self, X):
        return sum(p.predict(X) for p in self.parts) / len(self.parts)

    @property
    def used_ridge(self):
        return any(p.used_ridge for p in self.parts)


def honest_halves(ds, seed=0):
    """Random near-equal halves ``(A, B)``; each half must contain both arms."""
    perm = child_rng(seed, "lasso-halves").permutation(ds.n)
    k = ds.n // 2
    a, b = np.sort(perm[:k]), np.sort(perm[k:])
    _check_arms(ds.t[a], "first half")
    _check_arms(ds.t[b], "second half")
    return a, b


def _honest_part(ds, design, sel, est, lam):
    dsel = ds.subset(sel)
    fit = fit_lasso(design.build(dsel.X, dsel.t), dsel.y, lam)
    columns = np.concatenate(([0, 1], fit.active)).astype(np.int64)
    coef, ridge = restricted_ols(design.build(ds.X[est], ds.t[est]), ds.y[est], columns)
    return HonestPredictor(coef, design.xbar, fit.active, lam, ridge)


def fit_honest_crossfit(ds, lambdas=None, seed=0, grid=None, k_folds=5, halves=None):
    """Two-fold select-then-OLS with swapped roles; predictions averaged.

    ``lambdas`` gives ``(lam_A, lam_B)`` for the selection fits on each half;
    when omitted each is tuned by :func:`cv_lambda` on its own half.
    """
    a, b = honest_halves(ds, seed) if halves is None else halves
    design = InteractionDesign.from_training(ds.X)
    if lambdas is None:
        lambdas = (
            cv_lambda(ds.subset(a), grid, k_folds, seed, "lasso-folds-A")[0],
            cv_lambda(ds.subset(b), grid, k_folds, seed, "lasso-folds-B")[0],
        )
    return CrossFitPredictor((_honest_part(ds, design, a, b, lambdas[0]), _honest_part(ds, design, b, a, lambdas[1])))


def fit_honest_single(ds, lam=None, seed=0, grid=None, k_folds=5, halves=None):
    """Select on the first half, refit on the second; no role swap."""
    a, b = honest_halves(ds, seed) if halves is None else halves
    design = InteractionDesign.from_training(ds.X)
    if lam is None:
        lam = cv_lambda(ds.subset(a), grid, k_folds, seed, "lasso-folds-A")[0]
    return _honest_part(ds, design, a, b, lam)


def tune_lambda(ds, variant="adaptive", k_folds=5, seed=0, grid=None):
    """Lambda choice(s) for ``variant``: one value, or one per half for honest variants."""
    if variant not in VARIANTS:
        raise ParameterError(f"unknown lasso variant {variant!r}; expected one of {VARIANTS}")
    if variant == "adaptive":
        return cv_lambda(ds, grid, k_folds, seed)[0]
    a, b = honest_halves(ds, seed)
    lam_a = cv_lambda(ds.subset(a), grid, k_folds, seed, "lasso-folds-A")[0]
    if variant == "single":
        return lam_a
    return lam_a, cv_lambda(ds.subset(b), grid, k_folds, seed, "lasso-folds-B")[0]


class HonestLasso(BaseEstimator):
    """CATE Lasso on the treatment-interaction design.

    Parameters
    ----------
    variant : {"adaptive", "crossfit", "single"}, default="crossfit"
    lambda_grid : sequence of float or None
        Defaults to 30 log-spaced values from 1e-3 to 3.
    k_folds : int, default=5
    propensity : float, default=0.5
        Treatment probability used by the tuning loss.
    random_state : int or None
    """

    def __init__(self, variant="crossfit", lambda_grid=None, k_folds=5, propensity=0.5, random_state=None):
        self.variant = variant
        self.lambda_grid = lambda_grid
        self.k_folds = k_folds
        self.propensity = propensity
        self.random_state = random_state

    def fit(self, X, t, y):
        X, t, y = check_treatment_data(X, t, y)
        ds = Dataset(X, t, y, propensity=self.propensity)
        seed = as_seed(self.random_state)
        if self.variant == "adaptive":
            lam = cv_lambda(ds, self.lambda_grid, self.k_folds, seed)[0]
            self.model_ = fit_adaptive(ds, lam)
            self.lambda_ = lam
        elif self.variant == "crossfit":
            self.model_ = fit_honest_crossfit(ds, seed=seed, grid=self.lambda_grid, k_folds=self.k_folds)
            self.lambda_ = tuple(p.lam for p in self.model_.parts)
        elif self.variant == "single":
            self.model_ = fit_honest_single(ds, seed=seed, grid=self.lambda_grid, k_folds=self.k_folds)
            self.lambda_ = self.model_.lam
        else:
            raise ParameterError(f"unknown lasso variant {self.variant!r}; expected one of {VARIANTS}")
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_features(X, self.n_features_in_)
        if isinstance(self.model_, LassoFit):
            return predict_cate_lasso(self.model_, X)
        return self.model_.predict(X)
