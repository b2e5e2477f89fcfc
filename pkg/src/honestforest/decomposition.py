"""Replication-based bias-variance decomposition of forest CATE predictions.

Each replication redraws treatment and the train/test split, fits a forest,
and records for every test unit the prediction, an approximation target
(leaf-average true CATE of the other test units, averaged over trees) and
the estimation error (prediction minus target). Per-unit moments over the
replications in which a unit was tested give three bias and three variance
subcomponents.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List

import numpy as np
from joblib import Parallel, delayed

from ._random import child_rng
from .data import reassign_treatment, split_indices
from .exceptions import ParameterError, UnsupportedOperationError
from .forest import ForestConfig, HonestyMode, fit_forest

REP_STREAM = "rep"


class ComplexityRegime(str, Enum):
    SELF_OPTIMAL = "SelfOptimal"
    AE_MATCHED = "AEMatched"
    HE_MATCHED = "HEMatched"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for r in cls:
            if str(value).strip().lower() in (r.value.lower(), r.name.lower()):
                return r
        raise ParameterError(f"unknown complexity regime {value!r}")


def regime_leaf_sizes(regime, ae_chosen, he_chosen):
    """``(ae_leaf, he_leaf)`` used under ``regime`` given each mode's tuned leaf size.

    HE splits on half the subsample, so an HE leaf of ``m`` yields about as
    many leaves as an AE leaf of ``2 m``.
    """
    regime = ComplexityRegime.parse(regime)
    if regime is ComplexityRegime.SELF_OPTIMAL:
        return int(ae_chosen), int(he_chosen)
    if regime is ComplexityRegime.AE_MATCHED:
        return int(ae_chosen), max(1, int(math.ceil(ae_chosen / 2)))
    return max(1, 2 * int(he_chosen)), int(he_chosen)


def approx_target(forest, X_test, aux_cate, leaves=None):
    """Forest approximation target of every test unit.

    For unit ``i`` and tree ``b``: mean ``aux_cate`` of the *other* test units
    in ``i``'s leaf. Trees where ``i`` is alone are skipped. Returns
    ``(target, n_trees_used)``; the target is NaN where no tree contributes.
    """
    if aux_cate is None:
        raise UnsupportedOperationError("approximation targets need the true CATE of the auxiliary units")
    aux_cate = np.asarray(aux_cate, dtype=np.float64)
    if leaves is None:
        leaves = forest.apply(X_test)
    n, B = leaves.shape
    if aux_cate.shape != (n,):
        raise ParameterError("aux_cate must have one value per test row")
    total = np.zeros(n)
    used = np.zeros(n, np.int64)
    for b in range(B):
        ids = leaves[:, b]
        size = int(ids.max()) + 1
        cnt = np.bincount(ids, minlength=size)[ids] - 1
        s = np.bincount(ids, weights=aux_cate, minlength=size)[ids] - aux_cate
        ok = cnt > 0
        total[ok] += s[ok] / cnt[ok]
        used += ok
    target = np.full(n, np.nan)
    has = used > 0
    target[has] = total[has] / used[has]
    return target, used


@dataclass(frozen=True, eq=False)
class ReplicationRecord:
    """Test-unit quantities of one replication; ``target`` is NaN for flagged units."""

    replication: int
    test_index: np.ndarray
    prediction: np.ndarray
    target: np.ndarray
    leaf_size: int

    @property
    def error(self):
        return self.prediction - self.target

    @property
    def flagged(self):
        return int(np.count_nonzero(np.isnan(self.target)))


def _one_replication(ds, cfg, train_n, seed, r):
    rng = child_rng(seed, REP_STREAM, r)
    redrawn = reassign_treatment(ds, 0.5, rng)
    train_idx, test_idx = split_indices(ds.n, train_n, rng)
    forest_seed = int(rng.integers(0, 2**62))
    forest = fit_forest(redrawn.subset(train_idx), cfg.with_seed(forest_seed))
    X_test = ds.X[test_idx]
    leaves = forest.apply(X_test)
    pred = np.stack([tr.value[leaves[:, b]] for b, tr in enumerate(forest.trees)]).mean(axis=0)
    target, _ = approx_target(forest, X_test, ds.true_cate[test_idx], leaves)
    return ReplicationRecord(r, test_idx, pred, target, cfg.grow.min_samples_leaf)


def run_replications(ds, cfg, R=600, train_n=None, seed=0, n_jobs=1):
    """``R`` replications of (treatment redraw, split, fit, predict, target).

    Replication ``r`` draws everything from the stream ``(seed, "rep", r)``;
    treatment is redrawn with probability 0.5. ``train_n`` defaults to the
    4000:802 share of ``ds.n``.
    """
    if int(R) < 2:
        raise ParameterError("R must be >= 2")
    if not ds.has_potential_outcomes or ds.true_cate is None:
        raise UnsupportedOperationError("replications need a generator-backed dataset with potential outcomes")
    train_n = default_train_n(ds.n) if train_n is None else int(train_n)
    if n_jobs == 1:
        return [_one_replication(ds, cfg, train_n, seed, r) for r in range(int(R))]
    return list(
        Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_one_replication)(ds, cfg, train_n, seed, r) for r in range(int(R))
        )
    )


def default_train_n(n):
    return int(round(n * 4000 / 4802))


COMPONENTS = (
    "bias2",
    "approx_bias2",
    "est_bias2",
    "bias_interaction",
    "variance",
    "target_coupling",
    "noise_overlap",
    "spillover",
    "mse",
)


@dataclass(frozen=True, eq=False)
class DecompositionReport:
    """Per-unit components and their normalized means over units.

    ``aggregate`` values are means over included units divided by ``var_beta``;
    ``s2_bar = 1 - aggregate["mse"]``.
    """

    units: np.ndarray
    replications: np.ndarray
    per_unit: Dict[str, np.ndarray] = field(repr=False)
    aggregate: Dict[str, float]
    var_beta: float
    excluded_units: int
    flagged_observations: int

    @property
    def s2_bar(self):
        return 1.0 - self.aggregate["mse"]

    def to_dict(self):
        return {
            "aggregate": dict(self.aggregate),
            "s2_bar": self.s2_bar,
            "var_beta": self.var_beta,
            "included_units": int(self.units.size),
            "excluded_units": self.excluded_units,
            "flagged_observations": self.flagged_observations,
        }


def decompose(records, true_cate, var_beta=None):
    """Aggregate replication records into the six-way decomposition.

    Moments use divisor ``R_i`` so that per-unit MSE equals bias squared
    plus variance exactly. Units tested fewer than twice (after dropping
    replications where the unit's target was undefined) are excluded and
    counted.
    """
    true_cate = np.asarray(true_cate, dtype=np.float64)
    n = true_cate.size
    if var_beta is None:
        var_beta = float(np.var(true_cate))
    if not var_beta > 0:
        raise ParameterError("var_beta must be positive")
    idx = np.concatenate([rec.test_index for rec in records]) if records else np.empty(0, np.int64)
    pred = np.concatenate([rec.prediction for rec in records]) if records else np.empty(0)
    tgt = np.concatenate([rec.target for rec in records]) if records else np.empty(0)
    appeared = np.bincount(idx, minlength=n) > 0
    keep = ~np.isnan(tgt)
    flagged = int(np.count_nonzero(~keep))
    idx, pred, tgt = idx[keep], pred[keep], tgt[keep]
    err = pred - tgt

    R_i = np.bincount(idx, minlength=n)

    def mean(v):
        return np.bincount(idx, weights=v, minlength=n) / np.maximum(R_i, 1)

    b_bar = mean(pred)
    t_bar = mean(tgt)
    e_bar = mean(err)
    dp = pred - b_bar[idx]
    dt = tgt - t_bar[idx]
    de = err - e_bar[idx]
    var_b = mean(dp * dp)
    var_t = mean(dt * dt)
    var_e = mean(de * de)
    cov_te = mean(dt * de)
    mse = mean((pred - true_cate[idx]) ** 2)

    a = t_bar - true_cate
    per_unit = {
        "bias2": (b_bar - true_cate) ** 2,
        "approx_bias2": a * a,
        "est_bias2": e_bar * e_bar,
        "bias_interaction": 2.0 * a * e_bar,
        "variance": var_b,
        "target_coupling": var_t,
        "noise_overlap": var_e,
        "spillover": 2.0 * cov_te,
        "mse": mse,
    }
    units = np.flatnonzero(R_i >= 2)
    per_unit = {k: v[units] for k, v in per_unit.items()}
    aggregate = {k: float(np.mean(v)) / var_beta if units.size else float("nan") for k, v in per_unit.items()}
    excluded = int(np.count_nonzero(appeared & (R_i < 2)))
    return DecompositionReport(units, R_i[units], per_unit, aggregate, float(var_beta), excluded, flagged)


def additivity_gaps(report):
    """Relative gaps of the three exact identities (per-unit max and aggregate)."""
    pu = report.per_unit
    scale = max(float(np.max(np.abs(pu["mse"]))), 1e-300)
    bias = pu["approx_bias2"] + pu["est_bias2"] + pu["bias_interaction"] - pu["bias2"]
    var = pu["target_coupling"] + pu["noise_overlap"] + pu["spillover"] - pu["variance"]
    mse = pu["bias2"] + pu["variance"] - pu["mse"]
    ag = report.aggregate
    agg_gap = abs((1.0 - report.s2_bar) - (ag["bias2"] + ag["variance"])) / max(abs(1.0 - report.s2_bar), 1e-300)
    return {
        "bias": float(np.max(np.abs(bias))) / scale,
        "variance": float(np.max(np.abs(var))) / scale,
        "mse": float(np.max(np.abs(mse))) / scale,
        "aggregate": agg_gap,
    }


@dataclass(frozen=True, eq=False)
class RegimeRun:
    regime: str
    leaf_sizes: Dict[str, int]
    reports: Dict[str, DecompositionReport]
    records: Dict[str, List[ReplicationRecord]] = field(repr=False)

    def to_dict(self):
        return {
            "regime": self.regime,
            "leaf_sizes": dict(self.leaf_sizes),
            "modes": {m: r.to_dict() for m, r in self.reports.items()},
        }


def run_regime(ds, regime, ae_chosen, he_chosen, R=600, train_n=None, seed=0, base=None, n_jobs=1):
    """Decompose AE and HE forests at the leaf sizes implied by ``regime``.

    Both modes share the replication streams, so they see the same
    treatment draws and splits.
    """
    base = base or ForestConfig()
    ae_leaf, he_leaf = regime_leaf_sizes(regime, ae_chosen, he_chosen)
    frac = base.honesty.split_fraction if base.honesty.honest else 0.5
    reports, records = {}, {}
    for label, leaf, honesty in (("AE", ae_leaf, HonestyMode(False)), ("HE", he_leaf, HonestyMode(True, frac))):
        cfg = ForestConfig(base.num_trees, base.subsample_rate, honesty, base.grow, base.seed).with_leaf_size(leaf)
        recs = run_replications(ds, cfg, R, train_n, seed, n_jobs)
        records[label] = recs
        reports[label] = decompose(recs, ds.true_cate)
    return RegimeRun(ComplexityRegime.parse(regime).value, {"AE": ae_leaf, "HE": he_leaf}, reports, records)

