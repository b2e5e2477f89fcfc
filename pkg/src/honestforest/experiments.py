"""End-to-end pipelines behind the command-line subcommands.

Each ``run_*`` function takes a resolved configuration dict and returns
``(summary, tables)``: a JSON-ready dict and a mapping of table name to
``(header, rows)``.
"""

import math

import numpy as np
from scipy import stats

from . import decomposition as bv
from . import lasso as la
from ._random import child_rng
from .data import DgpSpec, generate_dataset, load_csv, split_train_test, snr
from .evaluation import (
    CHOSE_AE,
    CHOSE_HE,
    NO_HETEROGENEITY,
    cv_tune,
    evaluate,
    fold_ids,
    regret,
    select_estimator,
    transform_outcome,
)
from .exceptions import ParameterError, UnsupportedOperationError
from .forest import ForestConfig, HonestyMode, fit_forest
from .stylized import StylizedConfig, coupling_curve, mc_bias_suite, stylized_checks
from .tree import TreeGrowConfig

SPLIT_STREAM = "split"


def clean(v):
    """JSON-safe copy: NaN/inf become ``None``, numpy scalars become Python."""
    if isinstance(v, dict):
        return {str(k): clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [clean(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def dgp_spec(cfg, seed):
    effect = cfg.get("effect_scale")
    if cfg.get("snr") is not None:
        if cfg["snr"] < 0:
            raise ParameterError("snr must be >= 0")
        effect = math.sqrt(cfg["snr"]) * cfg["noise_sd"]
    if effect is None:
        effect = 0.5
    return DgpSpec(cfg["kind"], int(cfg["n"]), int(cfg["d"]), float(effect), float(cfg["noise_sd"]),
                   int(seed), float(cfg["propensity"]))


def load_source(cfg, seed):
    if cfg.get("csv"):
        return load_csv(cfg["csv"], propensity=float(cfg["propensity"]))
    return generate_dataset(dgp_spec(cfg, seed))


def train_size(cfg, n):
    return bv.default_train_n(n) if cfg.get("train_n") is None else int(cfg["train_n"])


def base_forest(cfg, seed):
    return ForestConfig(
        int(cfg["num_trees"]), float(cfg["subsample_rate"]), HonestyMode(False),
        TreeGrowConfig(5, int(cfg["min_arm_count"])), int(seed),
    )


def _mode_cfg(base, honest, leaf, split_fraction):
    return ForestConfig(base.num_trees, base.subsample_rate, HonestyMode(honest, split_fraction),
                        base.grow, base.seed).with_leaf_size(leaf)


def _dataset_info(ds):
    info = {"n": ds.n, "d": ds.d, "propensity": ds.propensity, "has_true_cate": ds.true_cate is not None}
    try:
        info["snr"] = snr(ds)
    except UnsupportedOperationError:
        info["snr"] = None
    return info


# ----------------------------------------------------------------------- generate


def run_generate(cfg, seed):
    ds = load_source(cfg, seed)
    summary = {"dataset": _dataset_info(ds)}
    header = [f"x{j}" for j in range(ds.d)] + ["t", "y"] + (["beta"] if ds.true_cate is not None else [])
    cols = [ds.X[:, j] for j in range(ds.d)] + [ds.t, ds.y] + ([ds.true_cate] if ds.true_cate is not None else [])
    rows = [list(r) for r in zip(*cols)]
    return summary, {"data": (header, rows)}


# ------------------------------------------------------------------------ compare


def run_compare(cfg, seed, n_jobs=1, ds=None):
    """Tune AE and HE, gate and select on the training part, score on the test part."""
    if not 0.0 < float(cfg["alpha"]) < 1.0:
        raise ParameterError("alpha must lie strictly inside (0, 1)")
    ds = load_source(cfg, seed) if ds is None else ds
    train, test = split_train_test(ds, train_size(cfg, ds.n), child_rng(seed, SPLIT_STREAM))
    base = base_forest(cfg, seed)
    frac = float(cfg["split_fraction"])
    k = int(cfg["k_folds"])
    tune = {
        "AE": cv_tune(train, HonestyMode(False), cfg["ae_grid"], k, seed, base, n_jobs),
        "HE": cv_tune(train, HonestyMode(True, frac), cfg["he_grid"], k, seed, base, n_jobs),
    }
    cfgs = {
        "AE": _mode_cfg(base, False, tune["AE"].chosen, frac),
        "HE": _mode_cfg(base, True, tune["HE"].chosen, frac),
    }
    decision = select_estimator(train, cfgs["AE"], cfgs["HE"], k, float(cfg["alpha"]), seed, n_jobs)
    preds = {m: fit_forest(train, cfgs[m], n_jobs).predict(test.X) for m in ("AE", "HE")}
    metrics = {m: evaluate(preds[m], test) for m in ("AE", "HE")}
    chosen = {CHOSE_AE: "AE", CHOSE_HE: "HE"}.get(decision.outcome)
    selector = None
    regrets = None
    if chosen is not None:
        preds["selector"] = preds[chosen]
        metrics["selector"] = metrics[chosen]
        selector = chosen
        s2a, s2h = metrics["AE"].s2, metrics["HE"].s2
        if math.isfinite(s2a) and math.isfinite(s2h):
            regrets = {
                "AE": regret(s2a, s2h, s2a),
                "HE": regret(s2a, s2h, s2h),
                "selector": regret(s2a, s2h, metrics[chosen].s2),
            }
    summary = {
        "dataset": _dataset_info(ds),
        "train_n": train.n,
        "test_n": test.n,
        "tuning": {m: tune[m].to_dict() for m in ("AE", "HE")},
        "decision": decision.to_dict(),
        "selected": selector,
        "excluded": decision.outcome == NO_HETEROGENEITY,
        "metrics": {m: r.to_dict() for m, r in metrics.items()},
        "regret": regrets,
    }
    tables = {
        "tuning": (["mode", "min_samples_leaf", "cv_mse"],
                   [[m, g, v] for m in ("AE", "HE") for g, v in zip(tune[m].grid, tune[m].cv_mse)]),
        "predictions": (
            ["test_row", "beta", "pred_ae", "pred_he"],
            [[i, None if test.true_cate is None else test.true_cate[i], preds["AE"][i], preds["HE"][i]]
             for i in range(test.n)],
        ),
    }
    return summary, tables


# ----------------------------------------------------------------------------- bv


def run_bv(cfg, seed, n_jobs=1):
    if cfg.get("csv"):
        raise UnsupportedOperationError("bias-variance replications need a generator-backed source, not a CSV file")
    ds = load_source(cfg, seed)
    base = base_forest(cfg, seed)
    frac = float(cfg["split_fraction"])
    regimes = [bv.ComplexityRegime.parse(r) for r in cfg["regimes"]]
    if not regimes:
        raise ParameterError("regimes must name at least one complexity regime")
    need_ae = any(r is not bv.ComplexityRegime.HE_MATCHED for r in regimes)
    need_he = any(r is not bv.ComplexityRegime.AE_MATCHED for r in regimes)
    ae_leaf, he_leaf = cfg.get("ae_leaf"), cfg.get("he_leaf")
    tuned = {}
    if (need_ae and ae_leaf is None) or (need_he and he_leaf is None):
        train, _ = split_train_test(ds, train_size(cfg, ds.n), child_rng(seed, "bv-tune"))
        k = int(cfg["k_folds"])
        if need_ae and ae_leaf is None:
            ae_leaf = cv_tune(train, HonestyMode(False), cfg["ae_grid"], k, seed, base, n_jobs).chosen
            tuned["AE"] = ae_leaf
        if need_he and he_leaf is None:
            he_leaf = cv_tune(train, HonestyMode(True, frac), cfg["he_grid"], k, seed, base, n_jobs).chosen
            tuned["HE"] = he_leaf
    # A regime only reads the leaf size it is matched to; the placeholder is never used.
    ae_leaf = int(ae_leaf if ae_leaf is not None else 2 * he_leaf)
    he_leaf = int(he_leaf if he_leaf is not None else ae_leaf)
    base = ForestConfig(base.num_trees, base.subsample_rate, HonestyMode(True, frac), base.grow, base.seed)
    runs = {}
    header = ["regime", "mode", "row", "unit", "R_i"] + list(bv.COMPONENTS)
    rows = []
    for regime in regimes:
        run = bv.run_regime(ds, regime, ae_leaf, he_leaf, int(cfg["R"]), train_size(cfg, ds.n), seed, base, n_jobs)
        entry = run.to_dict()
        entry["additivity"] = {m: bv.additivity_gaps(r) for m, r in run.reports.items()}
        runs[run.regime] = entry
        for mode, rep in run.reports.items():
            for k, u in enumerate(rep.units):
                rows.append([run.regime, mode, "unit", int(u), int(rep.replications[k])]
                            + [rep.per_unit[c][k] for c in bv.COMPONENTS])
            rows.append([run.regime, mode, "aggregate", None, None] + [rep.aggregate[c] for c in bv.COMPONENTS])
    summary = {
        "dataset": _dataset_info(ds),
        "tuned_leaf": tuned,
        "regimes": runs,
    }
    return summary, {"decomposition": (header, rows)}


# -------------------------------------------------------------------- stylized-mc


def run_stylized(cfg, seed):
    sc = StylizedConfig(int(cfg["n"]), int(cfg["m"]), float(cfg["theta"]), float(cfg["sigma"]),
                        int(cfg["reps"]), int(seed))
    summary, raw = mc_bias_suite(sc)
    checks = stylized_checks(summary)
    summary["checks"] = {k: {"passed": bool(v[0]), "detail": v[1]} for k, v in checks.items()}
    rows = []
    for mode in ("AE", "HE"):
        r = raw[mode]
        rows += [[mode, i, int(c), e, int(k)] for i, (c, e, k) in enumerate(zip(r["chosen"], r["estimate"], r["redraws"]))]
    p, v = coupling_curve(sc.theta)
    curve = [["curve", pi, vi] for pi, vi in zip(p, v)]
    for mode in ("AE", "HE"):
        ind = (raw[mode]["chosen"] == 0).astype(np.float64) * sc.theta
        curve.append([mode, float(np.mean(raw[mode]["chosen"] == 0)), float(np.var(ind))])
    return summary, {"outcomes": (["mode", "rep", "chosen", "estimate", "redraws"], rows),
                     "coupling": (["series", "p_informative", "target_variance"], curve)}


# ------------------------------------------------------------------ lasso-compare


def run_lasso(cfg, seed, ds=None):
    ds = load_source(cfg, seed) if ds is None else ds
    train, test = split_train_test(ds, train_size(cfg, ds.n), child_rng(seed, SPLIT_STREAM))
    grid = cfg.get("lambda_grid")
    k = int(cfg["k_folds"])
    lam_ae, cv_ae = la.cv_lambda(train, grid, k, seed)
    halves = la.honest_halves(train, seed)
    lam_a, _ = la.cv_lambda(train.subset(halves[0]), grid, k, seed, "lasso-folds-A")
    lam_b, _ = la.cv_lambda(train.subset(halves[1]), grid, k, seed, "lasso-folds-B")
    adaptive = la.fit_adaptive(train, lam_ae)
    cross = la.fit_honest_crossfit(train, (lam_a, lam_b), seed, halves=halves)
    single = la.fit_honest_single(train, lam_a, seed, halves=halves)
    preds = {
        "AE": la.predict_cate_lasso(adaptive, test.X),
        "HE_crossfit": cross.predict(test.X),
        "HE_single": single.predict(test.X),
    }
    metrics = {m: evaluate(p, test).to_dict() for m, p in preds.items()}
    summary = {
        "dataset": _dataset_info(ds),
        "train_n": train.n,
        "test_n": test.n,
        "lambda": {"AE": lam_ae, "HE_crossfit": [lam_a, lam_b], "HE_single": lam_a},
        "active": {
            "AE": adaptive.active.tolist(),
            "HE_crossfit": [p.active.tolist() for p in cross.parts],
            "HE_single": single.active.tolist(),
        },
        "ridge_fallback": {"HE_crossfit": cross.used_ridge, "HE_single": single.used_ridge},
        "metrics": metrics,
    }
    rows = [[i, None if test.true_cate is None else test.true_cate[i]] + [preds[m][i] for m in preds]
            for i in range(test.n)]
    return summary, {"predictions": (["test_row", "beta"] + [f"pred_{m.lower()}" for m in preds], rows)}


# ----------------------------------------------------------------- learning-curve


def paired_t_interval(diffs, level=0.95):
    """``(mean, low, high)``: t interval for the mean of per-fold paired differences."""
    d = np.asarray(diffs, dtype=np.float64)
    mean = float(d.mean())
    if d.size < 2:
        return mean, float("nan"), float("nan")
    half = float(stats.t.ppf(0.5 + level / 2, d.size - 1) * d.std(ddof=1) / math.sqrt(d.size))
    return mean, mean - half, mean + half


def run_learning_curve(cfg, seed, n_jobs=1):
    """Nested CV: outer folds score, inner CV tunes, at each training size."""
    ds = load_source(cfg, seed)
    sizes = [int(s) for s in cfg["sizes"]]
    K = int(cfg["outer_folds"])
    outer = fold_ids(ds.n, K, child_rng(seed, "lc-outer"))
    pool_min = min(int(np.sum(outer != k)) for k in range(K))
    for s in sizes:
        if s < 2 or s > pool_min:
            raise ParameterError(f"training size {s} outside [2, {pool_min}] available per outer fold")
    z = transform_outcome(ds)
    frac = float(cfg["split_fraction"])
    k_in = int(cfg["k_folds"])
    rows, diff_rows, summary_rows = [], [], []
    for si, size in enumerate(sizes):
        pred = {"AE": np.empty(ds.n), "HE": np.empty(ds.n), "ATE": np.empty(ds.n)}
        fold_diff = []
        for k in range(K):
            pool = np.flatnonzero(outer != k)
            test = np.flatnonzero(outer == k)
            sub = np.sort(child_rng(seed, "lc-sub", si * K + k).choice(pool, size, replace=False))
            train = ds.subset(sub)
            fseed = int(child_rng(seed, "lc-fit", si * K + k).integers(0, 2**62))
            base = base_forest(cfg, fseed)
            pred["ATE"][test] = float(np.mean(z[sub]))
            for mode, honest in (("AE", False), ("HE", True)):
                grid = cfg["he_grid"] if honest else cfg["ae_grid"]
                tr = cv_tune(train, HonestyMode(honest, frac), grid, k_in, fseed, base, n_jobs)
                forest = fit_forest(train, _mode_cfg(base, honest, tr.chosen, frac), n_jobs)
                pred[mode][test] = forest.predict(ds.X[test])
                rows.append([size, k, mode, tr.chosen, float(np.mean((pred[mode][test] - z[test]) ** 2))])
            d = (pred["AE"][test] - z[test]) ** 2 - (pred["HE"][test] - z[test]) ** 2
            fold_diff.append(float(np.mean(d)))
        var_z = float(np.var(z))
        entry = {"size": size}
        for mode in ("AE", "HE", "ATE"):
            entry[f"s2z_{mode}"] = 1.0 - float(np.mean((pred[mode] - z) ** 2)) / var_z
        mean, low, high = paired_t_interval(fold_diff)
        entry.update({"diff_mean": mean, "diff_ci_low": low, "diff_ci_high": high})
        summary_rows.append(entry)
        diff_rows += [[size, k, v] for k, v in enumerate(fold_diff)]
    summary = {"dataset": _dataset_info(ds), "outer_folds": K, "curve": summary_rows}
    return summary, {
        "folds": (["size", "outer_fold", "mode", "min_samples_leaf", "mse_z"], rows),
        "fold_differences": (["size", "outer_fold", "mean_sq_err_ae_minus_he"], diff_rows),
        "curve": (["size", "s2z_ae", "s2z_he", "s2z_ate", "diff_mean", "diff_ci_low", "diff_ci_high"],
                  [[e["size"], e["s2z_AE"], e["s2z_HE"], e["s2z_ATE"], e["diff_mean"], e["diff_ci_low"], e["diff_ci_high"]]
                   for e in summary_rows]),
    }
