"""Single-split Monte-Carlo laboratory on the binary-feature stylized model.

Every unit has ``m`` fair-coin features; only ``x0`` is informative, with
CATE ``theta * (2 x0 - 1)``. A one-split "tree" picks the feature with the
largest absolute difference between its two cell-level effect estimates and
reports the estimate for a probe unit with ``x0 = 1`` (true effect ``theta``).
"""

from dataclasses import asdict, dataclass

import numpy as np

from ._random import child_rng
from .exceptions import ParameterError
from .forest import HonestyMode

MIN_CELL = 30
MAX_REDRAWS = 1000


@dataclass(frozen=True)
class StylizedConfig:
    n: int = 500
    m: int = 20
    theta: float = 0.5
    sigma: float = 1.0
    reps: int = 2000
    seed: int = 0

    def __post_init__(self):
        if int(self.m) < 2:
            raise ParameterError("m must be >= 2 (at least one noise feature)")
        if int(self.n) < 8:
            raise ParameterError("n must be >= 8")
        if self.theta < 0:
            raise ParameterError("theta must be >= 0")
        if not self.sigma > 0:
            raise ParameterError("sigma must be > 0")
        if int(self.reps) < 1:
            raise ParameterError("reps must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class SingleSplitOutcome:
    chosen_feature: int
    estimate: float
    mode: str
    redraws: int = 0


def _cell_effects(X, t, y):
    """Per-feature difference-in-means in the ``x_j = 0`` and ``x_j = 1`` cells.

    Returns ``(tau0, tau1)`` or ``None`` when some cell lacks an arm.
    """
    tr = t.astype(np.float64)
    ct = 1.0 - tr
    n1_t = X.T @ tr
    n1_c = X.T @ ct
    s1_t = X.T @ (tr * y)
    s1_c = X.T @ (ct * y)
    n0_t = tr.sum() - n1_t
    n0_c = ct.sum() - n1_c
    s0_t = (tr * y).sum() - s1_t
    s0_c = (ct * y).sum() - s1_c
    if min(n1_t.min(), n1_c.min(), n0_t.min(), n0_c.min()) < 1:
        return None
    return s0_t / n0_t - s0_c / n0_c, s1_t / n1_t - s1_c / n1_c


def choose_feature(split):
    """Feature with the largest ``|tau1 - tau0|``; ties go to the lowest index."""
    return int(np.argmax(np.abs(split[1] - split[0])))


def _draw(cfg, rng):
    X = rng.integers(0, 2, size=(cfg.n, cfg.m)).astype(np.float64)
    t = rng.integers(0, 2, size=cfg.n)
    xi = cfg.sigma * rng.standard_normal(cfg.n)
    beta = cfg.theta * (2.0 * X[:, 0] - 1.0)
    y = np.where(t == 1, 0.5 * beta, -0.5 * beta) + xi
    return X, t, y


def simulate_once(cfg, mode, rng):
    """One dataset, one split choice and one probe estimate.

    Under HE the rows are halved at random into splitting and estimation
    samples. Draws in which any feature cell lacks an arm are discarded and
    redrawn; the number of redraws is returned with the outcome.
    """
    mode = HonestyMode.parse(mode)
    for redraws in range(MAX_REDRAWS):
        X, t, y = _draw(cfg, rng)
        if mode.honest:
            perm = rng.permutation(cfg.n)
            k = cfg.n // 2
            sp, es = perm[:k], perm[k:]
        else:
            sp = es = np.arange(cfg.n)
        probe = np.concatenate(([1.0], rng.integers(0, 2, cfg.m - 1).astype(np.float64)))
        split = _cell_effects(X[sp], t[sp], y[sp])
        if split is None:
            continue
        est = split if not mode.honest else _cell_effects(X[es], t[es], y[es])
        if est is None:
            continue
        j = choose_feature(split)
        value = est[1][j] if probe[j] == 1.0 else est[0][j]
        return SingleSplitOutcome(j, float(value), mode.label, redraws)
    raise ParameterError(f"n={cfg.n} is too small: {MAX_REDRAWS} consecutive draws had an empty cell arm")


def simulate_many(cfg, mode, reps, seed, start=0):
    """Arrays ``(chosen, estimate, redraws)`` for replications ``start..start+reps-1``."""
    label = HonestyMode.parse(mode).label
    chosen = np.empty(reps, np.int64)
    est = np.empty(reps)
    redraws = np.empty(reps, np.int64)
    for i in range(reps):
        out = simulate_once(cfg, label, child_rng(seed, f"stylized-{label}", start + i))
        chosen[i], est[i], redraws[i] = out.chosen_feature, out.estimate, out.redraws
    return chosen, est, redraws


def _mean_se(v):
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(v.mean()), se


def _prop_se(p, n):
    return float(np.sqrt(p * (1.0 - p) / n)) if n else float("nan")


def mc_bias_suite(cfg, reps=None, seed=None, max_reps=None):
    """Monte-Carlo estimates of the single-split bias quantities under AE and HE.

    Conditional cells (``chosen == 0`` and ``chosen != 0``) need at least
    ``MIN_CELL`` draws; when a cell falls short the replication count of that
    mode is doubled, up to ``max_reps`` (default ``64 * reps``). Cells that
    remain short are reported with ``defined = False``.

    Returns a dict of statistics and the raw per-replication arrays.
    """
    reps = int(cfg.reps if reps is None else reps)
    seed = cfg.seed if seed is None else seed
    max_reps = 64 * reps if max_reps is None else int(max_reps)
    stats, raw = {}, {}
    for label in ("AE", "HE"):
        chosen, est, redraws = simulate_many(cfg, label, reps, seed)
        while True:
            inf = chosen == 0
            short = min(int(inf.sum()), int((~inf).sum())) < MIN_CELL
            if not short or chosen.size >= max_reps:
                break
            more = min(chosen.size, max_reps - chosen.size)
            c2, e2, r2 = simulate_many(cfg, label, more, seed, start=chosen.size)
            chosen = np.concatenate([chosen, c2])
            est = np.concatenate([est, e2])
            redraws = np.concatenate([redraws, r2])
        inf = chosen == 0
        total = chosen.size
        p1 = float(inf.mean())
        m_inf, se_inf = _mean_se(est[inf])
        m_un, se_un = _mean_se(est[~inf])
        m_all, se_all = _mean_se(est)
        stats[label] = {
            "reps": total,
            "widened": total > reps,
            "redraws": int(redraws.sum()),
            "p_informative": p1,
            "p_informative_se": _prop_se(p1, total),
            "n_informative": int(inf.sum()),
            "n_uninformative": int((~inf).sum()),
            "mean_given_informative": m_inf,
            "se_given_informative": se_inf,
            "defined_given_informative": int(inf.sum()) >= MIN_CELL,
            "mean_given_uninformative": m_un,
            "se_given_uninformative": se_un,
            "defined_given_uninformative": int((~inf).sum()) >= MIN_CELL,
            "bias": m_all - cfg.theta,
            "bias_se": se_all,
        }
        raw[label] = {"chosen": chosen, "estimate": est, "redraws": redraws}
    return {"config": cfg.to_dict(), "theta": cfg.theta, "modes": stats}, raw


def coupling_curve(theta, probs=None):
    """Variance of the probe's realized target, ``theta**2 * p * (1 - p)``.

    The target is ``theta`` when the informative feature is chosen (probability
    ``p``) and ``0`` otherwise.
    """
    p = np.linspace(0.0, 1.0, 21) if probs is None else np.asarray(probs, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ParameterError("selection probabilities must lie in [0, 1]")
    return p, theta**2 * p * (1.0 - p)


def stylized_checks(summary):
    """Evaluate the four single-split bias statements from a :func:`mc_bias_suite` summary.

    Returns ``{name: (passed, detail)}``.
    """
    theta = summary["theta"]
    a, h = summary["modes"]["AE"], summary["modes"]["HE"]
    out = {}
    if a["defined_given_uninformative"]:
        z = abs(a["mean_given_uninformative"]) / a["se_given_uninformative"]
        out["ae_uninformative_unbiased"] = (z < 4.0, f"|mean|/se = {z:.3f} (< 4)")
    else:
        out["ae_uninformative_unbiased"] = (False, f"only {a['n_uninformative']} uninformative draws")
    gap = a["mean_given_informative"] - theta
    out["ae_informative_upward"] = (
        gap > 2.0 * a["se_given_informative"],
        f"gap = {gap:.5f}, 2 se = {2.0 * a['se_given_informative']:.5f}",
    )
    dp = a["p_informative"] - h["p_informative"]
    se_p = float(np.hypot(a["p_informative_se"], h["p_informative_se"]))
    out["ae_selects_informative_more"] = (dp > 2.0 * se_p, f"dP = {dp:.5f}, 2 se = {2.0 * se_p:.5f}")
    se_b = float(np.hypot(a["bias_se"], h["bias_se"]))
    out["ae_lower_abs_bias"] = (
        abs(a["bias"]) <= abs(h["bias"]) + 2.0 * se_b,
        f"|bias_A| = {abs(a['bias']):.5f}, |bias_H| = {abs(h['bias']):.5f}, 2 se = {2.0 * se_b:.5f}",
    )
    return out
