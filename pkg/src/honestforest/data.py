"""Dataset model, synthetic generators and CSV ingestion."""

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ParameterError, SchemaError, UnsupportedOperationError

DGP_KINDS = ("stylized", "piecewise", "linear", "null")

# piecewise CATE shape s0 + s1/2 + s0*s1/2 over fair +/-1 signs has variance 1.5
_PIECEWISE_SCALE = 1.0 / math.sqrt(1.5)


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features, binary treatment and outcome for ``n`` units.

    ``y0``/``y1`` (potential outcomes) and ``noise_var`` are only present on
    generator-backed datasets; they are what makes treatment redraws and
    SNR computations possible.
    """

    X: np.ndarray
    t: np.ndarray
    y: np.ndarray
    true_cate: Optional[np.ndarray] = None
    propensity: float = 0.5
    y0: Optional[np.ndarray] = field(default=None, repr=False)
    y1: Optional[np.ndarray] = field(default=None, repr=False)
    noise_var: Optional[float] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ParameterError("features must be a 2-d array")
        n = X.shape[0]
        if n < 1:
            raise ParameterError("dataset needs at least one row")
        t_raw = np.asarray(self.t)
        if t_raw.shape != (n,):
            raise ParameterError(f"treatment has shape {t_raw.shape}, expected ({n},)")
        if not np.all((t_raw == 0) | (t_raw == 1)):
            raise ParameterError("treatment values must be exactly 0 or 1")
        y = np.asarray(self.y, dtype=np.float64)
        if y.shape != (n,):
            raise ParameterError(f"outcome has shape {y.shape}, expected ({n},)")
        if not (0.0 < float(self.propensity) < 1.0):
            raise ParameterError("propensity must lie strictly inside (0, 1)")
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "t", _readonly(t_raw.astype(np.int8)))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "propensity", float(self.propensity))
        for name in ("true_cate", "y0", "y1"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (n,):
                raise ParameterError(f"{name} has shape {v.shape}, expected ({n},)")
            if not np.all(np.isfinite(v)):
                raise ParameterError(f"{name} contains non-finite values")
            object.__setattr__(self, name, _readonly(v))
        if (self.y0 is None) != (self.y1 is None):
            raise ParameterError("potential outcomes must be given as a pair")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def has_potential_outcomes(self):
        return self.y0 is not None

    def subset(self, rows):
        rows = np.asarray(rows)
        pick = lambda v: None if v is None else v[rows]  # noqa: E731
        return Dataset(
            X=self.X[rows],
            t=self.t[rows],
            y=self.y[rows],
            true_cate=pick(self.true_cate),
            propensity=self.propensity,
            y0=pick(self.y0),
            y1=pick(self.y1),
            noise_var=self.noise_var,
        )

    def with_outcome(self, y):
        return replace(self, y=np.asarray(y, dtype=np.float64))


@dataclass(frozen=True)
class DgpSpec:
    """Synthetic generator description.

    Families (``effect_scale`` is written theta below, noise is N(0, noise_sd^2)
    and shared by both potential outcomes):

    ``stylized``
        Fair-coin binary features; CATE ``theta * (2 x0 - 1)``.
    ``piecewise``
        Uniform features (``d >= 2``); step-function CATE on ``x0`` and
        ``x1`` with variance ``theta**2``; baseline ``x2`` when ``d >= 3``.
    ``linear``
        Standard normal features (``d >= 2``); CATE ``theta (x0 + x1)/sqrt(2)``;
        baseline ``0.5 x2`` when ``d >= 3``.
    ``null``
        Uniform features; constant CATE ``theta``; baseline ``x0``.
    """

    kind: str = "stylized"
    n: int = 1000
    d: int = 5
    effect_scale: float = 0.5
    noise_sd: float = 1.0
    seed: int = 0
    propensity: float = 0.5

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise ParameterError(f"unknown DGP kind {self.kind!r}; expected one of {DGP_KINDS}")
        if int(self.n) < 2:
            raise ParameterError("n must be at least 2")
        if int(self.d) < 1:
            raise ParameterError("d must be at least 1")
        if self.kind in ("piecewise", "linear") and int(self.d) < 2:
            raise ParameterError(f"{self.kind} family needs d >= 2")
        if not (self.noise_sd >= 0) or not math.isfinite(self.noise_sd):
            raise ParameterError("noise_sd must be finite and >= 0")
        if not math.isfinite(self.effect_scale):
            raise ParameterError("effect_scale must be finite")
        if not (0.0 < self.propensity < 1.0):
            raise ParameterError("propensity must lie strictly inside (0, 1)")

    def to_dict(self):
        return asdict(self)

    @property
    def population_snr(self):
        var_beta = 0.0 if self.kind == "null" else self.effect_scale**2
        if self.noise_sd == 0:
            return math.inf if var_beta > 0 else 0.0
        return var_beta / self.noise_sd**2


def cate_function(kind, X, theta):
    """Ground-truth CATE of a generator family evaluated at ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if kind == "stylized":
        return theta * (2.0 * X[:, 0] - 1.0)
    if kind == "piecewise":
        s0 = np.where(X[:, 0] > 0.5, 1.0, -1.0)
        s1 = np.where(X[:, 1] > 0.5, 1.0, -1.0)
        return theta * _PIECEWISE_SCALE * (s0 + 0.5 * s1 + 0.5 * s0 * s1)
    if kind == "linear":
        return theta * (X[:, 0] + X[:, 1]) / math.sqrt(2.0)
    if kind == "null":
        return np.full(X.shape[0], float(theta))
    raise ParameterError(f"unknown DGP kind {kind!r}")


def _baseline(kind, X):
    d = X.shape[1]
    if kind == "piecewise" and d >= 3:
        return X[:, 2].copy()
    if kind == "linear" and d >= 3:
        return 0.5 * X[:, 2]
    if kind == "null":
        return X[:, 0].copy()
    return np.zeros(X.shape[0])


def generate_dataset(spec):
    """Draw a dataset from ``spec``; the result depends only on ``spec``, including its seed."""
    from ._random import child_rng

    rng = child_rng(spec.seed, "dgp")
    n, d = int(spec.n), int(spec.d)
    if spec.kind == "stylized":
        X = rng.integers(0, 2, size=(n, d)).astype(np.float64)
    elif spec.kind == "linear":
        X = rng.standard_normal((n, d))
    else:
        X = rng.random((n, d))
    beta = cate_function(spec.kind, X, spec.effect_scale)
    mu = _baseline(spec.kind, X)
    noise = spec.noise_sd * rng.standard_normal(n)
    y1 = mu + 0.5 * beta + noise
    y0 = mu - 0.5 * beta + noise
    t = (rng.random(n) < spec.propensity).astype(np.int8)
    y = np.where(t == 1, y1, y0)
    return Dataset(
        X=X,
        t=t,
        y=y,
        true_cate=beta,
        propensity=spec.propensity,
        y0=y0,
        y1=y1,
        noise_var=float(spec.noise_sd) ** 2,
    )


def split_indices(n, train_n, rng):
    if not (1 <= int(train_n) < int(n)):
        raise ParameterError(f"train_n must satisfy 1 <= train_n < n (got {train_n}, n={n})")
    perm = rng.permutation(int(n))
    return np.sort(perm[:train_n]), np.sort(perm[train_n:])


def split_train_test(ds, train_n, rng):
    """Disjoint, exhaustive row split into ``train_n`` and ``n - train_n`` rows."""
    train_idx, test_idx = split_indices(ds.n, train_n, rng)
    return ds.subset(train_idx), ds.subset(test_idx)


def reassign_treatment(ds, propensity, rng):
    """Redraw treatment i.i.d. Bernoulli(propensity) and re-reveal outcomes.

    Only generator-backed datasets carry both potential outcomes, so only
    they can be redrawn.
    """
    if not (0.0 < propensity < 1.0):
        raise ParameterError("propensity must lie strictly inside (0, 1)")
    if not ds.has_potential_outcomes:
        raise UnsupportedOperationError(
            "treatment redraw needs potential outcomes; file-backed datasets do not carry them"
        )
    t = (rng.random(ds.n) < propensity).astype(np.int8)
    y = np.where(t == 1, ds.y1, ds.y0)
    return replace(ds, t=t, y=y, propensity=float(propensity))


def snr(ds):
    """Var(true CATE) / noise variance of the generator."""
    if ds.true_cate is None or ds.noise_var is None:
        raise UnsupportedOperationError("SNR needs the generator's CATE and noise variance")
    var_beta = float(np.var(ds.true_cate))
    if ds.noise_var == 0:
        return math.inf if var_beta > 0 else 0.0
    return var_beta / ds.noise_var


# --------------------------------------------------------------------------- CSV


def load_csv(path, propensity=0.5):
    """Read a ``x0..x{d-1}, t, y[, beta]`` CSV into a :class:`Dataset`.

    Schema errors name the offending column and the 1-based data row.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row expected") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    feat_cols = sorted(
        (h for h in header if h.startswith("x") and h[1:].isdigit()), key=lambda h: int(h[1:])
    )
    expected = [f"x{j}" for j in range(len(feat_cols))]
    if not feat_cols:
        raise SchemaError(f"{path}: no feature columns x0..x(d-1)")
    if feat_cols != expected:
        missing = sorted(set(expected) - set(feat_cols), key=lambda h: int(h[1:]))
        raise SchemaError(f"{path}: feature columns must be contiguous; missing {missing}")
    for req in ("t", "y"):
        if req not in header:
            raise SchemaError(f"{path}: missing required column {req!r}")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    pos = {h: i for i, h in enumerate(header)}
    has_beta = "beta" in pos

    def column(name):
        out = np.empty(len(rows))
        j = pos[name]
        for i, r in enumerate(rows, start=1):
            if len(r) != len(header):
                raise SchemaError(f"{path}: row {i} has {len(r)} fields, expected {len(header)}")
            try:
                v = float(r[j])
            except ValueError:
                raise SchemaError(f"{path}: row {i}, column {name!r}: not a number ({r[j]!r})") from None
            if not math.isfinite(v):
                raise SchemaError(f"{path}: row {i}, column {name!r}: non-finite value")
            out[i - 1] = v
        return out

    X = np.column_stack([column(c) for c in feat_cols])
    t = column("t")
    bad = np.flatnonzero((t != 0) & (t != 1))
    if bad.size:
        i = int(bad[0]) + 1
        raise SchemaError(f"{path}: row {i}, column 't': treatment must be 0 or 1 (got {t[bad[0]]:g})")
    y = column("y")
    beta = column("beta") if has_beta else None
    return Dataset(X=X, t=t.astype(np.int8), y=y, true_cate=beta, propensity=propensity)


def save_csv(ds, path):
    path = Path(path)
    header = [f"x{j}" for j in range(ds.d)] + ["t", "y"]
    cols = [ds.X[:, j] for j in range(ds.d)] + [ds.t, ds.y]
    if ds.true_cate is not None:
        header.append("beta")
        cols.append(ds.true_cate)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) if not isinstance(v, np.integer) else int(v) for v in row])
    return path
