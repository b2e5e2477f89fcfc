"""Command-line entry point: ``honestforest <subcommand> [--config F] [--seed S] [--threads N] [--out DIR]``.

Every run writes ``config.json`` (the fully resolved configuration, which can
be fed back through ``--config``), ``summary.json`` and one CSV per table.
Outputs depend only on the configuration and seed, never on ``--threads``.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from . import experiments
from .evaluation import AE_GRID, HE_GRID
from .exceptions import HonestForestError, ParameterError

SCHEMA_VERSION = 1

_DATA = {
    "kind": "linear",
    "n": 2000,
    "d": 10,
    "effect_scale": None,
    "snr": None,
    "noise_sd": 1.0,
    "propensity": 0.5,
    "csv": None,
}
_FOREST = {
    "train_n": None,
    "k_folds": 5,
    "num_trees": 100,
    "subsample_rate": 0.5,
    "split_fraction": 0.5,
    "min_arm_count": 2,
    "ae_grid": list(AE_GRID),
    "he_grid": list(HE_GRID),
}

DEFAULTS = {
    "generate": dict(_DATA),
    "compare": {**_DATA, **_FOREST, "alpha": 0.05},
    "bv": {**_DATA, **_FOREST, "R": 600, "regimes": ["SelfOptimal", "AEMatched", "HEMatched"],
           "ae_leaf": None, "he_leaf": None},
    "stylized-mc": {"n": 500, "m": 20, "theta": 0.5, "sigma": 1.0, "reps": 2000},
    "lasso-compare": {**_DATA, "n": 1000, "train_n": None, "k_folds": 5, "lambda_grid": None},
    "learning-curve": {**_DATA, **_FOREST, "sizes": [500, 1000], "outer_folds": 5},
}

HELP = {
    "generate": "simulate a dataset and write it as CSV",
    "compare": "tune, gate and select between adaptive and honest forests",
    "bv": "replication-based bias-variance decomposition",
    "stylized-mc": "single-split Monte Carlo on the binary stylized model",
    "lasso-compare": "adaptive versus honest CATE Lasso",
    "learning-curve": "nested-CV learning curves on the transformed outcome",
}


def read_config(path):
    """Load a JSON object or flat ``key = value`` lines (``#`` starts a comment).

    Flat values are kept as text and parsed according to each key's type.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from exc
    if text.lstrip().startswith("{"):
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ParameterError("config must be a JSON object")
        return cfg
    cfg = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"config {path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg[key] = value
    return cfg


# Types of keys whose default is None.
_OPTIONAL_TYPES = {
    "effect_scale": float,
    "snr": float,
    "train_n": int,
    "ae_leaf": int,
    "he_leaf": int,
    "csv": str,
    "lambda_grid": list,
}


def _scalar(kind, value):
    if kind is bool:
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        if not isinstance(value, bool):
            raise ValueError
        return value
    if kind is int:
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ValueError
        return int(float(value)) if isinstance(value, str) and "." in value else int(value)
    if kind is float:
        v = float(value)
        if not math.isfinite(v):
            raise ValueError
        return v
    return str(value)


def _coerce(key, value, default):
    optional = default is None
    if optional and (value is None or (isinstance(value, str) and value.lower() in ("", "null", "none"))):
        return None
    kind = _OPTIONAL_TYPES[key] if optional else type(default)
    try:
        if kind is list:
            if isinstance(value, str):
                value = json.loads(value) if value.startswith("[") else [value]
            if not isinstance(value, list):
                raise ValueError
            item = type(default[0]) if default else float
            return [_scalar(item, v) for v in value]
        return _scalar(kind, value)
    except (TypeError, ValueError, json.JSONDecodeError):
        raise ParameterError(f"invalid value for {key}: {value!r}") from None


def resolve_config(command, overrides, seed=None):
    """Merge ``overrides`` into the command's defaults; unknown keys are errors."""
    defaults = DEFAULTS[command]
    overrides = dict(overrides)
    file_seed = overrides.pop("seed", 0)
    unknown = sorted(set(overrides) - set(defaults))
    if unknown:
        raise ParameterError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
    cfg = {key: (_coerce(key, overrides[key], default) if key in overrides else default)
           for key, default in defaults.items()}
    cfg["seed"] = _coerce("seed", file_seed if seed is None else seed, 0)
    if cfg["seed"] < 0:
        raise ParameterError("seed must be >= 0")
    return cfg


def _cell(v):
    if v is None:
        return ""
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return v


def write_outputs(out, command, cfg, summary, tables):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "seed": cfg["seed"], "results": summary}
    (out / "summary.json").write_text(
        json.dumps(experiments.clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"
    )
    for name, (header, rows) in tables.items():
        with (out / f"{name}.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([_cell(v) for v in row] for row in rows)
    return out


def run(command, cfg, threads=1):
    seed = cfg["seed"]
    if command == "generate":
        return experiments.run_generate(cfg, seed)
    if command == "compare":
        return experiments.run_compare(cfg, seed, threads)
    if command == "bv":
        return experiments.run_bv(cfg, seed, threads)
    if command == "stylized-mc":
        return experiments.run_stylized(cfg, seed)
    if command == "lasso-compare":
        return experiments.run_lasso(cfg, seed)
    if command == "learning-curve":
        return experiments.run_learning_curve(cfg, seed, threads)
    raise ParameterError(f"unknown command {command!r}")


def build_parser():
    parser = argparse.ArgumentParser(prog="honestforest", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in DEFAULTS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="JSON object or flat key = value file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config file)")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--out", default=None, help="output directory (default: runs/<command>)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = read_config(args.config) if args.config else {}
        for item in args.set:
            if "=" not in item:
                raise ParameterError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        if args.threads < 1:
            raise ParameterError("--threads must be >= 1")
        cfg = resolve_config(args.command, overrides, args.seed)
        summary, tables = run(args.command, cfg, args.threads)
        write_outputs(args.out or Path("runs") / args.command, args.command, cfg, summary, tables)
    except HonestForestError as exc:
        print(f"honestforest {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
