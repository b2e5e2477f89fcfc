import csv
import json

import numpy as np
import pytest
from scipy import stats

from honestforest import cli, experiments
from honestforest.data import load_csv
from honestforest.exceptions import ConvergenceError
from honestforest.experiments import paired_t_interval

FAST = ["--set", "num_trees=10", "--set", "ae_grid=[20,40]", "--set", "he_grid=[10,20]", "--set", "k_folds=3"]


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    return code, out


def _summary(out):
    return json.loads((out / "summary.json").read_text())


def test_generate_round_trips_through_loader(tmp_path):
    code, out = _run(tmp_path, "g", "generate", "--set", "n=40", "--set", "d=3", "--seed", "4")
    assert code == 0
    ds = load_csv(out / "data.csv")
    assert (ds.n, ds.d) == (40, 3) and ds.true_cate is not None
    assert _summary(out)["schema_version"] == cli.SCHEMA_VERSION


def test_compare_bundle_schema(tmp_path):
    code, out = _run(tmp_path, "c", "compare", "--set", "kind=stylized", "--set", "effect_scale=2.0",
                     "--set", "noise_sd=0.5", "--set", "n=4802", "--set", "d=10")
    assert code == 0
    res = _summary(out)["results"]
    assert res["decision"]["outcome"] in ("ChoseAE", "ChoseHE")
    for mode in ("AE", "HE", "selector"):
        assert res["metrics"][mode]["s2"] is not None
    assert set(res["regret"]) == {"AE", "HE", "selector"}
    assert res["train_n"] == 4000 and res["test_n"] == 802
    with open(out / "tuning.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 16 and all(float(r["cv_mse"]) > 0 for r in rows)


@pytest.mark.parametrize(
    "command,extra",
    [
        ("compare", ["--set", "n=500", *FAST]),
        ("bv", ["--set", "n=300", "--set", "R=4", "--set", "regimes=SelfOptimal", *FAST]),
        ("learning-curve", ["--set", "n=500", "--set", "sizes=[150]", "--set", "outer_folds=3", *FAST]),
        ("lasso-compare", ["--set", "n=400", "--set", "lambda_grid=[0.01,0.1]"]),
        ("stylized-mc", ["--set", "reps=50", "--set", "n=80", "--set", "m=4"]),
    ],
)
def test_outputs_independent_of_threads_and_round_trip(tmp_path, command, extra):
    _, one = _run(tmp_path, "t1", command, *extra, "--seed", "3", "--threads", "1")
    _, eight = _run(tmp_path, "t8", command, *extra, "--seed", "3", "--threads", "8")
    _, again = _run(tmp_path, "re", command, "--config", str(one / "config.json"))
    files = sorted(p.name for p in one.iterdir())
    assert files == sorted(p.name for p in eight.iterdir())
    for name in files:
        assert (one / name).read_bytes() == (eight / name).read_bytes(), name
        assert (one / name).read_bytes() == (again / name).read_bytes(), name


def test_flat_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# small run\nkind = null\nn = 60\nd = 2\nseed = 9\n")
    code, out = _run(tmp_path, "g", "generate", "--config", str(cfg))
    assert code == 0
    echo = json.loads((out / "config.json").read_text())
    assert echo["kind"] == "null" and echo["seed"] == 9


def test_csvs_parse_back(tmp_path):
    _, out = _run(tmp_path, "c", "compare", "--set", "n=400", *FAST)
    with open(out / "predictions.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == _summary(out)["results"]["test_n"]
    assert all(np.isfinite(float(r["pred_ae"])) for r in rows)


def test_bv_regime_leaf_rules(tmp_path):
    _, out = _run(tmp_path, "b", "bv", "--set", "n=300", "--set", "R=3", "--set", "num_trees=5",
                  "--set", "ae_leaf=80", "--set", "he_leaf=40", "--set", 'regimes=["AEMatched","HEMatched"]')
    regimes = _summary(out)["results"]["regimes"]
    assert regimes["AEMatched"]["leaf_sizes"] == {"AE": 80, "HE": 40}
    assert regimes["HEMatched"]["leaf_sizes"] == {"AE": 80, "HE": 40}
    assert cli.DEFAULTS["bv"]["R"] == 600


def test_learning_curve_rows_and_baseline(tmp_path):
    _, out = _run(tmp_path, "lc", "learning-curve", "--set", "n=10000", "--set", "sizes=[1000,2000]",
                  "--set", "num_trees=10", "--set", "ae_grid=[80]", "--set", "he_grid=[40]", "--set", "k_folds=2")
    with open(out / "folds.csv") as fh:
        rows = list(csv.DictReader(fh))
    for mode in ("AE", "HE"):
        assert sorted({r["size"] for r in rows if r["mode"] == mode}) == ["1000", "2000"]
    curve = _summary(out)["results"]["curve"]
    assert len(curve) == 2
    assert all(abs(c["s2z_ATE"]) < 0.01 for c in curve)


def test_paired_interval_matches_t_distribution():
    d = np.array([1.0, 1.1, 0.9, 1.05, 0.95])
    mean, low, high = paired_t_interval(d)
    ref = stats.t.interval(0.95, d.size - 1, loc=d.mean(), scale=stats.sem(d))
    assert (low, high) == pytest.approx(ref)
    assert low > 0
    _, low, high = paired_t_interval([0.5, -0.4, 0.1, -0.3, 0.2])
    assert low < 0 < high


@pytest.mark.parametrize(
    "args",
    [
        ["compare", "--set", "bogus=1"],
        ["compare", "--set", "alpha=2"],
        ["compare", "--set", "n=abc"],
        ["learning-curve", "--set", "n=300", "--set", "sizes=[1000]"],
        ["stylized-mc", "--set", "m=1"],
        ["generate", "--threads", "0"],
    ],
)
def test_parameter_errors_exit_2(tmp_path, args):
    assert cli.main([*args, "--out", str(tmp_path / "o")]) == 2


def test_bv_on_csv_exit_2(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x0,t,y\n" + "".join(f"{i},{i % 2},{i}\n" for i in range(20)))
    assert cli.main(["bv", "--set", f"csv={p}", "--out", str(tmp_path / "o")]) == 2


def test_schema_error_exit_2(tmp_path, capsys):
    p = tmp_path / "d.csv"
    p.write_text("x0,t,y\n1,2,3\n")
    assert cli.main(["compare", "--set", f"csv={p}", "--out", str(tmp_path / "o")]) == 2
    assert "row 1" in capsys.readouterr().err


def test_degenerate_data_exit_3(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x0,t,y\n" + "".join(f"{i},1,{i}\n" for i in range(60)))
    assert cli.main(["lasso-compare", "--set", f"csv={p}", "--out", str(tmp_path / "o")]) == 3
    assert cli.main(["compare", "--set", f"csv={p}", "--out", str(tmp_path / "o")]) == 3


def test_convergence_error_exit_4(tmp_path, monkeypatch):
    def fail(cfg, seed, ds=None):
        raise ConvergenceError("no convergence", 1.0)

    monkeypatch.setattr(experiments, "run_lasso", fail)
    assert cli.main(["lasso-compare", "--out", str(tmp_path / "o")]) == 4
