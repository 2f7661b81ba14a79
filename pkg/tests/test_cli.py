import csv
import json

import numpy as np
import pytest

from amlape import cli, config
from amlape.balance import NumericError
from amlape.simulate import RECORD_COLUMNS, SUMMARY_COLUMNS, Record, SimReport


@pytest.fixture
def toy_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 3))
    y = X @ [1.0, 0.5, 0.0] + 0.1 * rng.normal(size=10)
    path = tmp_path / "toy.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "a", "b", "c"])
        for i in range(10):
            w.writerow([float(y[i]), *map(float, X[i])])
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def estimate_args(toy_csv, out, *extra):
    return ["estimate", "--input", toy_csv, "--response", "y", "--focal", "a", "--link", "identity",
            "--folds", 2, "--lambda", 0.05, "--output", out, *extra]


def test_toy_identity_estimate(toy_csv, tmp_path):
    out = tmp_path / "o.json"
    assert run(*estimate_args(toy_csv, out)) == 0
    doc = json.loads(out.read_text())
    assert doc["schema_version"] == config.SCHEMA_VERSION
    aml = doc["result"]["aml"]
    assert aml["tau_hat"] == pytest.approx(aml["plugin_part"] + aml["augmentation_part"], abs=1e-14)
    assert aml["folds"] == 2 and len(aml["influence"]) == 10
    assert aml["ci_low"] < aml["tau_hat"] < aml["ci_high"]


def test_rerun_is_byte_identical(toy_csv, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(*estimate_args(toy_csv, a, "--estimator", "all")) == 0
    assert run(*estimate_args(toy_csv, b, "--estimator", "all")) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "time" not in a.read_text()


def test_config_file_mirrors_flags(toy_csv, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'input = "{toy_csv}"\nresponse = "y"\nfocal = "a"\nlink = "identity"\n'
                   f'folds = 2\nlambda = 0.05\n')
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run("estimate", "--config", cfg, "--output", a) == 0
    assert run(*estimate_args(toy_csv, b)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('alpha = 0.1\nseed = 4\n')
    merged = config.load_file(cfg)
    merged.update(alpha=0.2, command="oracle")
    c = config.build(merged)
    assert (c.alpha, c.seed) == (0.2, 4)


def test_missing_focal_column_exits_2(toy_csv, tmp_path, capsys):
    code = run("estimate", "--input", toy_csv, "--response", "y", "--focal", "nope")
    assert code == 2
    assert "nope" in capsys.readouterr().err


def test_errors_are_aggregated(toy_csv, capsys):
    code = run("estimate", "--input", toy_csv, "--response", "y", "--focal", "zz",
               "--link", "bogus", "--alpha", 3, "--folds", 0)
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 4


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("folds = 2\nwibble = 1\n")
    assert run("oracle", "--config", cfg) == 2


def test_usage_error_exits_2():
    assert run("nonsense") == 2
    assert run("estimate", "--folds", "x") == 2


def test_numerical_failure_exits_3(toy_csv, monkeypatch):
    def boom(*a, **k):
        raise NumericError("singular")
    monkeypatch.setattr(cli, "estimate_ape", boom)
    assert run(*estimate_args(toy_csv, "/dev/null")) == 3


def test_build_rejects_bad_types():
    with pytest.raises(config.ConfigError) as exc:
        config.build({"command": "oracle", "folds": "two", "tol": -1.0, "designs": "flat"})
    assert len(exc.value.problems) == 3


def test_simulate_outputs(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text('designs = ["uncorrelated"]\nn_grid = [40]\nreplications = 2\n'
                   'oracle_draws = 100000\nestimator = "all"\ncv_folds = 3\n')
    out = tmp_path / "sim.csv"
    assert run("simulate", "--config", cfg, "--output", out) == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == RECORD_COLUMNS
    assert len(rows) == 1 + 2 * 3
    with open(tmp_path / "sim_summary.csv", newline="") as fh:
        summary = list(csv.reader(fh))
    assert tuple(summary[0]) == SUMMARY_COLUMNS
    first = out.read_bytes()
    assert run("simulate", "--config", cfg, "--output", out) == 0
    assert out.read_bytes() == first


def _fake_report(errors):
    recs = [Record("uncorrelated", 40, "aml", i, float("nan") if e else 0.1, error=e)
            for i, e in enumerate(errors)]
    return SimReport(recs, {("uncorrelated", 40): (0.0, 0.0, 100000)}, [])


def test_simulate_partial_and_total_failure(tmp_path, monkeypatch, caplog):
    out = tmp_path / "sim.csv"
    args = ["simulate", "--designs", "uncorrelated", "--n-grid", 40, "--output", out]
    monkeypatch.setattr(cli, "run_study", lambda cfg: _fake_report(["", "NumericError: x"]))
    assert run(*args) == 0
    assert "1 of 2" in caplog.text
    monkeypatch.setattr(cli, "run_study", lambda cfg: _fake_report(["NumericError: x"] * 2))
    assert run(*args) == 3


def test_oracle_command(capsys):
    assert run("oracle", "--designs", "uncorrelated", "--n-grid", 20, "--oracle-draws", 100000) == 0
    doc = json.loads(capsys.readouterr().out)
    (row,) = doc["result"]
    assert row["p"] == 40 and row["tau"] < 0


def test_decompose_command(capsys):
    assert run("decompose", "--designs", "uncorrelated", "--n-grid", 40, "--cv-folds", 3) == 0
    (row,) = json.loads(capsys.readouterr().out)["result"]
    for f in row["folds"]:
        assert f["total"] == pytest.approx(f["linear_term"] + f["noise_term"] + f["remainder"], abs=1e-12)
        assert abs(f["linear_term"]) <= f["holder_bound"] * (1 + 1e-9)
