import csv
import json

import pytest

from sqglab import cli
from sqglab.solver import DiagnosticsRecord

SMALL = """
[scenario:small-decay]
module = solver
n_modes = 8,8
dt = 1e-3
t_end = 0.05
cadence = 10
initial_data = mode_sum
modes = 0:1.0
threshold.max_energy_residual = <= 1e-6
artifacts = diagnostics.csv, theta_final.bin

[scenario:small-picard]
module = picard
n_modes = 8,8
initial_data = mode_sum
modes = 0:0.1
T = 0.05
threshold.rho = < 1
"""


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.setenv("SQG_OUT_DIR", str(tmp_path / "out"))
    return tmp_path / "out"


def write(tmp_path, text, name="s.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_seed_fan_out_is_deterministic():
    assert cli.seed_for(3, "solver") == cli.seed_for(3, "solver")
    assert cli.seed_for(3, "solver") != cli.seed_for(3, "picard")
    assert cli.seed_for(3, "solver") != cli.seed_for(4, "solver")


def test_parse_threshold():
    assert cli.parse_threshold("x", "<= 1e-6") == ("<=", 1e-6)
    assert cli.parse_threshold("x", ">0.98") == (">", 0.98)
    with pytest.raises(cli.ConfigError):
        cli.parse_threshold("x", "about 3")


def test_scenario_validation():
    with pytest.raises(cli.ConfigError, match="thresholds"):
        cli.Scenario("a", "solver").validate()
    with pytest.raises(cli.ConfigError, match="module"):
        cli.Scenario("a", "teleport", thresholds={"x": ("<", 1.0)}).validate()
    names = [s.name for s in cli.builtin_scenarios()]
    assert names[:12] == [f"criterion-{k:02d}" for k in range(1, 13)] and "decay-w1" in names


def test_scenarios_from_ini_errors(tmp_path):
    with pytest.raises(cli.ConfigError):
        cli.scenarios_from_ini(cli.read_ini(write(tmp_path, "[other]\na = 1\n")))
    with pytest.raises(cli.ConfigError, match="module"):
        cli.scenarios_from_ini(cli.read_ini(write(tmp_path, "[scenario:x]\nthreshold.a = < 1\n")))


def test_run_scenarios_and_report(tmp_path, out):
    scens = cli.scenarios_from_ini(cli.read_ini(write(tmp_path, SMALL)))
    reps = cli.run_suite(scens, out)
    assert all(r.passed for r in reps), [r.results for r in reps]
    path = cli.emit_report(reps)
    first = path.read_bytes()
    summary = json.loads(first)
    assert summary["n_pass"] == 2 and summary["n_fail"] == 0
    assert "2 passed, 0 failed" in (out / "summary.txt").read_text()
    with open(out / "small-decay" / "diagnostics.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == DiagnosticsRecord.FIELDS and len(rows) > 2
    # rerun, serial and parallel, gives the same bytes
    cli.emit_report(cli.run_suite(scens, out, parallel=True))
    assert path.read_bytes() == first


def test_unknown_metric_is_config_error(tmp_path, out):
    s = cli.Scenario("m", "picard", {"n_modes": "8,8", "initial_data": "mode_sum", "modes": "0:0.1"},
                     (), {"nonsense": ("<", 1.0)})
    with pytest.raises(cli.ConfigError, match="nonsense"):
        cli.run_scenario(s, out)


def test_exit_codes(tmp_path, out, capsys):
    good = write(tmp_path, "[run]\nn_modes = 8,8\ndt = 1e-3\nt_end = 0.02\ncadence = 5\n", "g.ini")
    assert cli.main(["run", "--config", good]) == cli.EXIT_PASS
    strict = write(tmp_path, "[run]\nn_modes = 8,8\ndt = 1e-3\nt_end = 0.02\n[thresholds]\nlinf_end = < 0\n", "f.ini")
    assert cli.main(["run", "--config", strict]) == cli.EXIT_FAIL
    bad = write(tmp_path, "[run]\nn_modes = 8,8\ndt = fast\n", "b.ini")
    assert cli.main(["run", "--config", bad]) == cli.EXIT_CONFIG
    assert "dt" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == cli.EXIT_CONFIG
    cfl = write(tmp_path, "[run]\nn_modes = 8,8\ndt = 5.0\nt_end = 10\ninitial_data = mode_sum\n"
                          "modes = 0:50,1:50\n", "c.ini")
    assert cli.main(["run", "--config", cfl]) == cli.EXIT_NUMERIC
    assert cli.main(["check", "99"]) == cli.EXIT_CONFIG


def test_geometry_and_kernels_commands(out, capsys):
    assert cli.main(["geometry", "--h", "0.02"]) == cli.EXIT_PASS
    assert (out / "geometry" / "coefficients.bin").exists()
    assert cli.main(["kernels", "--suite", "normalization"]) == cli.EXIT_PASS
    d = json.loads((out / "kernels" / "normalization.json").read_text())
    assert all(c["value"] <= c["tolerance"] for c in d["certificates"])


def test_check_single_criterion(out, capsys):
    assert cli.main(["check", "5"]) == cli.EXIT_PASS
    assert capsys.readouterr().out.startswith("PASS criterion 5")
