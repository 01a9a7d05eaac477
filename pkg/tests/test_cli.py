import json
import subprocess
import sys

import pytest

from mtbubble.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_NUMERIC, EXIT_OK, main


@pytest.fixture(autouse=True)
def fixed_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


def test_green_writes_json_csv_png(tmp_path, capsys):
    assert main(["green", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "tau0=0.7548646243" in out
    doc = json.loads((tmp_path / "green.json").read_text())
    assert doc["command"] == "green" and doc["tool"] == "mtbubble"
    assert doc["timestamps"]["started"] == "2023-11-14T22:13:20Z"
    assert doc["reports"]["geometry"]["evaluator_gap"] < 1e-10
    assert (tmp_path / "green_table.csv").read_text().startswith("tau,f1,f2,f3")
    assert (tmp_path / "green_half_periods.png").stat().st_size > 0


def test_output_is_deterministic(tmp_path):
    main(["green", "--out", str(tmp_path), "--seed", "3"])
    first = (tmp_path / "green.json").read_bytes()
    main(["green", "--out", str(tmp_path), "--seed", "3"])
    assert (tmp_path / "green.json").read_bytes() == first


def test_catalog_counts(tmp_path, capsys):
    assert main(["catalog", "--out", str(tmp_path)]) == EXIT_OK
    assert "9 families" in capsys.readouterr().out
    assert main(["catalog", "--out", str(tmp_path), "--tau", "2"]) == EXIT_OK
    assert "3 families" in capsys.readouterr().out
    assert (tmp_path / "catalog_branches.png").exists()


def test_config_file_and_errors(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nperiods = p3\nbranches = diagonal\n")
    assert main(["ansatz", "--config", str(ini), "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "ansatz_p3_diagonal.bin").exists()
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\ngrid = 15\n")
    assert main(["green", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["green", "--tau", "-1", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["green", "--config", str(tmp_path / "missing.ini"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_residual_prints_slope(tmp_path, capsys):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nperiods = p3\nbranches = diagonal\nlambda_n = 3\n")
    assert main(["residual", "--config", str(ini), "--out", str(tmp_path)]) == EXIT_OK
    assert "fitted slope" in capsys.readouterr().out
    assert (tmp_path / "residual_p3_diagonal.csv").exists()


def test_solve_reports_numerical_failure(tmp_path):
    # pair bubbles are far below grid resolution at lambda = 8
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nperiods = p1\nbranches = pair\n")
    assert main(["solve", "--config", str(ini), "--out", str(tmp_path)]) == EXIT_NUMERIC
    doc = json.loads((tmp_path / "solve.json").read_text())
    assert doc["reports"]["summary"]["converged"] == 0


def test_verify_exit_codes(tmp_path, capsys):
    assert main(["verify", "--only", "1,2", "--out", str(tmp_path)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("[PASS]  1")
    rc = main(["verify", "--only", "10", "--out", str(tmp_path)])
    line = capsys.readouterr().out.splitlines()[0]
    assert rc == (EXIT_FAIL if line.startswith("[FAIL]") else EXIT_OK)
    assert (tmp_path / "kernel_spectrum.png").exists()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mtbubble.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("green", "catalog", "ansatz", "residual", "solve", "verify"):
        assert cmd in r.stdout
