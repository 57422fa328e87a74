import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from tvadhesion.cli import (ENV_OUT, EXIT_CHECKS, EXIT_CONFIG, EXIT_OK, EXIT_STEP, STEP_COLUMNS,
                            ladder_values, main)
from tvadhesion.config import load_config
from tvadhesion.state import ConfigError

FIXTURES = Path(__file__).parent / "fixtures"
REFERENCE = FIXTURES / "reference.cfg"

DECOUPLED = """\
name = decoupled
mesh.nx = 3
mesh.ny = 2
material.k = 0
material.lambda = 0
material.gamma = 0
kernel.type = none
solver.frozen = u, chi
solver.rho = 0
solver.tol = 1e-12
init.theta = 1.0
init.theta_s = 0.7
init.chi = 0.5
load.h = 2.0
time.T = 1.0
time.K = 8
output.dump_times = 1.0
output.fields = theta, theta_s
"""

STATIONARY = """\
name = stationary
mesh.nx = 3
mesh.ny = 2
material.lambda = 0
solver.frozen = u
init.theta = 1.0
init.theta_s = 1.0
init.chi = 0.5
time.K = 4
"""


def _write(tmp_path, text, name="s.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_decoupled_heat_final_field(tmp_path):
    cfg = _write(tmp_path, DECOUPLED)
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    d = tmp_path / "o" / "decoupled"
    rows = _rows(d / "fields" / "theta_k00008.csv")
    np.testing.assert_allclose([float(r["theta"]) for r in rows], 3.0, rtol=0, atol=1e-10)
    rows = _rows(d / "fields" / "theta_s_k00008.csv")
    np.testing.assert_allclose([float(r["theta_s"]) for r in rows], 0.7, rtol=0, atol=1e-10)
    steps = _rows(d / "steps.csv")
    assert list(steps[0]) == list(STEP_COLUMNS) and len(steps) == 8
    s = json.loads((d / "summary.json").read_text())
    assert all(s["flags"].values())


def test_stationary_scenario_has_zero_residuals(tmp_path):
    cfg = _write(tmp_path, STATIONARY)
    assert main(["run", cfg, "--out", str(tmp_path)]) == EXIT_OK
    steps = _rows(tmp_path / "stationary" / "steps.csv")
    for r in steps:
        assert float(r["energy_residual"]) == 0.0
        assert int(r["iterations"]) == 0
        for col in ("diss_rho_u", "diss_rho_chi", "exchange", "gap", "work_h", "work_ell", "work_F"):
            assert float(r[col]) == 0.0


def _close(a, b, path=""):
    if isinstance(a, dict):
        assert set(a) == set(b), path
        for k in a:
            _close(a[k], b[k], f"{path}.{k}")
    elif isinstance(a, list):
        assert len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            _close(x, y, f"{path}[{i}]")
    elif isinstance(a, float) and not isinstance(b, bool):
        assert b == pytest.approx(a, rel=1e-8, abs=1e-12), path
    else:
        assert a == b, path


def test_reference_matches_golden_file(tmp_path):
    assert main(["run", str(REFERENCE), "--out", str(tmp_path)]) == EXIT_OK
    got = json.loads((tmp_path / "reference" / "summary.json").read_text())
    golden = json.loads((FIXTURES / "reference.golden.json").read_text())
    assert got["config_hash"] == golden["config_hash"] == load_config(REFERENCE).text_hash
    _close(golden, got)


def test_reference_agrees_with_newton_oracle_on_tiny_mesh(tmp_path):
    text = REFERENCE.read_text().replace("mesh.nx = 8", "mesh.nx = 2").replace("mesh.ny = 8", "mesh.ny = 1")
    text = text.replace("time.K = 32", "time.K = 4") + "solver.newton_check = true\n"
    assert main(["run", _write(tmp_path, text), "--out", str(tmp_path)]) == EXIT_OK
    s = json.loads((tmp_path / "reference" / "summary.json").read_text())
    assert s["flags"]["oracle_agreement"]


def _tree(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_reruns_are_byte_identical(tmp_path):
    text = REFERENCE.read_text().replace("mesh.nx = 8", "mesh.nx = 4").replace("mesh.ny = 8", "mesh.ny = 4")
    text = text.replace("time.K = 32", "time.K = 8")
    cfg = _write(tmp_path, text)
    for o in ("a", "b"):
        assert main(["run", cfg, "--out", str(tmp_path / o), "--seed", "0"]) == EXIT_OK
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a.keys() == b.keys() and len(a) > 3
    assert a == b


def test_output_dir_from_environment(tmp_path, monkeypatch):
    cfg = _write(tmp_path, DECOUPLED)
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "env"))
    assert main(["run", cfg]) == EXIT_OK
    assert (tmp_path / "env" / "decoupled" / "summary.json").exists()
    assert main(["run", cfg, "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert (tmp_path / "flag" / "decoupled" / "summary.json").exists()


def test_check_and_exit_codes(tmp_path, capsys):
    assert main(["check", str(REFERENCE)]) == EXIT_OK
    assert load_config(REFERENCE).text_hash in capsys.readouterr().out
    bad = _write(tmp_path, "load.h = -1\n", "bad.cfg")
    assert main(["check", bad]) == EXIT_CONFIG
    assert "cond-h" in capsys.readouterr().err
    assert main(["check", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    assert main(["run", str(REFERENCE), "--threads", "0"]) == EXIT_CONFIG
    text = DECOUPLED.replace("material.k = 0", "material.k = 1") \
        .replace("solver.frozen = u, chi", "solver.frozen = u\nsolver.max_iter = 1\nsolver.max_halvings = 0")
    assert main(["run", _write(tmp_path, text), "--out", str(tmp_path)]) == EXIT_STEP
    assert "step 1" in capsys.readouterr().err


def test_failed_checks_exit_code(tmp_path, monkeypatch):
    import tvadhesion.cli as cli
    monkeypatch.setattr(cli, "run_scenario", lambda sc, out, seed=0: {"flags": {"energy_inequality": False}})
    assert main(["run", _write(tmp_path, DECOUPLED), "--out", str(tmp_path)]) == EXIT_CHECKS


def test_single_level_ladder_rejected(tmp_path):
    sc = load_config(REFERENCE)
    with pytest.raises(ConfigError):
        ladder_values(sc, "tau", 1)
    assert main(["sweep", str(REFERENCE), "--ladder", "tau", "--levels", "1", "--out", str(tmp_path)]) \
        == EXIT_CONFIG
    assert ladder_values(sc, "tau", 3) == [32, 64, 128]
    assert ladder_values(sc, "rho", 3) == pytest.approx([1e-2, 1e-3, 1e-4])


def _small_reference(tmp_path):
    text = REFERENCE.read_text().replace("mesh.nx = 8", "mesh.nx = 4").replace("mesh.ny = 8", "mesh.ny = 4")
    return _write(tmp_path, text.replace("time.K = 32", "time.K = 4"), "small.cfg")


def test_tau_sweep_rates_approach_one(tmp_path):
    cfg = _small_reference(tmp_path)
    assert main(["sweep", cfg, "--ladder", "tau", "--levels", "4", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "reference-tau" / "sweep.csv")
    assert [int(r["value"]) for r in rows] == [4, 8, 16, 32]
    for f in ("theta", "u", "theta_s", "chi"):
        assert 0.75 <= float(rows[-1][f"rate_{f}"]) <= 1.25
    rep = json.loads((tmp_path / "reference-tau" / "sweep.json").read_text())
    assert rep["all_monotone"] and rep["energy_uniform"]


def test_rho_sweep_energy_uniform(tmp_path):
    cfg = _small_reference(tmp_path)
    assert main(["sweep", cfg, "--ladder", "rho", "--levels", "3", "--out", str(tmp_path),
                 "--threads", "2"]) == EXIT_OK
    rep = json.loads((tmp_path / "reference-rho" / "sweep.json").read_text())
    assert rep["energy_uniform"] and rep["all_monotone"]
    assert all(math.isfinite(x) for x in rep["sup_energy"])
