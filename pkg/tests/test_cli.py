"""Command line: exit codes, artifacts, configuration and verification."""

import json
import math
import os
import subprocess
import sys

import pytest

from rfdelay import cli
from rfdelay.history import InitialCondition, PiecewisePoly


def run(tmp_path, *argv):
    return cli.main(list(argv) + ["--out-dir", str(tmp_path)])


def test_simulate_frozen_writes_constant_csv(tmp_path, capsys):
    assert run(tmp_path, "simulate", "--system", "catalog:frozen", "--T", "1", "--ic", "const:2") == 0
    rows = (tmp_path / "simulate.trajectory.csv").read_text().strip().splitlines()
    assert rows[0] == "t,x1"
    assert {r.split(",")[1] for r in rows[1:]} == {"2"} or all(float(r.split(",")[1]) == 2.0 for r in rows[1:])
    diag = json.loads((tmp_path / "simulate.diagnostics.json").read_text())
    assert diag["status"] == "Completed" and diag["T_reached"] == 1.0
    assert capsys.readouterr().out.startswith("Completed")


def test_simulate_blowup_exit_code(tmp_path):
    code = run(tmp_path, "simulate", "--system", "catalog:expgrow", "--T", "5", "--blowup", "10", "--out", "eg")
    assert code == 3
    diag = json.loads((tmp_path / "eg.diagnostics.json").read_text())
    assert diag["escape_estimate"] == pytest.approx(math.log(10.0), abs=1e-9)


SINGULAR = """
[system]
name = singular
n = 1
p = 1
delta = 1.0
taus = 0, 1.0

[g]
g1 = 1 / (1 - x[1])

[kernel]
type = linear
K_1_1 = 0
M = 0
"""


def test_simulate_solver_failure_exit_code(tmp_path):
    # x = 1 - sqrt(1 - 2t) stays bounded while its slope blows up at t = 1/2
    path = tmp_path / "singular.ini"
    path.write_text(SINGULAR)
    assert run(tmp_path, "simulate", "--system", str(path), "--T", "1", "--ic", "const:0") == 4
    diag = json.loads((tmp_path / "simulate.diagnostics.json").read_text())
    assert diag["status"] == "StepFloor" and diag["T_reached"] < 0.5


def test_outputs_are_byte_reproducible(tmp_path):
    args = ["simulate", "--system", "catalog:affine_mixed", "--T", "2", "--ic", "step:0,1", "--dense", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(args + ["--out-dir", str(a)]) == 0
    assert cli.main(args + ["--out-dir", str(b)]) == 0
    for name in ("simulate.trajectory.csv", "simulate.diagnostics.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.mark.parametrize("argv", [
    ["simulate", "--system", "catalog:nope", "--T", "1"],
    ["simulate", "--system", "catalog:frozen"],
    ["simulate", "--system", "catalog:frozen", "--T", "0"],
    ["simulate", "--system", "catalog:frozen", "--T", "1", "--ic", "step:1"],
    ["simulate", "--system", "catalog:frozen", "--T", "1", "--degree", "12"],
    ["simulate", "--system", "catalog:frozen", "--T", "1", "--tol", "-1"],
    ["simulate", "--bogus"],
    ["reach", "--system", "catalog:frozen", "--T", "1", "--R", "-1"],
    ["converge", "--system", "catalog:frozen", "--T", "1", "--k-list", "4,x"],
    ["verify", "--only", "no-such-check"],
    [],
])
def test_usage_errors_write_nothing(tmp_path, argv, capsys):
    out = tmp_path / "out"
    assert cli.main(argv + ["--out-dir", str(out)]) == 2
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_ic_from_json_file(tmp_path):
    ic = InitialCondition(0.5, PiecewisePoly.piecewise_constant([-1.0, -0.25, 0.0], [[1.0], [0.5]]))
    path = tmp_path / "ic.json"
    path.write_text(json.dumps(ic.to_record()))
    assert run(tmp_path, "simulate", "--system", "catalog:decay_discrete", "--T", "1", "--ic", str(path)) == 0
    last = (tmp_path / "simulate.trajectory.csv").read_text().strip().splitlines()[-1]
    # x(1) = 0.5 - (0.75 * 1 + 0.25 * 0.5)
    assert float(last.split(",")[1]) == pytest.approx(-0.375, abs=1e-13)


def test_config_file_defaults_and_flag_override(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[common]\nsystem = catalog:expgrow\nT = 1\n\n[simulate]\nout = from_cfg\nic = const:2\n")
    assert run(tmp_path, "simulate", "--config", str(ini)) == 0
    diag = json.loads((tmp_path / "from_cfg.diagnostics.json").read_text())
    assert diag["final_state"][0] == pytest.approx(2.0 * math.e, rel=1e-12)
    assert run(tmp_path, "simulate", "--config", str(ini), "--T", "2", "--out", "flag") == 0
    diag = json.loads((tmp_path / "flag.diagnostics.json").read_text())
    assert diag["T_reached"] == 2.0
    bad = tmp_path / "bad.ini"
    bad.write_text("[simulate]\nwhatever = 1\n")
    assert run(tmp_path, "simulate", "--config", str(bad)) == 2


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RFDELAY_OUT_DIR", str(tmp_path / "env"))
    assert cli.main(["simulate", "--system", "catalog:frozen", "--T", "1"]) == 0
    assert (tmp_path / "env" / "simulate.trajectory.csv").exists()


def test_reach_command(tmp_path, capsys):
    code = run(tmp_path, "reach", "--system", "catalog:expgrow", "--T", "1", "--R", "1", "--N", "6",
               "--threads", "2")
    assert code == 0
    rep = json.loads((tmp_path / "reach.json").read_text())
    assert rep["sup_over_all"] == pytest.approx(math.e, abs=1e-6)
    assert len((tmp_path / "reach.csv").read_text().strip().splitlines()) == 7
    assert run(tmp_path, "reach", "--system", "catalog:quadratic_blowup", "--T", "1", "--R", "2",
               "--N", "2") == 3


def test_converge_identical_sequence(tmp_path):
    assert run(tmp_path, "converge", "--system", "catalog:frozen", "--T", "1") == 0
    for name in ("converge_weakstar.csv", "converge_weakstar.long.csv", "converge_weakstar.json"):
        assert (tmp_path / name).exists()


def test_converge_affine_mixed_weakstar(tmp_path):
    code = run(tmp_path, "converge", "--system", "catalog:affine_mixed", "--T", "5", "--R", "2",
               "--k-list", "4,8,16,32,64,128")
    assert code == 0
    assert json.loads((tmp_path / "converge_weakstar.json").read_text())["verdict"] == "converging"


def test_converge_square_delay_stalls(tmp_path, capsys):
    argv = ["converge", "--system", "catalog:square_delay", "--T", "1", "--ic", "const:0", "--amplitude", "1"]
    assert run(tmp_path, *argv) == 5
    assert run(tmp_path, *argv, "--expect-stalled") == 0
    tab = json.loads((tmp_path / "converge_weakstar.json").read_text())
    assert tab["verdict"] == "stalled" and tab["gap"] == pytest.approx(1.0, abs=1e-12)


def test_converge_continuous_mode(tmp_path):
    code = run(tmp_path, "converge", "--system", "catalog:decay_discrete", "--T", "2", "--ic", "step:0,1",
               "--mode", "continuous", "--k-list", "4,16,256")
    assert code == 0


def test_verify_subset_and_json(tmp_path, capsys):
    names = "enumeration-bijectivity,probe-normalisation,segment-round-trip,1-method-of-steps-oracle"
    assert run(tmp_path, "verify", "--only", names) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines == [f"PASS {n}" for n in names.split(",")]
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["passed"] and len(rep["checks"]) == 4
    assert "seconds" not in json.dumps(rep)


def test_verify_notices_a_corrupted_enumeration(tmp_path, capsys):
    code = run(tmp_path, "verify", "--only", "enumeration-bijectivity", "--inject-fault", "probe-enumeration")
    assert code == 1
    assert "FAIL enumeration-bijectivity" in capsys.readouterr().out
    # the fault is undone afterwards
    assert run(tmp_path, "verify", "--only", "enumeration-bijectivity") == 0


def test_verify_with_tightened_tolerance(tmp_path):
    names = "1-method-of-steps-oracle,2-distributed-oracle,contraction-certificate,10-parameter-insensitivity"
    assert run(tmp_path, "verify", "--only", names, "--tol", "1e-13") == 0


def test_all_properties_pass(tmp_path):
    from rfdelay import checks
    assert run(tmp_path, "verify", "--only", ",".join(checks.PROPERTIES)) == 0


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rfdelay.cli", "simulate", "--system", "catalog:frozen",
                           "--T", "1", "--out-dir", str(tmp_path)], capture_output=True, text=True,
                          env=dict(os.environ))
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("Completed")
