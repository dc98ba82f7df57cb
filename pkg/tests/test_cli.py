import json

import numpy as np
import pytest

from parabolic_mhd.cli import main


def test_kernel_eval(capsys):
    assert main(["kernel", "eval", "--k", "1", "--point", "1,0,0,1"]) == 0
    vals = [float(v) for v in capsys.readouterr().out.strip().split(",")]
    assert len(vals) == 32 and vals[4] == -0.008741411958788735


@pytest.mark.parametrize(
    "argv",
    [
        ["kernel", "eval", "--k", "-1", "--point", "1,0,0,1"],
        ["kernel", "eval", "--k", "1", "--point", "1,0,0"],
        ["eisenstein", "plan", "--tol", "-1"],
        ["eisenstein", "eval", "--p", "2", "--l", "3"],
        ["solve", "--config", "does-not-exist.cfg"],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["kernel"])
    assert exc.value.code == 2


def test_kernel_at_origin_is_numerical_failure(capsys):
    assert main(["kernel", "eval", "--k", "1", "--point", "0,0,0,0"]) == 1


def test_eisenstein_commands(capsys, tmp_path):
    assert main(["eisenstein", "plan", "--tol", "1e-8", "--r", "0.5", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "M,bound" and float(out[1].split(",")[1]) <= 1e-8
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "eisenstein plan" and manifest["summary"]["passed"]
    assert main(["eisenstein", "eval", "--p", "3", "--l", "1", "--M", "2", "--point", "0.1,0.2,0.3,0.5"]) == 0
    assert len(capsys.readouterr().out.split(",")) == 32


def test_check_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["check", "--grids", "3", "4", "--out", str(a)]) in (0, 1)
    main(["check", "--grids", "3", "4", "--out", str(b)])
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
    rows = (a / "report.csv").read_text().splitlines()
    assert rows[0] == "test,grid,residual,ratio,result"
    assert json.loads((a / "manifest.json").read_text())["outputs"] == ["report.csv"]


def test_solve_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("grid.n = 4\ngrid.nt = 4\ntime.T = 0.125\ndata.B0 = 0.3, 0.2, 0.1\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert {p.name for p in (tmp_path / "o").iterdir()} == {"state.csv", "history.csv", "manifest.json"}
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["summary"]["converged"] and m["config"]["B0"] == [0.3, 0.2, 0.1]
    state = np.loadtxt(tmp_path / "o" / "state.csv", delimiter=",", skiprows=1)
    assert np.allclose(state[:, 11:14], [0.3, 0.2, 0.1], atol=1e-12)


def test_solve_nonconvergence_exit_1(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("grid.n = 4\ngrid.nt = 4\ntime.T = 0.125\ndata.B0 = 1, 0, 0\ndata.perturbation = 0.1\nsolver.max_outer = 1\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 1
