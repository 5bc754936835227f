from pathlib import Path

import numpy as np
import pytest

from graphspde import fem
from graphspde.cli import main
from graphspde.graph import load_graph

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

HEAT = """
experiment = "fem-rate"
graph = { source = "builtin", name = "interval" }
coefficients = { source = "constant", alpha = 1.0, beta = 1.0 }
h_list = [0.125, 0.0625, 0.03125]
dt_rule = "h2"
u0 = { kind = "cos", m = 1.0 }
T = 0.05
reference = "closed-form"
criteria = { slope_min = %s }
"""


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_fem_rate_exit_codes(tmp_path, capsys):
    good = write(tmp_path, HEAT % "1.9", "good.toml")
    assert main(["fem-rate", good, "--out", str(tmp_path / "a")]) == 0
    assert "fem-rate: PASS" in capsys.readouterr().out
    bad = write(tmp_path, HEAT % "2.5", "bad.toml")
    assert main(["fem-rate", bad, "--out", str(tmp_path / "b")]) == 1
    assert "fem-rate: FAIL" in capsys.readouterr().out
    rows = (tmp_path / "a" / "fem-rate.csv").read_text().splitlines()
    assert rows[0] == "experiment,level,param,error,stderr,seeds,wallclock_s"
    assert len(rows) == 4


def test_config_errors_exit_two(tmp_path, capsys):
    p = write(tmp_path, (HEAT % "1.9").replace("h_list = [0.125, 0.0625, 0.03125]", "h_list = [0.125]"))
    assert main(["fem-rate", p, "--out", str(tmp_path)]) == 2
    p = write(tmp_path, (HEAT % "1.9") + "colour = 1\n", "c2.toml")
    assert main(["fem-rate", p, "--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_rerun_is_byte_identical(tmp_path):
    p = write(tmp_path, HEAT % "1.9")
    main(["fem-rate", p, "--out", str(tmp_path / "1")])
    main(["fem-rate", p, "--out", str(tmp_path / "2")])
    for name in ("fem-rate.csv", "fem-rate_summary.csv"):
        assert (tmp_path / "1" / name).read_bytes() == (tmp_path / "2" / name).read_bytes()


def test_validate_command(tmp_path, capsys):
    assert main(["validate", str(CONFIGS / "validate.toml"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    for name in ("coercivity", "kl_bound", "symmetry", "interpolation_inequality"):
        assert f"{name}: PASS" in out
    assert (tmp_path / "validate_summary.csv").exists()


def test_build_graph_command(tmp_path):
    cfg = write(tmp_path, """
experiment = "validate"
graph = { source = "hamiltonian", name = "double-well" }
coefficients = { source = "tabulated", samples = 16, span = 2.0 }
R = 2.0
out = "graphs"
""")
    assert main(["build-graph", cfg]) == 0
    out = tmp_path / "graphs"
    g = load_graph(out / "graph.toml")
    assert len(g.edges) == 3
    assert load_graph(out / "graph_truncated.toml").compact
    lines = (out / "coefficients.csv").read_text().splitlines()
    assert lines[0] == "edge,z,alpha,beta" and len(lines) > 40


def test_run_and_dump_commands(tmp_path):
    cfg = str(CONFIGS / "trajectory.toml")
    assert main(["run", cfg, "--out", str(tmp_path), "--seed", "5", "--save-every", "10"]) == 0
    csvs = sorted(p.name for p in tmp_path.glob("trajectory_seed*.csv"))
    assert csvs == ["trajectory_seed5.csv", "trajectory_seed6.csv"]
    assert main(["run", cfg, "--out", str(tmp_path), "--seed", "5", "--format", "bin"]) == 0
    assert (tmp_path / "trajectory_seed5.bin").exists()
    data = np.loadtxt(tmp_path / "trajectory_seed5.csv", delimiter=",", skiprows=1)
    assert data.shape[0] == 6 and data[-1, 0] == pytest.approx(0.5)
    assert main(["dump-matrices", cfg, "--out", str(tmp_path)]) == 0
    A = fem.read_matrix_market(tmp_path / "A.mtx")
    assert A.shape == (data.shape[1] - 1,) * 2
    for name in ("M_delta", "M", "S"):
        assert (tmp_path / f"{name}.mtx").exists()


def test_seed_flag_changes_stochastic_output(tmp_path):
    cfg = str(CONFIGS / "trajectory.toml")
    main(["run", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["run", cfg, "--out", str(tmp_path / "b"), "--seed", "1"])
    main(["run", cfg, "--out", str(tmp_path / "c"), "--seed", "2"])
    a = (tmp_path / "a" / "trajectory_seed2.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory_seed2.csv").read_bytes()
    assert a == (tmp_path / "c" / "trajectory_seed2.csv").read_bytes()
    assert a != (tmp_path / "a" / "trajectory_seed1.csv").read_bytes()
