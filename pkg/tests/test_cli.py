import os
import subprocess
import sys

import numpy as np
import pytest

from wgeesel.cli import main
from wgeesel.data import write_long_csv

TOY = """id,time,y,x.a
1,1,1.0,0.0
1,2,2.1,1.0
2,1,0.4,0.5
2,2,1.9,1.5
3,1,1.2,-0.3
3,2,2.6,0.8
4,1,0.1,0.2
4,2,1.0,1.1
"""


@pytest.fixture
def toy(tmp_path):
    p = tmp_path / "toy.csv"
    p.write_text(TOY)
    return p


@pytest.fixture
def sim_csv(tmp_path, sim_dataset):
    p = tmp_path / "sim.csv"
    write_long_csv(sim_dataset, p)
    return p


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_fit_gaussian_matches_ols(toy, capsys):
    code, out, _ = run(["fit", "--data", toy, "--family", "gaussian", "--structure", "IND"], capsys)
    assert code == 0
    rows = [line.split() for line in out.splitlines() if line.startswith(("(Intercept)", "a "))]
    beta = np.array([float(r[1]) for r in rows])
    data = np.loadtxt(toy.open(), delimiter=",", skiprows=1)
    X = np.column_stack([np.ones(len(data)), data[:, 3]])
    ols = np.linalg.lstsq(X, data[:, 2], rcond=None)[0]
    np.testing.assert_allclose(beta, ols, atol=1e-6)  # printed to 6 decimals
    assert "every cell observed" in out


def test_fit_report_contents(sim_csv, capsys):
    code, out, err = run(["fit", "--data", sim_csv, "--covariates", "x1,x2", "--structure", "EXC"], capsys)
    assert code == 0 and err == ""
    assert "rho" in out and "phi" in out and "converged yes" in out and "y_lag2" in out


def test_non_monotone_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("id,time,y,x.a\n1,1,1,0\n1,2,,0\n1,3,1,0\n")
    code, out, err = run(["fit", "--data", p], capsys)
    assert code == 2 and out == "" and "non-monotone" in err


def test_unknown_flag_exit_64(toy, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fit", "--data", str(toy), "--bogus"])
    code = exc.value.code
    _, err = capsys.readouterr()
    assert code == 64 and "usage" in err


def test_unknown_covariate_is_usage_error(toy, capsys):
    code, _, err = run(["fit", "--data", toy, "--family", "gaussian", "--covariates", "zz"], capsys)
    assert code == 64 and "zz" in err


def test_select_single_candidate(sim_csv, tmp_path, capsys):
    out_path = tmp_path / "table.tsv"
    code, out, err = run(["select", "--data", sim_csv, "--candidates", "x1,x2", "--structures", "EXC",
                          "--dropout-lags", "1", "--jobs", "1", "--out", out_path], capsys)
    assert code == 0 and "scored 1 candidates" in err
    lines = out_path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[1].split("\t")[lines[0].split("\t").index("selected_by")] == "JEAIC,JEBIC,MLIC,QICWr"
    assert "x1+x2/EXC" in out


def test_select_unwritable_exit_73(sim_csv, tmp_path, capsys):
    code, out, _ = run(["select", "--data", sim_csv, "--out", tmp_path / "missing" / "t.tsv"], capsys)
    assert code == 73 and out == ""


def test_select_dropout_failure_exit_1(tmp_path, capsys):
    rows = ["id,time,y,x.a,h.z"]
    for i in range(10):
        stays = i < 5
        rows.append(f"{i},1,{i % 2},{i / 10},0")
        rows.append(f"{i},2,{(i % 2) if stays else ''},{i / 10},{1 if stays else 0}")
    p = tmp_path / "sep.csv"
    p.write_text("\n".join(rows) + "\n")
    code, _, err = run(["select", "--data", p, "--dropout-lags", "0", "--jobs", "1"], capsys)
    assert code == 1 and "separation" in err


SCEN = """[tiny]
n = 60
reps = 3
seed = 5
mean_models = x1; x1,x2
structures = IND, EXC
"""


def test_simulate_deterministic(tmp_path, capsys):
    scen = tmp_path / "s.ini"
    scen.write_text(SCEN)
    c1, o1, e1 = run(["simulate", "--scenario", scen, "--jobs", "1"], capsys)
    c2, o2, _ = run(["simulate", "--scenario", scen, "--jobs", "2"], capsys)
    c3, o3, _ = run(["simulate", "--scenario", scen, "--jobs", "1"], capsys)
    assert c1 == c2 == c3 == 0
    assert o1 == o2 == o3 and o1.startswith("scenario\tcriterion")
    assert "failed replicates" in e1


def test_simulate_one_replicate(tmp_path, capsys):
    scen = tmp_path / "s.ini"
    scen.write_text(SCEN)
    out_path = tmp_path / "rates.tsv"
    code, out, _ = run(["simulate", "--scenario", scen, "--reps", "1", "--seed", "9", "--jobs", "1",
                        "--out", out_path], capsys)
    assert code == 0 and out == ""
    for line in out_path.read_text().splitlines()[1:]:
        f = line.split("\t")
        if f[2] == "Total":
            assert float(f[-2]) + float(f[-1]) == 1.0


def test_malformed_scenario_exit_65(tmp_path, capsys):
    scen = tmp_path / "s.ini"
    scen.write_text("[x]\nrho = lots\n")
    code, _, err = run(["simulate", "--scenario", scen], capsys)
    assert code == 65 and "[x]" in err and "rho" in err


def test_jobs_env_override(tmp_path, capsys, monkeypatch):
    scen = tmp_path / "s.ini"
    scen.write_text(SCEN)
    monkeypatch.setenv("WGEESEL_JOBS", "nope")
    code, _, _ = run(["simulate", "--scenario", scen], capsys)
    assert code == 64
    monkeypatch.setenv("WGEESEL_JOBS", "1")
    code, _, _ = run(["simulate", "--scenario", scen, "--reps", "1"], capsys)
    assert code == 0


def test_console_entry_point(toy):
    proc = subprocess.run([sys.executable, "-m", "wgeesel.cli", "fit", "--data", str(toy), "--family",
                           "gaussian", "--structure", "IND"], capture_output=True, text=True,
                          env={**os.environ, "WGEESEL_JOBS": "1"})
    assert proc.returncode == 0 and "(Intercept)" in proc.stdout
