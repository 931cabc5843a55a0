import json

import numpy as np
import pytest

from ddbh.cli import (
    EXIT_CHECK_FAILED,
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    ConfigError,
    load_config,
    main,
)
from ddbh.sweep import HysteresisResult, read_branch_curve, read_hysteresis_table, write_hysteresis_table

MINIMAL = """\
[lattice]
lx = 1
ly = 1

[numerics]
n_max = 6
rel_tol = 1e-6
abs_tol = 1e-8

[sweep]
f_end_over_u = 0.3
v_inv_gamma2 = 1
grid_points = 11

[ensemble]
n_traj = 10
master_seed = 5
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(MINIMAL)
    return path


def test_minimal_sweep(config, tmp_path):
    out = tmp_path / "out"
    assert main(["sweep", str(config), "-o", str(out)]) == EXIT_OK
    branch = out / "branch_v1p0.csv"
    assert branch.exists() and (out / "hysteresis.csv").exists()
    manifest = json.loads((out / "manifest_sweep.json").read_text())
    assert manifest["seed"] == 5 and manifest["config"]["ensemble"]["n_traj"] == "10"
    assert {"numpy", "scipy", "numba", "python"} <= set(manifest["versions"])
    assert manifest["wall_time_s"] >= 0
    assert [str(branch), str(out / "hysteresis.csv")] == manifest["outputs"]
    curve = read_branch_curve(branch)
    assert curve.metadata["N_tr"] == "10" and np.all(curve.n_up >= 0)
    assert read_hysteresis_table(out / "hysteresis.csv")[0].metadata["N_tr"] == 10


def test_sweep_bytes_identical_across_runs_and_threads(config, tmp_path):
    dirs = []
    for k, threads in enumerate((1, 2, 1)):
        d = tmp_path / f"o{k}"
        assert main(["sweep", str(config), "-o", str(d), "--threads", str(threads)]) == EXIT_OK
        dirs.append(d)
    for name in ("branch_v1p0.csv", "hysteresis.csv"):
        blobs = {(d / name).read_bytes() for d in dirs}
        assert len(blobs) == 1


def test_missing_key_named(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(MINIMAL.replace("master_seed = 5\n", ""))
    assert main(["sweep", str(path), "-o", str(tmp_path)]) == EXIT_CONFIG
    assert "ensemble.master_seed" in capsys.readouterr().err


def test_itemized_config_problems(config):
    with pytest.raises(ConfigError) as info:
        load_config(config, ["numerics.n_max=0", "sweep.grid_points=1"], "sweep")
    assert len(info.value.problems) == 2
    with pytest.raises(ConfigError):
        load_config(config, ["no_dot=1"], "sweep")
    with pytest.raises(ConfigError):
        load_config(config, ["model.j_over_u=abc"], "sweep")


def test_resonance_index_sets_detuning(config):
    cfg = load_config(config, ["model.resonance=3"], "params")
    assert cfg.params.delta == pytest.approx(cfg.params.u)
    cfg = load_config(config, [], "params")
    assert 1 + 2 * cfg.params.delta / cfg.params.u == 4


def test_unknown_flag_is_usage_error(config):
    assert main(["mf", str(config), "--bogus"]) == EXIT_USAGE
    assert main(["nosuchcommand"]) == EXIT_USAGE


def test_mf_flat_and_loop(config, tmp_path):
    flat = tmp_path / "flat"
    assert main(["mf", str(config), "-o", str(flat), "--set", "sweep.f_end_over_u=0"]) == EXIT_OK
    c = read_branch_curve(flat / "mf_branch_v1p0.csv")
    assert np.all(c.n_up == 0) and np.all(c.n_down == 0)
    assert c.metadata["method"] == "mf"

    loop = tmp_path / "loop"
    assert main(["mf", str(config), "-o", str(loop), "--set", "numerics.n_max=10",
                 "--set", "sweep.f_end_over_u=0.6", "--set", "sweep.v_inv_gamma2=25",
                 "--set", "sweep.grid_points=61"]) == EXIT_OK
    c = read_branch_curve(loop / "mf_branch_v25p0.csv")
    assert np.max(c.n_down - c.n_up) > 0.1
    assert read_hysteresis_table(loop / "hysteresis_mf.csv")[0].s_h > 0


ORACLE = ["--set", "oracle.t_end=10", "--set", "oracle.checkpoints=2", "--set", "numerics.n_max=7",
          "--n-traj", "200"]


def test_oracle_check_passes_and_detects_mismatch(config, tmp_path):
    good = tmp_path / "good"
    assert main(["oracle-check", str(config), "-o", str(good), *ORACLE]) == EXIT_OK
    report = json.loads((good / "oracle_check.json").read_text())
    assert report["pass"] and len(report["rows"]) == 4

    bad = tmp_path / "bad"
    code = main(["oracle-check", str(config), "-o", str(bad), *ORACLE, "--set", "oracle.delta_over_u=1.0"])
    assert code == EXIT_CHECK_FAILED
    rows = json.loads((bad / "oracle_check.json").read_text())["rows"]
    assert max(abs(r["z"]) for r in rows) > 3


def test_oracle_check_oversize(config, tmp_path, capsys):
    code = main(["oracle-check", str(config), "-o", str(tmp_path), "--set", "lattice.lx=3",
                 "--set", "lattice.ly=3"])
    assert code == EXIT_CONFIG
    assert "too large" in capsys.readouterr().err


def _table(path, points, lattice="4x4"):
    md = {"lattice": lattice, "cluster": "1x1", "N_max": 10, "N_tr": 100}
    write_hysteresis_table(path, [HysteresisResult(s, 0.0, v, md) for v, s in points])


def _fits(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def test_fit_exact_power_law(tmp_path):
    src = tmp_path / "h.csv"
    x = np.geomspace(1, 100, 5)
    _table(src, zip(x, 3 * x ** -0.7))
    out = tmp_path / "fits.csv"
    assert main(["fit", str(src), "-o", str(out)]) == EXIT_OK
    rows = _fits(out)
    full = next(r for r in rows if r["kind"] == "all")
    assert abs(float(full["alpha"]) - 0.7) < 1e-10
    # appending keeps a single header
    assert main(["fit", str(src), "-o", str(out)]) == EXIT_OK
    assert len(_fits(out)) == 2 * len(rows)


def test_fit_reports_knee(tmp_path):
    src = tmp_path / "h.csv"
    x = np.geomspace(1, 10_000, 9)  # x[4] = 100
    y = np.where(x <= 100, x ** -1.0, 0.01 * (x / 100) ** -0.3)
    _table(src, zip(x, y))
    out = tmp_path / "fits.csv"
    assert main(["fit", str(src), "-o", str(out)]) == EXIT_OK
    seg = [r for r in _fits(out) if r["kind"].startswith("segment")]
    assert len(seg) == 2 and all(r["knee"] == "4" for r in seg)


def test_fit_empty_and_malformed(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["fit", str(empty), "-o", str(tmp_path / "f.csv")]) == EXIT_IO
    header_only = tmp_path / "header.csv"
    _table(header_only, [])
    assert main(["fit", str(header_only), "-o", str(tmp_path / "f.csv")]) == EXIT_IO
    bad = tmp_path / "bad.csv"
    _table(bad, [(1.0, 1.0), (2.0, 0.5), (4.0, 0.25)])
    bad.write_text(bad.read_text().replace("0.5", "x"))
    assert main(["fit", str(bad), "-o", str(tmp_path / "f.csv")]) == EXIT_IO
    assert "line 3" in capsys.readouterr().err


def test_params_prints_resolved(config, capsys):
    assert main(["params", str(config), "--set", "sweep.v_inv_gamma2=5,25"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "delta_over_gamma = 30.0" in out
    assert "sweep_times = 60.0, 300.0" in out


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["params", str(tmp_path / "absent.ini")]) == 5
