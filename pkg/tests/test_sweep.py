import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddbh.fock import FockSpace
from ddbh.lattice import build_lattice
from ddbh.model import ModelParams
from ddbh.sweep import (
    BranchCurve,
    HysteresisResult,
    SweepSchedule,
    default_workers,
    hysteresis_surface,
    pump_profile,
    read_branch_curve,
    read_hysteresis_table,
    run_ensemble,
    split_branches,
    write_branch_curve,
    write_hysteresis_table,
)


def curve(grid, up, down, **md):
    m = len(grid)
    z = np.zeros(m)
    return BranchCurve(np.asarray(grid, float), np.asarray(up, float), np.asarray(down, float),
                       z, z, z, z, z, z, md)


def test_pump_profile_corners():
    s = SweepSchedule(1.0, 5.0, 8.0)
    assert s.v_s == pytest.approx(1.0)
    assert pump_profile(s, 0.0) == 1.0
    assert pump_profile(s, 4.0) == 5.0
    assert pump_profile(s, 8.0) == 1.0
    assert np.allclose(pump_profile(s, np.array([2.0, 6.0])), [3.0, 3.0])
    with pytest.raises(ValueError):
        pump_profile(s, 8.5)
    with pytest.raises(ValueError):
        pump_profile(s, -0.1)


def test_schedule_validation_and_ratios():
    with pytest.raises(ValueError):
        SweepSchedule(1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        SweepSchedule(0.0, 1.0, 0.0)
    s = SweepSchedule.from_ratios(0.0, 0.6, 25.0, 20.0)
    assert s.f_end == pytest.approx(12.0) and s.t_s == pytest.approx(600.0)
    assert s.v_inv == pytest.approx(25.0)
    grid = s.grid_times(201)
    assert len(grid) == 401 and grid[200] == pytest.approx(300.0)


def test_split_branches_orders_by_increasing_f():
    up, down = split_branches(np.arange(7), 4)
    assert list(up) == [0, 1, 2, 3] and list(down) == [6, 5, 4, 3]
    with pytest.raises(ValueError):
        split_branches(np.arange(6), 4)


def test_surface_examples():
    grid = np.linspace(0, 1, 11)
    assert hysteresis_surface(curve(grid, np.zeros(11), np.ones(11))).s_h == pytest.approx(1.0, abs=1e-15)
    same = np.sin(grid)
    assert hysteresis_surface(curve(grid, same, same)).s_h == 0.0
    tri = np.clip(1 - np.abs(grid - 0.5) / 0.1, 0, None)
    assert hysteresis_surface(curve(grid, np.zeros(11), tri)).s_h == pytest.approx(0.1, abs=1e-15)


def test_negative_gaps_kept():
    grid = np.linspace(0, 1, 3)
    assert hysteresis_surface(curve(grid, [0, 1, 0], [0, 0, 0])).s_h == pytest.approx(-0.5)


def test_surface_rejects_bad_grid():
    with pytest.raises(ValueError):
        hysteresis_surface(curve([0, 1, 0.5], [0, 0, 0], [1, 1, 1]))
    with pytest.raises(ValueError):
        BranchCurve(np.zeros(3), *(np.zeros(2),) * 8)


@settings(max_examples=30, deadline=None)
@given(vals=st.lists(st.floats(-5, 5), min_size=2, max_size=8), refine=st.integers(2, 6))
def test_surface_invariant_under_refinement(vals, refine):
    coarse = np.linspace(0, 1, len(vals))
    fine = np.linspace(0, 1, (len(vals) - 1) * refine + 1)
    gap = np.interp(fine, coarse, vals)
    a = hysteresis_surface(curve(coarse, np.zeros(len(vals)), vals)).s_h
    b = hysteresis_surface(curve(fine, np.zeros(len(fine)), gap)).s_h
    assert a == pytest.approx(b, abs=1e-12)


def test_branch_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    grid = np.linspace(0, 0.6, 9)
    c = BranchCurve(grid, *(rng.random(9) / 3 for _ in range(8)),
                    {"method": "trajectory", "lattice": "2x2", "seed": 7})
    path = tmp_path / "b.csv"
    write_branch_curve(path, c)
    back = read_branch_curve(path)
    for name, col in c.columns().items():
        assert np.array_equal(back.columns()[name], col)
    assert back.metadata["lattice"] == "2x2" and back.metadata["seed"] == "7"


def test_hysteresis_csv_round_trip(tmp_path):
    rows = [HysteresisResult(0.1 + 0.2, 1e-3 / 3, 25.0, {"lattice": "2x2", "cluster": "1x1", "N_max": 10,
                                                          "N_tr": 500})]
    path = tmp_path / "h.csv"
    write_hysteresis_table(path, rows)
    back = read_hysteresis_table(path)[0]
    assert back.s_h == 0.1 + 0.2 and back.s_h_err == 1e-3 / 3 and back.v_inv == 25.0
    assert back.metadata == rows[0].metadata


def test_malformed_csv_reports_line(tmp_path):
    path = tmp_path / "h.csv"
    write_hysteresis_table(path, [HysteresisResult(1.0, 0.1, 5.0, {"lattice": "2x2", "cluster": "1x1",
                                                                   "N_max": 5, "N_tr": 3})])
    text = path.read_text().replace("1.0,0.1", "abc,0.1")
    path.write_text(text)
    with pytest.raises(ValueError, match="line 2"):
        read_hysteresis_table(path)
    path.write_text("")
    with pytest.raises(ValueError):
        read_hysteresis_table(path)


def test_dark_sweep():
    lat = build_lattice(2, 2)
    p = ModelParams.defaults().for_lattice(lat)
    c = run_ensemble(p, lat, FockSpace(3), SweepSchedule(0.0, 0.0, 5.0), 3, 1, points_per_half=6)
    assert np.all(c.n_up == 0) and np.all(c.n_down == 0)
    assert hysteresis_surface(c).s_h == 0


def _small_run(workers, seed=3):
    lat = build_lattice(2, 1)
    p = ModelParams.defaults().for_lattice(lat)
    sched = SweepSchedule.from_ratios(0.0, 0.4, 1.0, p.u)
    return run_ensemble(p, lat, FockSpace(6), sched, 6, seed, workers=workers, points_per_half=11,
                        rtol=1e-6, atol=1e-8)


def test_ensemble_bytes_independent_of_threads(tmp_path):
    paths = []
    for workers in (1, 3, 1):
        c = _small_run(workers)
        path = tmp_path / f"b{len(paths)}.csv"
        write_branch_curve(path, c)
        paths.append(path)
    data = [p.read_bytes() for p in paths]
    assert data[0] == data[1] == data[2]
    other = tmp_path / "other.csv"
    write_branch_curve(other, _small_run(1, seed=4))
    assert other.read_bytes() != data[0]


def test_ensemble_rejects_empty():
    lat = build_lattice(1, 1)
    with pytest.raises(ValueError):
        run_ensemble(ModelParams.defaults().for_lattice(lat), lat, FockSpace(3),
                     SweepSchedule(0.0, 1.0, 2.0), 0, 1)


def test_worker_default_from_environment(monkeypatch):
    monkeypatch.setenv("DDBH_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("DDBH_THREADS", "x")
    with pytest.raises(ValueError):
        default_workers()
    monkeypatch.delenv("DDBH_THREADS")
    assert default_workers() == 1


def test_surface_error_from_samples():
    c = _small_run(1)
    res = hysteresis_surface(c)
    assert np.isfinite(res.s_h) and res.s_h_err > 0
    assert res.v_inv == pytest.approx(1.0)
    assert c.metadata["N_tr"] == 6 and c.metadata["lattice"] == "2x1"
