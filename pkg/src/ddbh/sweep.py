"""Triangular pump sweeps over trajectory ensembles and the hysteresis surface.

The rising half of each sweep gives the ``up`` branch and the falling half the
``down`` branch, both on the same F/U grid. The hysteresis surface is the area
between the falling-sweep (upper) and rising-sweep (lower) density curves, so a
lagging system gives a positive value.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from .fock import FockSpace
from .lattice import Lattice
from .model import ModelParams
from .observables import EnsembleAccumulator, compressibility, compressibility_error, jackknife
from .schedule import SweepSchedule, pump_profile
from .trajectory import RngStream, TrajectoryEngine

__all__ = [
    "SweepSchedule", "pump_profile", "BranchCurve", "HysteresisResult", "run_ensemble",
    "hysteresis_surface", "split_branches", "write_branch_curve", "read_branch_curve",
    "write_hysteresis_table", "read_hysteresis_table", "BRANCH_COLUMNS", "HYSTERESIS_COLUMNS",
]

BRANCH_COLUMNS = ("F_over_U", "n_up", "n_up_err", "n_down", "n_down_err",
                  "K_up", "K_up_err", "K_down", "K_down_err")
HYSTERESIS_COLUMNS = ("v_inv_gamma2", "S_h", "S_h_err", "lattice", "cluster", "N_max", "N_tr")


@dataclass
class BranchCurve:
    grid: np.ndarray  # F/U
    n_up: np.ndarray
    n_down: np.ndarray
    k_up: np.ndarray
    k_down: np.ndarray
    n_up_err: np.ndarray
    n_down_err: np.ndarray
    k_up_err: np.ndarray
    k_down_err: np.ndarray
    metadata: dict = field(default_factory=dict)
    # per-trajectory site-averaged density on the full time grid, rows in trajectory order
    samples: np.ndarray | None = None
    accumulator: EnsembleAccumulator | None = field(default=None, repr=False)

    def __post_init__(self):
        m = len(self.grid)
        for name in ("n_up", "n_down", "k_up", "k_down", "n_up_err", "n_down_err", "k_up_err", "k_down_err"):
            if len(getattr(self, name)) != m:
                raise ValueError(f"{name} does not match the F/U grid")

    def columns(self) -> dict:
        return {
            "F_over_U": self.grid, "n_up": self.n_up, "n_up_err": self.n_up_err,
            "n_down": self.n_down, "n_down_err": self.n_down_err, "K_up": self.k_up,
            "K_up_err": self.k_up_err, "K_down": self.k_down, "K_down_err": self.k_down_err,
        }


@dataclass
class HysteresisResult:
    s_h: float
    s_h_err: float = float("nan")
    v_inv: float = float("nan")
    metadata: dict = field(default_factory=dict)

    def row(self) -> dict:
        md = self.metadata
        return {"v_inv_gamma2": self.v_inv, "S_h": self.s_h, "S_h_err": self.s_h_err,
                "lattice": md.get("lattice", ""), "cluster": md.get("cluster", ""),
                "N_max": md.get("N_max", ""), "N_tr": md.get("N_tr", "")}


def split_branches(values, points_per_half: int):
    """Rising and falling halves of a full-sweep series, both ordered by increasing F."""
    values = np.asarray(values)
    m = points_per_half
    if values.shape[0] != 2 * m - 1:
        raise ValueError(f"expected {2 * m - 1} grid points, got {values.shape[0]}")
    return values[:m], values[m - 1:][::-1]


def default_workers() -> int:
    """Thread count from ``DDBH_THREADS`` (default 1)."""
    raw = os.environ.get("DDBH_THREADS", "1")
    try:
        value = int(raw)
    except ValueError as exc:
        raise ValueError(f"DDBH_THREADS must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ValueError("DDBH_THREADS must be >= 1")
    return value


def run_ensemble(params: ModelParams, lattice: Lattice, space: FockSpace, schedule: SweepSchedule,
                 n_traj: int, master_seed: int, workers: int | None = None,
                 points_per_half: int = 201, rtol: float = 1e-8, atol: float = 1e-10,
                 truncation_threshold: float = 1e-3, progress=None) -> BranchCurve:
    """Run ``n_traj`` sweeps from vacuum and reduce them to a :class:`BranchCurve`.

    Trajectory ``k`` uses the stream ``(master_seed, k)``. Records are added to
    an exact accumulator in completion order, so the result does not depend on
    ``workers``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    workers = default_workers() if workers is None else int(workers)
    engine = TrajectoryEngine(params, lattice, space, rtol=rtol, atol=atol,
                              truncation_threshold=truncation_threshold)
    grid = schedule.grid_times(points_per_half)
    acc = EnsembleAccumulator(len(grid), lattice.n_sites)

    def one(k):
        return engine.run(schedule, RngStream(master_seed, k), grid)

    if workers == 1:
        for k in range(n_traj):
            acc.add_record(one(k), lattice)
            if progress:
                progress(k + 1, n_traj)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(one, k) for k in range(n_traj)]
            for done, fut in enumerate(as_completed(futures), 1):
                acc.add_record(fut.result(), lattice)
                if progress:
                    progress(done, n_traj)
    acc.finalize()
    return curve_from_accumulator(acc, params, lattice, space, schedule, points_per_half, master_seed)


def curve_from_accumulator(acc: EnsembleAccumulator, params: ModelParams, lattice: Lattice,
                           space: FockSpace, schedule: SweepSchedule, points_per_half: int,
                           master_seed: int) -> BranchCurve:
    m = points_per_half
    n_site_mean = acc.mean_n.mean(axis=1)
    k_all = compressibility(acc, allow_empty=True)
    _, n_tot, _ = acc.sample_table()
    samples = n_tot / lattice.n_sites
    if acc.count >= 2:
        n_err = samples.std(axis=0, ddof=1) / np.sqrt(acc.count)
        k_err = compressibility_error(acc)
    else:
        n_err = np.full(len(n_site_mean), np.nan)
        k_err = np.full(len(n_site_mean), np.nan)
    n_up, n_down = split_branches(n_site_mean, m)
    k_up, k_down = split_branches(k_all, m)
    ne_up, ne_down = split_branches(n_err, m)
    ke_up, ke_down = split_branches(k_err, m)
    grid = np.linspace(schedule.f_start, schedule.f_end, m) / params.u
    metadata = {
        "method": "trajectory", "lattice": f"{lattice.lx}x{lattice.ly}", "cluster": lattice.template_name,
        "N_max": space.n_max, "N_tr": acc.count, "seed": int(master_seed), "v_inv_gamma2": schedule.v_inv,
    }
    return BranchCurve(grid, n_up, n_down, k_up, k_down, ne_up, ne_down, ke_up, ke_down,
                       metadata, samples, acc)


def _area(grid, upper, lower):
    return float(np.trapezoid(np.asarray(upper) - np.asarray(lower), grid))


def hysteresis_surface(curve: BranchCurve) -> HysteresisResult:
    """Trapezoidal area between the falling-sweep and rising-sweep densities over F/U.

    Pointwise negative gaps are kept. With per-trajectory samples the error is a
    jackknife over trajectories.
    """
    grid = np.asarray(curve.grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("F/U grid must be non-decreasing")
    s_h = _area(grid, curve.n_down, curve.n_up)
    err = float("nan")
    samples = curve.samples
    if samples is not None and samples.shape[0] >= 2:
        m = len(grid)
        if samples.shape[1] != 2 * m - 1:
            raise ValueError("trajectory samples do not match the branch grid")
        per_traj = np.array([_area(grid, *reversed(split_branches(row, m))) for row in samples])
        _, err = jackknife(per_traj, lambda x: x)
        err = float(err)
    md = dict(curve.metadata)
    return HysteresisResult(s_h, err, float(md.get("v_inv_gamma2", float("nan"))), md)


# --------------------------------------------------------------------------- CSV


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ValueError(f"line {line}: column {column!r} is not a number: {text!r}") from exc


def write_branch_curve(path, curve: BranchCurve) -> None:
    cols = curve.columns()
    buf = io.StringIO()
    for key in sorted(curve.metadata):
        buf.write(f"# {key}={_fmt(curve.metadata[key])}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BRANCH_COLUMNS)
    for r in range(len(curve.grid)):
        writer.writerow([_fmt(float(cols[c][r])) for c in BRANCH_COLUMNS])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def _read_table(path, columns):
    with open(path, newline="") as fh:
        text = fh.read()
    metadata = {}
    rows = []
    header = None
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            metadata[key.strip()] = value
            continue
        fields = next(csv.reader([line]))
        if header is None:
            if tuple(fields) != tuple(columns):
                raise ValueError(f"line {line_no}: expected header {','.join(columns)}")
            header = fields
            continue
        if len(fields) != len(columns):
            raise ValueError(f"line {line_no}: expected {len(columns)} fields, got {len(fields)}")
        rows.append((line_no, fields))
    if header is None:
        raise ValueError(f"{path}: empty file or missing header")
    return metadata, rows


def read_branch_curve(path) -> BranchCurve:
    metadata, rows = _read_table(path, BRANCH_COLUMNS)
    data = {c: np.array([_parse_float(f[k], ln, c) for ln, f in rows]) for k, c in enumerate(BRANCH_COLUMNS)}
    return BranchCurve(data["F_over_U"], data["n_up"], data["n_down"], data["K_up"], data["K_down"],
                       data["n_up_err"], data["n_down_err"], data["K_up_err"], data["K_down_err"], metadata)


def write_hysteresis_table(path, results) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HYSTERESIS_COLUMNS)
    for res in results:
        row = res.row()
        writer.writerow([_fmt(row[c]) for c in HYSTERESIS_COLUMNS])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_hysteresis_table(path) -> list[HysteresisResult]:
    _, rows = _read_table(path, HYSTERESIS_COLUMNS)
    out = []
    for ln, f in rows:
        md = {"lattice": f[3], "cluster": f[4], "N_max": int(f[5]) if f[5] else "",
              "N_tr": int(f[6]) if f[6] else ""}
        out.append(HysteresisResult(_parse_float(f[1], ln, "S_h"), _parse_float(f[2], ln, "S_h_err"),
                                    _parse_float(f[0], ln, "v_inv_gamma2"), md))
    return out
