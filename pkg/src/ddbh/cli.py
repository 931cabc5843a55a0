"""Command-line entry point: ``ddbh {sweep,mf,oracle-check,fit,params}``.

Configuration is an INI file (sections model, lattice, numerics, sweep,
ensemble, oracle, output); any key can be overridden with ``--set section.key=value``.
Exit codes: 0 success, 1 oracle check failed, 2 usage, 3 configuration,
4 numerical failure, 5 I/O failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import platform
import sys
import time
from dataclasses import dataclass, field, replace
from importlib import metadata as importlib_metadata
from pathlib import Path

import numpy as np

from .analysis import detect_double_power_law, fit_power_law
from .fock import FockSpace, TruncationError
from .lattice import build_lattice
from .meanfield import mf_sweep
from .model import ModelParams
from .oracle import MAX_ORACLE_DIM, lattice_liouvillian, propagate, site_observables
from .schedule import SweepSchedule
from .sweep import (
    BranchCurve,
    HysteresisResult,
    default_workers,
    hysteresis_surface,
    read_hysteresis_table,
    run_ensemble,
    write_branch_curve,
    write_hysteresis_table,
)
from .trajectory import IntegrationError, RngStream, TrajectoryEngine

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4, 5

DEFAULTS = {
    "model": {"u_over_gamma": "20", "resonance": "4", "j_over_u": "0.5"},
    "lattice": {"cluster": "1x1"},
    "numerics": {"n_max": "10", "rel_tol": "1e-8", "abs_tol": "1e-10", "truncation_threshold": "1e-3"},
    "sweep": {"f_start_over_u": "0", "f_end_over_u": "0.6", "grid_points": "201"},
    "ensemble": {},
    "oracle": {"f_over_u": "0.3", "t_end": "50", "checkpoints": "1"},
    "output": {"directory": "."},
}
REQUIRED = {
    "sweep": [("lattice", "lx"), ("lattice", "ly"), ("sweep", "v_inv_gamma2"),
              ("ensemble", "n_traj"), ("ensemble", "master_seed")],
    "mf": [("sweep", "v_inv_gamma2")],
    "oracle-check": [("lattice", "lx"), ("lattice", "ly"), ("ensemble", "n_traj"), ("ensemble", "master_seed")],
    "params": [],
}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    params: ModelParams
    u_over_gamma: float
    lx: int | None
    ly: int | None
    cluster: str
    n_max: int
    rel_tol: float
    abs_tol: float
    truncation_threshold: float
    f_start_over_u: float
    f_end_over_u: float
    v_inv: list
    grid_points: int
    n_traj: int | None
    master_seed: int | None
    threads: int
    oracle_f_over_u: float
    oracle_t_end: float
    oracle_checkpoints: int
    oracle_delta_over_u: float | None
    output: Path
    raw: dict = field(default_factory=dict)

    def lattice(self):
        return build_lattice(self.lx, self.ly, self.cluster)

    z_from_lattice: bool = True

    def model_for(self, lattice) -> ModelParams:
        return self.params.for_lattice(lattice) if self.z_from_lattice else self.params


# --------------------------------------------------------------------------- configuration


def load_config(path, overrides=(), command="params") -> RunConfig:
    parser = configparser.ConfigParser()
    parser.read_dict(DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError:
            raise
        except configparser.Error as exc:
            raise ConfigError([f"cannot parse {path}: {exc}"]) from exc
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError([f"override {item!r} is not of the form section.key=value"])
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value.strip())
    return resolve_config(parser, command)


def resolve_config(parser: configparser.ConfigParser, command: str) -> RunConfig:
    problems = []
    for section, key in REQUIRED.get(command, []):
        if not parser.has_option(section, key):
            problems.append(f"missing mandatory key {section}.{key}")
    if problems:
        raise ConfigError(problems)

    def get(section, key, conv, default=None):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key)
        try:
            return conv(raw)
        except ValueError:
            problems.append(f"{section}.{key}: cannot interpret {raw!r}")
            return default

    def floats(text):
        return [float(v) for v in text.replace(",", " ").split()]

    u_g = get("model", "u_over_gamma", float)
    j_u = get("model", "j_over_u", float)
    delta_u = get("model", "delta_over_u", float)
    resonance = get("model", "resonance", float)
    z = get("model", "z", int)
    lx = get("lattice", "lx", int)
    ly = get("lattice", "ly", int)
    cluster = parser.get("lattice", "cluster")
    n_max = get("numerics", "n_max", int)
    rel_tol = get("numerics", "rel_tol", float)
    abs_tol = get("numerics", "abs_tol", float)
    trunc = get("numerics", "truncation_threshold", float)
    f0 = get("sweep", "f_start_over_u", float)
    f1 = get("sweep", "f_end_over_u", float)
    v_inv = get("sweep", "v_inv_gamma2", floats, [])
    grid_points = get("sweep", "grid_points", int)
    n_traj = get("ensemble", "n_traj", int)
    seed = get("ensemble", "master_seed", int)
    threads = get("ensemble", "threads", int)
    of = get("oracle", "f_over_u", float)
    ot = get("oracle", "t_end", float)
    oc = get("oracle", "checkpoints", int)
    od = get("oracle", "delta_over_u", float)
    out = parser.get("output", "directory")
    if problems:
        raise ConfigError(problems)

    if u_g is not None and u_g <= 0:
        problems.append("model.u_over_gamma must be positive")
    if delta_u is None and resonance is not None and resonance < 1:
        problems.append("model.resonance must be >= 1")
    if z is not None and z < 1:
        problems.append("model.z must be >= 1")
    if lx is not None and lx < 1 or ly is not None and ly < 1:
        problems.append("lattice.lx and lattice.ly must be >= 1")
    if lx is not None and ly is not None:
        try:
            build_lattice(lx, ly, cluster)
        except ValueError as exc:
            problems.append(f"lattice: {exc}")
    if n_max < 1:
        problems.append("numerics.n_max must be >= 1")
    if not (0 < rel_tol < 1) or not abs_tol > 0:
        problems.append("numerics tolerances must be positive (rel_tol < 1)")
    if not 0 < trunc <= 1:
        problems.append("numerics.truncation_threshold must lie in (0, 1]")
    if f1 < f0:
        problems.append("sweep.f_end_over_u must not be below sweep.f_start_over_u")
    if any(v <= 0 for v in v_inv):
        problems.append("sweep.v_inv_gamma2 values must be positive")
    if grid_points < 2:
        problems.append("sweep.grid_points must be >= 2")
    if n_traj is not None and n_traj < 1:
        problems.append("ensemble.n_traj must be >= 1")
    if threads is None:
        try:
            threads = default_workers()
        except ValueError as exc:
            problems.append(str(exc))
            threads = 1
    elif threads < 1:
        problems.append("ensemble.threads must be >= 1")
    if oc < 1 or ot <= 0:
        problems.append("oracle.t_end must be positive and oracle.checkpoints >= 1")
    if problems:
        raise ConfigError(problems)

    params = ModelParams.from_ratios(u_over_gamma=u_g, j_over_u=j_u, delta_over_u=delta_u,
                                     resonance=resonance, z=z if z is not None else 4)
    cfg = RunConfig(params, u_g, lx, ly, cluster, n_max, rel_tol, abs_tol, trunc, f0, f1, v_inv,
                    grid_points, n_traj, seed, threads, of, ot, oc, od, Path(out),
                    {s: dict(parser.items(s)) for s in parser.sections()})
    cfg.z_from_lattice = z is None
    return cfg


# --------------------------------------------------------------------------- helpers


def _versions() -> dict:
    import numba
    import scipy

    try:
        own = importlib_metadata.version("artifact")
    except importlib_metadata.PackageNotFoundError:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "ddbh": own}


def write_manifest(directory: Path, command: str, cfg: RunConfig, outputs, started: float, extra=None):
    manifest = {
        "command": command,
        "config": cfg.raw,
        "versions": _versions(),
        "seed": cfg.master_seed,
        "threads": cfg.threads,
        "wall_time_s": time.time() - started,
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        manifest.update(extra)
    path = directory / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _tag(v: float) -> str:
    return repr(float(v)).replace(".", "p")


def _mf_curve(params, schedule, space, m) -> BranchCurve:
    up, down = mf_sweep(params, schedule, space, m)
    nan = np.full(m, np.nan)
    zero = np.zeros(m)
    md = {"method": "mf", "lattice": "mean-field", "cluster": "1x1", "N_max": space.n_max,
          "N_tr": 0, "v_inv_gamma2": schedule.v_inv}
    with np.errstate(invalid="ignore"):
        return BranchCurve(up.f_over_u, up.n, down.n, up.compressibility, down.compressibility,
                           zero, zero.copy(), nan, nan.copy(), md)


# --------------------------------------------------------------------------- commands


def cmd_sweep(cfg: RunConfig, log=print) -> int:
    started = time.time()
    lattice = cfg.lattice()
    params = cfg.model_for(lattice)
    space = FockSpace(cfg.n_max)
    cfg.output.mkdir(parents=True, exist_ok=True)
    outputs, results = [], []
    for v in cfg.v_inv:
        sched = SweepSchedule.from_ratios(cfg.f_start_over_u, cfg.f_end_over_u, v, params.u)
        curve = run_ensemble(params, lattice, space, sched, cfg.n_traj, cfg.master_seed,
                             workers=cfg.threads, points_per_half=cfg.grid_points, rtol=cfg.rel_tol,
                             atol=cfg.abs_tol, truncation_threshold=cfg.truncation_threshold)
        res = hysteresis_surface(curve)
        results.append(res)
        path = cfg.output / f"branch_v{_tag(v)}.csv"
        write_branch_curve(path, curve)
        outputs.append(path)
        log(f"v_inv={v:g}: S_h={res.s_h:.6g} +- {res.s_h_err:.2g}")
    table = cfg.output / "hysteresis.csv"
    write_hysteresis_table(table, results)
    outputs.append(table)
    write_manifest(cfg.output, "sweep", cfg, outputs, started)
    return EXIT_OK


def cmd_mf(cfg: RunConfig, log=print) -> int:
    started = time.time()
    space = FockSpace(cfg.n_max)
    params = cfg.params
    cfg.output.mkdir(parents=True, exist_ok=True)
    outputs, results = [], []
    for v in cfg.v_inv:
        f0, f1 = cfg.f_start_over_u * params.u, cfg.f_end_over_u * params.u
        sched = SweepSchedule(f0, f1, 2.0 * (f1 - f0) * v) if f1 > f0 else SweepSchedule(f0, f1, 1.0)
        curve = _mf_curve(params, sched, space, cfg.grid_points)
        res = hysteresis_surface(curve)
        res.v_inv = float(v)
        results.append(res)
        path = cfg.output / f"mf_branch_v{_tag(v)}.csv"
        write_branch_curve(path, curve)
        outputs.append(path)
        log(f"mean field v_inv={v:g}: S_h={res.s_h:.6g}")
    table = cfg.output / "hysteresis_mf.csv"
    write_hysteresis_table(table, results)
    outputs.append(table)
    write_manifest(cfg.output, "mf", cfg, outputs, started)
    return EXIT_OK


def oracle_check(cfg: RunConfig):
    """Trajectory ensemble versus exact propagation at constant pump; returns rows of z-scores."""
    lattice = cfg.lattice()
    dim = (cfg.n_max + 1) ** lattice.n_sites
    if dim > MAX_ORACLE_DIM:
        raise ConfigError([f"system too large for the oracle: Hilbert dimension {dim} > {MAX_ORACLE_DIM}"])
    if len(lattice.clusters) != 1:
        raise ConfigError(["oracle-check needs one cluster covering the whole lattice (exact unravelling)"])
    params = cfg.model_for(lattice).with_f(cfg.oracle_f_over_u * cfg.params.u)
    space = FockSpace(cfg.n_max)
    times = np.linspace(0.0, cfg.oracle_t_end, cfg.oracle_checkpoints + 1)[1:]
    engine = TrajectoryEngine(params, lattice, space, rtol=cfg.rel_tol, atol=cfg.abs_tol,
                              truncation_threshold=cfg.truncation_threshold)
    sched = SweepSchedule.constant(params.f, cfg.oracle_t_end)
    n_samples, pair_samples = [], []
    for k in range(cfg.n_traj):
        rec = engine.run(sched, RngStream(cfg.master_seed, k), times)
        n_samples.append(rec.n)
        pair_samples.append(np.array([np.diagonal(rec.pair_matrix(lattice)[g]) for g in range(len(times))]))
    n_samples = np.array(n_samples)
    pair_samples = np.array(pair_samples)
    ref_params = params
    if cfg.oracle_delta_over_u is not None:
        ref_params = replace(params, delta=cfg.oracle_delta_over_u * params.u)
    L, a_ops = lattice_liouvillian(ref_params, lattice, space)
    rho0 = np.zeros((dim, dim), complex)
    rho0[0, 0] = 1.0
    rhos = propagate(L, rho0, times)
    rows = []
    m = cfg.n_traj
    for g, t in enumerate(times):
        exact = site_observables(rhos[g], a_ops)
        for i in range(lattice.n_sites):
            for name, samples, ref in (("n", n_samples[:, g, i], exact["n"][i]),
                                       ("pair", pair_samples[:, g, i], exact["pair"][i])):
                mean = samples.mean()
                se = samples.std(ddof=1) / np.sqrt(m) if m > 1 else np.nan
                z = (mean - ref) / se if se > 0 else (0.0 if mean == ref else np.inf)
                rows.append({"t": float(t), "site": i, "observable": name, "trajectory": float(mean),
                             "exact": float(ref), "stderr": float(se), "z": float(z)})
    return rows


def cmd_oracle_check(cfg: RunConfig, log=print) -> int:
    started = time.time()
    rows = oracle_check(cfg)
    ok = all(abs(r["z"]) < 3 for r in rows)
    for r in rows:
        log(f"t={r['t']:g} site={r['site']} {r['observable']:>4}: traj={r['trajectory']:.6g} "
            f"exact={r['exact']:.6g} z={r['z']:+.2f}")
    log("PASS" if ok else "FAIL")
    cfg.output.mkdir(parents=True, exist_ok=True)
    path = cfg.output / "oracle_check.json"
    path.write_text(json.dumps({"pass": ok, "rows": rows}, indent=2) + "\n")
    write_manifest(cfg.output, "oracle-check", cfg, [path], started)
    return EXIT_OK if ok else EXIT_CHECK_FAILED


FIT_COLUMNS = ("source", "lattice", "cluster", "N_max", "kind", "alpha", "alpha_lo", "alpha_hi",
               "beta", "window_lo", "window_hi", "residual", "knee", "flagged")


def cmd_fit(inputs, output, log=print) -> int:
    import csv

    rows = []
    for path in inputs:
        results = read_hysteresis_table(path)
        if not results:
            raise ValueError(f"{path}: no data rows")
        groups = {}
        for res in results:
            md = res.metadata
            groups.setdefault((md["lattice"], md["cluster"], md["N_max"]), []).append(res)
        for (lat, clu, nmax), group in sorted(groups.items(), key=lambda kv: str(kv[0])):
            group.sort(key=lambda r: r.v_inv)
            pts = [(r.v_inv, r.s_h) for r in group]
            base = {"source": str(path), "lattice": lat, "cluster": clu, "N_max": nmax}
            fit = fit_power_law(pts, (0, len(pts)))
            rows.append({**base, "kind": "all", **_fit_row(fit), "knee": "", "flagged": ""})
            long_fit = fit_power_law(pts)
            rows.append({**base, "kind": "long", **_fit_row(long_fit), "knee": "", "flagged": ""})
            if len(pts) >= 6:
                dbl = detect_double_power_law(pts)
                for kind, f in (("segment_short", dbl.short), ("segment_long", dbl.long)):
                    rows.append({**base, "kind": kind, **_fit_row(f), "knee": dbl.knee,
                                 "flagged": int(dbl.flagged)})
            log(f"{path} {lat} {clu}: alpha={fit.alpha:.6g} beta={fit.beta:.6g}")
    output = Path(output)
    new = not output.exists() or output.stat().st_size == 0
    with open(output, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(FIT_COLUMNS)
        for r in rows:
            writer.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in FIT_COLUMNS])
    return EXIT_OK


def _fit_row(fit) -> dict:
    return {"alpha": fit.alpha, "alpha_lo": fit.alpha_ci[0], "alpha_hi": fit.alpha_ci[1], "beta": fit.beta,
            "window_lo": fit.window[0], "window_hi": fit.window[1], "residual": fit.residual}


def cmd_params(cfg: RunConfig, log=print) -> int:
    p = cfg.params
    resolved = configparser.ConfigParser()
    resolved.read_dict(cfg.raw)
    resolved["derived"] = {
        "delta_over_gamma": repr(p.delta), "u_over_gamma": repr(p.u), "j_over_gamma": repr(p.j),
        "z": "from lattice" if cfg.z_from_lattice else str(p.z), "threads": str(cfg.threads),
    }
    if cfg.v_inv:
        resolved["derived"]["sweep_times"] = ", ".join(
            repr(2.0 * (cfg.f_end_over_u - cfg.f_start_over_u) * p.u * v) for v in cfg.v_inv)
    import io
    buf = io.StringIO()
    resolved.write(buf)
    log(buf.getvalue().rstrip())
    return EXIT_OK


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddbh", description="Driven-dissipative Bose-Hubbard sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", nargs="?", help="INI configuration file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a configuration entry")
        p.add_argument("--threads", type=int, help="worker threads (default: $DDBH_THREADS or 1)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--n-traj", type=int, help="number of trajectories")
        p.add_argument("-o", "--output", help="output directory")

    for name, text in (("sweep", "trajectory sweeps and hysteresis surfaces"),
                       ("mf", "mean-field sweeps"),
                       ("oracle-check", "trajectory ensemble versus exact Lindblad propagation"),
                       ("params", "print the resolved configuration")):
        common(sub.add_parser(name, help=text))
    fit = sub.add_parser("fit", help="power-law fits of hysteresis tables")
    fit.add_argument("inputs", nargs="+", help="hysteresis CSV files")
    fit.add_argument("-o", "--output", default="fits.csv", help="fit CSV (rows appended)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    log = print
    try:
        if args.command == "fit":
            try:
                return cmd_fit(args.inputs, args.output, log)
            except ValueError as exc:
                print(f"input error: {exc}", file=sys.stderr)
                return EXIT_IO
        overrides = list(args.set)
        for flag, key in (("threads", "ensemble.threads"), ("seed", "ensemble.master_seed"),
                          ("n_traj", "ensemble.n_traj"), ("output", "output.directory")):
            value = getattr(args, flag)
            if value is not None:
                overrides.append(f"{key}={value}")
        cfg = load_config(args.config, overrides, args.command)
        handler = {"sweep": cmd_sweep, "mf": cmd_mf, "oracle-check": cmd_oracle_check,
                   "params": cmd_params}[args.command]
        return handler(cfg, log)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (TruncationError, IntegrationError, FloatingPointError, ZeroDivisionError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # malformed inputs (e.g. CSV diagnostics) and invalid numeric requests
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
