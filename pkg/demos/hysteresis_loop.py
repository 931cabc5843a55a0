"""Dynamical hysteresis on a small lattice next to the mean-field loop.

Prints both branches on a coarse F/U grid and the enclosed surfaces.
Run with ``python3 demos/hysteresis_loop.py [n_traj] [v_inv]``.
"""
import sys

import numpy as np

from ddbh.fock import FockSpace
from ddbh.lattice import build_lattice
from ddbh.meanfield import mf_sweep
from ddbh.model import ModelParams
from ddbh.sweep import SweepSchedule, hysteresis_surface, run_ensemble

n_traj = int(sys.argv[1]) if len(sys.argv) > 1 else 40
v_inv = float(sys.argv[2]) if len(sys.argv) > 2 else 10.0

lat = build_lattice(2, 2)
p = ModelParams.defaults().for_lattice(lat)
space = FockSpace(10)
sched = SweepSchedule.from_ratios(0.0, 0.6, v_inv, p.u)

curve = run_ensemble(p, lat, space, sched, n_traj, master_seed=11, points_per_half=61,
                     rtol=1e-5, atol=1e-7, progress=lambda k, n: print(f"\r{k}/{n}", end="", flush=True))
print()
up, down = mf_sweep(ModelParams.defaults(), sched, space, points_per_half=61)

print("  F/U    n_up   n_down | mf_up  mf_down |  K_up  K_down")
for i in range(0, 61, 5):
    print(f"{curve.grid[i]:6.3f} {curve.n_up[i]:7.3f} {curve.n_down[i]:7.3f} | "
          f"{up.n[i]:6.3f} {down.n[i]:7.3f} | {curve.k_up[i]:5.2f} {curve.k_down[i]:6.2f}")

res = hysteresis_surface(curve)
mf_area = float(np.trapezoid(down.n - up.n, up.f_over_u))
print(f"S_h trajectories = {res.s_h:.4f} +- {res.s_h_err:.4f}")
print(f"S_h mean field   = {mf_area:.4f}")
