"""Single Kerr site: trajectory ensemble against the exact Lindblad steady state.

Run with ``python3 demos/oracle_vs_trajectories.py [n_traj]``.
"""
import sys
import time

import numpy as np

from ddbh.fock import FockSpace, annihilation_matrix
from ddbh.lattice import build_lattice
from ddbh.model import ModelParams, single_site_hamiltonian
from ddbh.observables import EnsembleAccumulator, jackknife
from ddbh.oracle import build_liouvillian, site_observables, steady_state
from ddbh.schedule import SweepSchedule
from ddbh.trajectory import RngStream, TrajectoryEngine

n_traj = int(sys.argv[1]) if len(sys.argv) > 1 else 300
lat = build_lattice(1, 1)
space = FockSpace(7)
a = annihilation_matrix(space)

print(" F/U   n_exact   n_traj +- err     g2_exact  g2_traj +- err")
for f_over_u in (0.1, 0.2, 0.3):
    p = ModelParams.defaults(f=f_over_u * 20).for_lattice(lat)
    exact = site_observables(steady_state(build_liouvillian(single_site_hamiltonian(p, space), [a], p.gamma)), [a])

    engine = TrajectoryEngine(p, lat, space, rtol=1e-6, atol=1e-8)
    grid = np.array([0.0, 40.0])
    acc = EnsembleAccumulator(len(grid), 1)
    t0 = time.time()
    for k in range(n_traj):
        acc.add_record(engine.run(SweepSchedule.constant(p.f, grid[-1]), RngStream(7, k), grid), lat)
    acc.finalize()
    _, n_s, p_s = acc.sample_table()
    n_mean, n_err = jackknife(n_s[:, -1], lambda x: x)
    g2, g2_err = jackknife(np.column_stack([n_s[:, -1], p_s[:, -1]]), lambda m: m[1] / m[0] ** 2)
    print(f"{f_over_u:4.1f}  {exact['n'][0]:.5f}  {n_mean:.5f} +- {n_err:.5f}   "
          f"{exact['g2'][0]:7.3f}  {g2:7.3f} +- {g2_err:.3f}   ({time.time() - t0:.0f}s)")
