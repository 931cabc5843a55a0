"""Fit S_h(v_inv) from a hysteresis table written by ``ddbh sweep``.

Without an argument a synthetic two-regime table is generated to show the
knee search.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from ddbh.analysis import detect_double_power_law, fit_power_law
from ddbh.sweep import HysteresisResult, read_hysteresis_table, write_hysteresis_table

if len(sys.argv) > 1:
    rows = read_hysteresis_table(sys.argv[1])
else:
    x = np.geomspace(2, 2000, 10)
    y = np.where(x <= 60, 1.5 * x ** -0.9, 1.5 * 60 ** -0.9 * (x / 60) ** -0.35)
    y *= np.exp(np.random.default_rng(3).normal(0, 0.02, len(x)))
    md = {"lattice": "synthetic", "cluster": "1x1", "N_max": 10, "N_tr": 0}
    path = Path(tempfile.mkdtemp()) / "hysteresis.csv"
    write_hysteresis_table(path, [HysteresisResult(s, 0.0, v, md) for v, s in zip(x, y)])
    rows = read_hysteresis_table(path)

rows.sort(key=lambda r: r.v_inv)
pts = np.array([(r.v_inv, r.s_h) for r in rows])
whole = fit_power_law(pts, (0, len(pts)))
print(f"single power law : alpha={whole.alpha:.3f}  CI=({whole.alpha_ci[0]:.3f}, {whole.alpha_ci[1]:.3f})")
tail = fit_power_law(pts)
print(f"long-time window : alpha={tail.alpha:.3f}  points {tail.window}")
if len(pts) >= 6:
    dbl = detect_double_power_law(pts)
    print(f"two segments     : knee at v_inv={pts[dbl.knee, 0]:.3g}, "
          f"alpha_short={dbl.short.alpha:.3f}, alpha_long={dbl.long.alpha:.3f}, flagged={dbl.flagged}")
