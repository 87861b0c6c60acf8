#!/usr/bin/env python3
# # Scanning a trapped atom in the good-cavity limit
#
# With kappa << omega the motional sidebands are filtered and only the
# energy-diagonal part of f is measured.  A thermal state collapses onto a
# Fock state and the scanned current images |<z|n>|^2 until a rare jump.

import numpy as np

from qscope import scanctl as sc
from qscope.homodyne import lowpass_filter

T = 100.0
cfg = sc.RunConfig(regime="good_cavity", gamma=10.0, kappa=0.1, initial="thermal", n_th=0.6, dimension=8,
                   record_every=100, schedule=sc.ScanSchedule("linear_scan", -5.0, 5.0, T, 2))
print("guards:", {k: v for k, v in sc.evaluate_guards(cfg, warn=False).items() if k != "warnings"})
rec = sc.run_trajectory(cfg, 1)

# ## Collapse

n_final = int(np.argmax(rec.populations[-1]))
hit = np.flatnonzero(rec.purity > 0.99)
print(f"collapsed to n={n_final}, purity > 0.99 from t/T = {rec.sample_times[hit[0]] / T:.2f}" if hit.size else
      "no collapse")
print("jumps:", [(round(e["time"], 1), e["from_n"], e["to_n"]) for e in rec.jump_events])

# ## Image
#
# Filtered current against the focus-averaged density of the final level.

f = lowpass_filter(rec.current, cfg.filter_time)
centre = f.times + 0.5 * f.tau
table = sc.FocusTable(cfg)
sel = centre >= T
z0 = cfg.schedule.z0(centre[sel])[::200]
img = f.values[sel][::200]
theory = np.array([table(z)[n_final, n_final] for z in z0])
print("correlation with f_nn(z0):", np.corrcoef(img, theory)[0, 1].round(3))
