#!/usr/bin/env python3
# # Time-resolved imaging of a wave packet (bad cavity)
#
# With kappa >> omega the cavity follows the atom and the homodyne current
# tracks <f>(t) at a fixed focal point.  A coherent state passes the focus
# twice per oscillation period.

import numpy as np

from qscope import scanctl as sc
from qscope.homodyne import lowpass_filter, snr

T = 2 * np.pi
cfg = sc.RunConfig(regime="bad_cavity", gamma=2.0, alpha=2.0, sigma=0.3, dimension=30, record_every=50,
                   tau=0.2, schedule=sc.ScanSchedule("fixed_point", 0.0, 0.0, T))
res = sc.run_ensemble(cfg, 100)

# ## Ensemble signal against the master equation

t = res.filtered_times
k = np.linspace(0, t.size - 1, 12).astype(int)
print(" t/T    <I_tau>   oracle    se")
for i in k:
    print(f"{(t[i] + res.tau / 2) / T:5.2f}  {res.filtered_stats.mean[i]:8.4f}  {res.oracle['filtered'][i]:8.4f}  "
          f"{res.filtered_stats.std_error[i]:.4f}")

# ## A single trajectory
#
# Measurement back-action heats the motion; energy grows along every
# trajectory on average.

rec = sc.run_trajectory(cfg, 0)
print("\nenergy  start %.3f  end %.3f" % (rec.mean_energy[0], rec.mean_energy[-1]))
f = lowpass_filter(rec.current, cfg.filter_time)
print("single-shot I_tau at T/4: %.3f" % f.values[np.argmin(abs(f.times + f.tau / 2 - T / 4))])
