#!/usr/bin/env python3
# # Friedel oscillations of fermions around an impurity
#
# N fermions in a box with a hard wall at the centre.  A narrow focus is
# scanned across the box; the filtered current estimates the density.

import numpy as np

from qscope import manybody as mb
from qscope import scanctl as sc

model = mb.BoxImpurityModel(16)
z = np.linspace(-0.2, 0.2, 9)
print("ground density vs Friedel form")
for zi, a, b in zip(z, mb.ground_state_density(model, z), mb.friedel_density(model, z)):
    print(f"  z={zi:+.3f}  n={a:7.3f}  n_F form={b:7.3f}")

cfg = sc.RunConfig(regime="manybody", initial="fermi_ground", n_fermions=16, sigma=0.01, kappa=4 * np.pi**2,
                   gamma=400.0, tau=0.01, schedule=sc.ScanSchedule("linear_scan", -0.5, 0.5, 1.0))
res = sc.run_friedel(cfg, 10)

# ## Scan against theory

sel = np.abs(res.z0) < 0.2
print(f"\nband coverage {res.coverage:.2f}, fitted period {res.period_fit:.4f}, pi/k_F {res.period_theory:.4f}")
print(f"excitation probability max {res.excited_max:.3f}")
for i in np.flatnonzero(sel)[::400]:
    print(f"  z0={res.z0[i]:+.3f}  single={res.single[i]:7.2f}  mean={res.mean[i]:7.2f}  theory={res.theory[i]:7.2f}")
