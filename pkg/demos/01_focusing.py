#!/usr/bin/env python3
# # Dark-state focusing
#
# A Lambda system with a standing-wave control beam has a dark state whose
# excited-level admixture is sharply peaked near the node.  Its width sets
# the spatial resolution of the microscope.

import numpy as np

from qscope.focusing import (LambdaConfig, decay_budget, fwhm_resolution, focus_profile, max_nonadiabatic_potential,
                             max_overlap)

# ## Resolution against the closed form
#
# The peak narrows as sqrt(epsilon) for beta = 0; an offset beta widens it but
# lowers the peak overlap.

for eps in (0.02, 0.05, 0.1):
    for beta in (0.0, eps, 3 * eps):
        w = fwhm_resolution(LambdaConfig(eps, beta))
        print(f"eps={eps:<5} beta={beta:<5.2f} FWHM analytic={w['analytic']:.4f} numeric={w['numeric']:.4f} "
              f"peak overlap={max_overlap(eps, beta):.3f}")

# ## Profile on a grid

prof = focus_profile(LambdaConfig(0.1, 0.1))
print("\nprofile points:", prof.z.size, " peak f:", prof.f.max().round(4))

# ## Error budget
#
# Measurement rate over the spatially averaged spontaneous emission rate.

b = decay_budget(150, 0.3, 0.4)
print(f"\ngamma / gamma_sp = {b.gamma_over_gamma_sp:.1f}")

# ## Non-adiabatic potential
#
# The offset beta suppresses the fictitious potential from the rapidly
# rotating dark state.

for beta in (0.0, 0.1, 0.3, 0.5):
    print(f"beta={beta:.1f}  max V_na = {max_nonadiabatic_potential(LambdaConfig(0.1, beta)):.3g} E_R")
