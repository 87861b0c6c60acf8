#!/usr/bin/env python3
# # Adiabatic elimination of a fast cavity
#
# The atom-cavity master equation against the eliminated one with
# gamma = eps^2 kappa / (kappa^2/4).

import numpy as np

from qscope import hilbert as h
from qscope import sme
from qscope.focusing import gaussian_focus

d, nc, kappa, dt = 20, 4, 20.0, 0.0025
z = np.linspace(-16, 16, 8001)
F = h.matrix_elements_on_grid(gaussian_focus(1.0)(z, 0.0), z, d)
H = np.diag(np.arange(d) + 0.5)
cav = sme.CavityParams(kappa, drive=1.0)
m = sme.full_model(H, F, cav, 0.5 * np.sqrt(kappa), nc, linearized=True)
print(f"eps/kappa = {m.epsilon / kappa:.3f}, gamma = {m.gamma:.3f}")

vac = np.zeros((nc, nc))
vac[0, 0] = 1
bad = h.coherent_dm(1.0, d).astype(complex)
full = np.kron(bad, vac)
n = int(round(2 * np.pi / dt))
for k in range(1, n + 1):
    full = sme.step_master_equation(full, m.H_total, [(kappa, m.c_op)], dt)
    bad = sme.step_master_equation(bad, H, [(m.gamma, F)], dt)
    if k % (n // 8) == 0:
        a, b = np.trace(m.f_op @ full).real, np.trace(F @ bad).real
        print(f"t={k * dt:5.2f}  full {a:.5f}  eliminated {b:.5f}  rel {abs(a - b) / abs(b):.3%}")
