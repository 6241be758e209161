"""The lightning operator on one sounding, and how far its linearization holds.

Run: python demos/01_operator_and_linearity.py
"""
import numpy as np

from lightvar.obs_operator import DEFAULT_PARAMS, alpha_linearity_test, flash_rate
from lightvar.soundings import make_sounding
from lightvar.thermo import compute_cape

col = make_sounding(t_sfc=300.0, rh_sfc=0.75)
diag = compute_cape(col)
print(f"surface-parcel CAPE {diag.cape:.1f} J/kg (LCL level {diag.lcl_index}, "
      f"LFC {diag.lfc_index}, EL {diag.el_index})")
print(f"flash rate {flash_rate(col):.3f} per (9 km)^2 per minute; "
      f"no lightning below {DEFAULT_PARAMS.cape_min} J/kg")

# Scale a near-surface warming profile and compare the true change of H with
# the tangent-linear prediction. Small amplitudes track closely; at 14 K the
# operator has clearly left its linear regime.
alphas = 10.0 ** np.arange(-6.0, 0.01, 1.0)
profile = np.exp(-col.geopotential_height / 3000.0)
for amp in (1.0, 14.0):
    dt = profile * amp / np.linalg.norm(profile)
    res = alpha_linearity_test(col, dt, alphas)
    cells = "  ".join(f"{e:6.2f}" for e in res.log10_error)
    print(f"|dT| = {amp:4.1f} K  log10|1-F| for alpha 1e-6..1: {cells}")
