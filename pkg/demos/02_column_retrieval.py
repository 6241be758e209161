"""Turn one flash-rate observation into a temperature pseudo-observation.

The background column under-predicts lightning by 1.5 flashes. A 1D-VAR
retrieval warms the low levels until the operator agrees with the
observation, within what the background error covariance allows.

Run: python demos/02_column_retrieval.py
"""
import numpy as np

from lightvar.covariance import gaussian_vertical_covariance
from lightvar.obs_operator import flash_rate
from lightvar.soundings import make_sounding
from lightvar.var1d import LightningObservation, retrieve_column

col = make_sounding(t_sfc=300.0, rh_sfc=0.75)
bcov = gaussian_vertical_covariance(col.geopotential_height, 2.0, 1500.0, 0.05)
obs = LightningObservation((0, 0), flash_rate(col) + 1.5)

r = retrieve_column(col, obs, bcov)
rep = r.minimize_report
print(f"status {r.qc_status}: H {r.h_background:.3f} -> {r.h_analysis:.3f} "
      f"(observed {obs.flash_rate:.3f})")
print(f"{rep.iterations_used} iterations, cost {rep.cost_initial:.3f} -> {rep.cost_final:.4f}, "
      f"|grad| reduced {rep.grad_norm_initial / rep.grad_norm_final:.0f}x")
print("largest increments (height m, dT K):")
for k in np.argsort(-np.abs(r.temperature_increment))[:5]:
    print(f"  {col.geopotential_height[k]:8.0f}  {r.temperature_increment[k]:+.3f}")
