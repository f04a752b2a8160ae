"""Build the two-state martingale measure along one path and contrast it with the physical measure."""

import numpy as np

from bubblematch.arbitrage import MeasureSpec, physical_policy, verify_martingale
from bubblematch.core import TimeGrid

grid = TimeGrid.uniform(10, 1.0)
p0 = np.array([0.5, 0.2, 0.3])
for label, spec in (("constructed", MeasureSpec()), ("physical q=1/2", MeasureSpec(physical_policy(0.5)))):
    rep = verify_martingale(spec, p0, grid, n_paths=200, resamples=20, seed=1)
    print(f"{label}: max |q a1 + (1-q) a2 - (p1-p3)| = {rep.max_residual:.2e}, "
          f"E[dS] = {rep.mc_mean:+.4f} +- {rep.mc_stderr:.4f}")
print()
print(verify_martingale(MeasureSpec(), p0, grid, n_paths=1, resamples=1, seed=1).to_csv())
