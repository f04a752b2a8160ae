"""Simulate a handful of bubble trajectories from the symmetric start and print birth/burst times."""

import numpy as np

from bubblematch.distribution import evolve
from bubblematch.experiment import preset
from bubblematch.market import MarketParams, simulate_market_path

cfg = preset("figure1")
sampler = cfg.sampler()
model = cfg.build_model()
d0 = cfg.initial_distribution(model)
params = MarketParams(kappa=cfg.kappa, F0=cfg.F0, x0_zero=cfg.x0_zero)

print("path  beta_T      min beta    max beta    birth  burst")
for i in range(cfg.paths):
    scn = sampler.sample(i)
    ev = evolve(d0, model, scn)
    path = simulate_market_path(model.fraction_difference(ev.p), scn, params, cfg.grid)
    print(f"{i:4d}  {path.beta[-1]:+.4f}     {path.beta.min():+.4f}     {path.beta.max():+.4f}"
          f"     {path.tau_plus:.2f}   {path.tau_zero:.2f}")
