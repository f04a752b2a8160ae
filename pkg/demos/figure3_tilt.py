"""First-period bubble from the asymmetric start, under the original and a tilted driver law."""

from bubblematch.experiment import FIGURE3_TILT, preset, run_tilt_experiment

cfg = preset("figure3").replace(paths=100_000, periods=1, chunk_size=50_000)
base, tilted = run_tilt_experiment(cfg, FIGURE3_TILT)
for name, res in (("original", base), ("tilted", tilted)):
    print(f"{name:>8}: mean beta^1 = {res.report.mean_beta[1]:.5f} +- {res.report.stderr_beta[1]:.1e}")
