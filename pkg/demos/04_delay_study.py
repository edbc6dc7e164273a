"""Paired-seed comparison of the pipeline variants at three expected delays.

Takes about a minute with the default five seeds; pass a larger count as the
first argument for tighter means.
"""
import sys

import numpy as np

from codyn.config import ScenarioConfig, SweepConfig
from codyn.pipeline import sweep

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
grid = SweepConfig(delays_ms=(0.0, 300.0, 500.0), noise_levels=(0.0,),
                   variants=("full", "no-dftm", "no-compensation", "late-fusion", "single"),
                   seeds=tuple(range(n_seeds)))
report = sweep(ScenarioConfig(frames=20), grid)

print(f"{'variant':>16}" + "".join(f"{d:>10.0f}ms" for d in grid.delays_ms))
for v in grid.variants:
    print(f"{v:>16}" + "".join(f"{report.aggregate(v, d, 0.0).ap50:12.4f}" for d in grid.delays_ms))

# %% how often does trust-weighted compensation beat stale features?
full = np.array([r.ap50 for r in report.per_seed("full", 300.0)])
stale = np.array([r.ap50 for r in report.per_seed("no-compensation", 300.0)])
print(f"full > no-compensation at 300 ms on {(full > stale).sum()}/{n_seeds} seeds")
