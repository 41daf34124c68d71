"""Repeated-split benchmarks
=========================

Runs the shipped experiment configs.  The full configs use 50 splits; pass
a smaller count on the command line for a quick look, e.g.
``python notebooks/03_benchmarks.py 5``.
"""

# %%
import sys

from survmtlr.bench import SHIPPED_EXPERIMENTS, ExperimentConfig, run_experiment

repetitions = int(sys.argv[1]) if len(sys.argv) > 1 else 5

# %% [markdown]
# Each split refits the time grid, scaler and censoring estimate on its own
# training rows, so the test rows never influence a fit.

# %%
for name in SHIPPED_EXPERIMENTS:
    cfg = ExperimentConfig.load(name)
    cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "repetitions": repetitions})
    report = run_experiment(cfg)
    print(f"\n{name} ({repetitions} splits)")
    print(report.table())
