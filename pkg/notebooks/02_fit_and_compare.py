"""Fitting CoxPH, MTLR and N-MTLR
===============================

One train/test split of the square-risk design, where the log-risk is not
linear in the covariates and the network has room to help.
"""

# %%
import numpy as np

from survmtlr import (LayerSpec, c_index, censoring_km, coxph_fit, generate, make_time_grid,
                      mtlr_fit, nmtlr_fit, train_test_split)
from survmtlr.metrics import ibs_grid, integrated_brier, weighted_brier_curve

# %%
data = generate(n=3000, risk_kind="square", seed=2)
train, test = train_test_split(data, 0.2, seed=0)
grid = make_time_grid(train.times, train.events)
print("time grid:", grid.K, "boundaries, last at", round(float(grid.boundaries[-1]), 2))

# %% [markdown]
# All three models expose the same prediction interface: a risk score for
# ranking and a survival matrix for calibration.

# %%
models = {
    "CoxPH": coxph_fit(train),
    "MTLR": mtlr_fit(train, grid, reg_strength=0.01),
    "N-MTLR": nmtlr_fit(train, grid, [LayerSpec(100, "softmax"), LayerSpec(100, "relu")],
                        {"optimizer": "adamax", "seed": 0}),
}

# %% [markdown]
# Concordance and integrated Brier score, with censoring weights from the
# training rows only.

# %%
g = censoring_km(train.times, train.events)
times = ibs_grid(test.times, 100, g)
for name, model in models.items():
    c = c_index(test.times, test.events, model.risk(test.features))
    S = model.predict_survival_matrix(test.features, times)
    ibs = integrated_brier(times, weighted_brier_curve(times, test.times, test.events, S, g))
    print(f"{name:7s} C-index {c:.3f}  IBS {ibs:.3f}")

# %% [markdown]
# Predicted curves for the units with the lowest and highest N-MTLR risk.

# %%
risk = models["N-MTLR"].risk(test.features)
rows = test.features[[np.argmin(risk), np.argmax(risk)]]
knots = np.linspace(0, float(np.quantile(test.times, 0.9)), 6)
for name, model in models.items():
    print(name)
    print(np.round(model.predict_survival_matrix(rows, knots), 3))
