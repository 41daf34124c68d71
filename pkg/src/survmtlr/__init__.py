"""Survival analysis with CoxPH, MTLR and neural MTLR, plus the metrics,
simulators and benchmark harness used to compare them."""

from .classic import (CoxModel, StepFunction, SurvivalCurve, censoring_km, coxph_fit,
                      coxph_predict_survival, coxph_risk, km_fit)
from .core import (Scaler, SurvivalDataset, TimeGrid, encode_targets, load_builtin, load_csv,
                   make_time_grid, standardize, train_test_split)
from .metrics import brier, c_index, integrated_brier, weighted_brier
from .mtlr import MtlrModel, mtlr_fit
from .net import LayerSpec
from .nmtlr import NmtlrModel, TrainConfig, nmtlr_fit
from .simulate import SimConfig, generate

__version__ = "0.1.0"

__all__ = [
    "CoxModel", "LayerSpec", "MtlrModel", "NmtlrModel", "Scaler", "SimConfig", "StepFunction",
    "SurvivalCurve", "SurvivalDataset", "TimeGrid", "TrainConfig", "__version__", "brier",
    "c_index", "censoring_km", "coxph_fit", "coxph_predict_survival", "coxph_risk",
    "encode_targets", "generate", "integrated_brier", "km_fit", "load_builtin", "load_csv",
    "make_time_grid", "mtlr_fit", "nmtlr_fit", "standardize", "train_test_split",
    "weighted_brier",
]
