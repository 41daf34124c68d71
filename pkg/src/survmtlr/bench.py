"""Repeated train/test benchmark of CoxPH, MTLR and N-MTLR.

For each repetition the data is split 80/20 with a seed derived from the
master seed; the time grid, every model's scaler and the censoring
distribution are all estimated on the training part only.  Test C-index,
IBS and a Brier curve are collected per model and summarized with boxplot
statistics (Tukey whiskers) and standard errors over repetitions.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classic, metrics, mtlr, nmtlr
from .core import (BUILTIN_SCHEMAS, SurvivalDataset, derive_seed, load_builtin, load_csv,
                   make_time_grid, split_indices)
from .simulate import SimConfig, generate

logger = logging.getLogger(__name__)

MODEL_KINDS = ("coxph", "mtlr", "nmtlr")
CONFIG_DIR = Path(__file__).parent / "configs"
SHIPPED_EXPERIMENTS = ("linear", "square", "gaussian", "whas", "veteran")

_TOP_KEYS = {"name", "data", "models", "repetitions", "test_fraction", "seed", "ibs_points",
             "curve_points", "grid", "n_jobs", "description"}
_MODEL_KEYS = {
    "coxph": {"kind", "ties", "max_iter", "tol", "ridge"},
    "mtlr": {"kind", "reg_strength", "optimizer", "learning_rate", "max_iter", "tol"},
    "nmtlr": {"kind", "layers", "train"},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    data: dict
    models: dict
    repetitions: int = 50
    test_fraction: float = 0.2
    seed: int = 0
    ibs_points: int = 100
    curve_points: int = 100
    grid: dict = field(default_factory=dict)
    n_jobs: int = 1
    description: str = ""

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if not self.models:
            raise ConfigError("at least one model is required")
        if len(self.data) != 1 or next(iter(self.data)) not in ("simulate", "csv", "builtin"):
            raise ConfigError("data must hold exactly one of 'simulate', 'csv', 'builtin'")
        for name, spec in self.models.items():
            kind = spec.get("kind")
            if kind not in MODEL_KINDS:
                raise ConfigError(f"model {name!r}: kind must be one of {MODEL_KINDS}")
            unknown = set(spec) - _MODEL_KEYS[kind]
            if unknown:
                raise ConfigError(f"model {name!r}: unknown keys {sorted(unknown)}")
        unknown = set(self.grid) - {"num_intervals", "strategy"}
        if unknown:
            raise ConfigError(f"grid: unknown keys {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "data" not in d or "models" not in d:
            raise ConfigError("config needs 'data' and 'models'")
        return cls(**{"name": "experiment", **d})

    @classmethod
    def load(cls, path_or_name) -> "ExperimentConfig":
        """Load a JSON config file, or a shipped one by name (e.g. ``"square"``)."""
        path = Path(path_or_name)
        if not path.exists() and str(path_or_name) in SHIPPED_EXPERIMENTS:
            path = CONFIG_DIR / f"{path_or_name}.json"
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        d.setdefault("name", path.stem)
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return {"name": self.name, "data": self.data, "models": self.models,
                "repetitions": self.repetitions, "test_fraction": self.test_fraction,
                "seed": self.seed, "ibs_points": self.ibs_points,
                "curve_points": self.curve_points, "grid": self.grid,
                "description": self.description}


def load_data(config: ExperimentConfig) -> SurvivalDataset:
    (source, spec), = config.data.items()
    if source == "simulate":
        spec = dict(spec)
        spec.setdefault("seed", derive_seed(config.seed, "data") % 2**31)
        try:
            return generate(SimConfig(**spec))
        except TypeError as exc:
            raise ConfigError(f"data.simulate: {exc}") from None
    if source == "builtin":
        if spec not in BUILTIN_SCHEMAS:
            raise ConfigError(f"unknown builtin dataset {spec!r}")
        return load_builtin(spec)
    unknown = set(spec) - {"path", "time_column", "event_column", "categorical_columns"}
    if unknown:
        raise ConfigError(f"data.csv: unknown keys {sorted(unknown)}")
    return load_csv(spec["path"], spec["time_column"], spec["event_column"],
                    spec.get("categorical_columns", ()))


# ---------------------------------------------------------------------------
# Fitting dispatch
# ---------------------------------------------------------------------------

def fit_model(spec: dict, train: SurvivalDataset, grid, seed: int):
    """Fit one model described by a config entry ``{"kind": ..., ...}``."""
    params = {k: v for k, v in spec.items() if k != "kind"}
    kind = spec["kind"]
    if kind == "coxph":
        return classic.coxph_fit(train, **params)
    if kind == "mtlr":
        return mtlr.mtlr_fit(train, grid, seed=seed, **params)
    if kind == "nmtlr":
        train_cfg = dict(params.get("train", {}))
        train_cfg["seed"] = seed
        return nmtlr.nmtlr_fit(train, grid, params.get("layers", ()), train_cfg)
    raise ConfigError(f"unknown model kind {kind!r}")


def brier_curve(model, test: SurvivalDataset, censor_curve, times):
    """Weighted Brier score of ``model`` on ``test`` at each of ``times``."""
    times = np.asarray(times, dtype=np.float64)
    S = model.predict_survival_matrix(test.features, times)
    return times, metrics.weighted_brier_curve(times, test.times, test.events, S, censor_curve)


def evaluate_model(model, test: SurvivalDataset, censor_curve, ibs_points: int = 100,
                   curve_times=None) -> dict:
    """Test C-index, IBS on ``[0, max test time]`` (see :func:`metrics.ibs_horizon`)
    and an optional Brier curve."""
    out = {"c_index": metrics.c_index(test.times, test.events, model.risk(test.features))}
    ibs_times = metrics.ibs_grid(test.times, ibs_points, censor_curve)
    grid_t, bs = brier_curve(model, test, censor_curve, ibs_times)
    out["ibs"] = metrics.integrated_brier(grid_t, bs)
    if curve_times is not None:
        out["curve"] = brier_curve(model, test, censor_curve, curve_times)[1]
    return out


def run_repetition(dataset: SurvivalDataset, train_idx, test_idx, config: ExperimentConfig,
                   rep_seed: int, curve_times=None, keep_models: bool = False) -> dict:
    train, test = dataset.subset(train_idx), dataset.subset(test_idx)
    grid = make_time_grid(train.times, train.events, config.grid.get("num_intervals"),
                          config.grid.get("strategy", "quantile"))
    g_hat = classic.censoring_km(train.times, train.events)
    out = {"models": {}, "grid_size": grid.K}
    fitted = {}
    for name, spec in config.models.items():
        model = fit_model(spec, train, grid, derive_seed(rep_seed, name) % 2**31)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            out["models"][name] = evaluate_model(model, test, g_hat, config.ibs_points,
                                                 curve_times)
        fitted[name] = model
    if keep_models:
        out["fitted"] = fitted
        out["grid"] = grid
    return out


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def boxplot_stats(values) -> dict:
    """Median, quartiles, Tukey whiskers (1.5 IQR, clipped to the data),
    mean and standard error (sample std / sqrt(n))."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {k: math.nan for k in ("median", "q1", "q3", "lower_whisker", "upper_whisker",
                                      "mean", "std_error")} | {"n": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return {"median": float(med), "q1": float(q1), "q3": float(q3),
            "lower_whisker": float(lo), "upper_whisker": float(hi),
            "mean": float(v.mean()), "std_error": se, "n": int(v.size)}


@dataclass
class ExperimentReport:
    name: str
    seed: int
    config: dict
    models: dict                 # name -> {"c_index": stats, "ibs": stats, "brier_curve": [...]}
    raw: dict                    # name -> {"c_index": [...], "ibs": [...]}
    curve_times: list
    repetitions: int
    skipped: list
    data_summary: dict

    def to_dict(self) -> dict:
        return {"name": self.name, "seed": self.seed, "repetitions": self.repetitions,
                "skipped": self.skipped, "data": self.data_summary,
                "resampling": "random train/test splits; std_error = sample std over "
                              "repetitions / sqrt(repetitions)",
                "models": self.models, "raw": self.raw, "curve_times": self.curve_times,
                "config": self.config}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def curves_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.models)
        w.writerow(["time", *names])
        for k, t in enumerate(self.curve_times):
            w.writerow([repr(float(t))] + [repr(float(self.models[m]["brier_curve"][k]))
                                           for m in names])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{self.name}", f"{'Model':<10} {'C-index (std. error)':<24} "
                                 f"{'IBS (std. error)':<22}"]
        for m, s in self.models.items():
            c, b = s["c_index"], s["ibs"]
            lines.append(f"{m:<10} {c['median']:.2f} ({c['std_error']:.1e}){'':<9} "
                         f"{b['mean']:.2f} ({b['std_error']:.1e})")
        return "\n".join(lines)


def _rep_task(args):
    dataset, train_idx, test_idx, config, rep_seed, curve_times = args
    try:
        return run_repetition(dataset, train_idx, test_idx, config, rep_seed, curve_times)
    except Exception as exc:          # one failed split is recorded and skipped
        return {"error": f"{type(exc).__name__}: {exc}"}


def run_experiment(config: ExperimentConfig, dataset: SurvivalDataset | None = None,
                   progress=None) -> ExperimentReport:
    """Run every repetition and aggregate in repetition order."""
    data = load_data(config) if dataset is None else dataset
    splits = []
    for r in range(config.repetitions):
        rep_seed = derive_seed(config.seed, "rep", r) % 2**31
        train_idx, test_idx = split_indices(data.n, config.test_fraction, rep_seed, data.events)
        splits.append((rep_seed, train_idx, test_idx))
    horizon = min(metrics.ibs_horizon(data.times[test],
                                      classic.censoring_km(data.times[train], data.events[train]))
                  for _, train, test in splits)
    curve_times = np.linspace(0.0, horizon, config.curve_points)

    tasks = [(data, tr, te, config, s, curve_times) for s, tr, te in splits]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(config.n_jobs) as pool:
            results = list(pool.map(_rep_task, tasks))
    else:
        results = []
        for r, task in enumerate(tasks):
            results.append(_rep_task(task))
            if progress:
                progress(r + 1, config.repetitions)

    skipped = [{"repetition": r, "error": res["error"]}
               for r, res in enumerate(results) if "error" in res]
    for s in skipped:
        logger.warning("repetition %d skipped: %s", s["repetition"], s["error"])
    if len(skipped) > 0.2 * config.repetitions:
        raise RuntimeError(f"{len(skipped)} of {config.repetitions} repetitions failed; "
                           f"first error: {skipped[0]['error']}")
    good = [res for res in results if "error" not in res]

    models, raw = {}, {}
    for name in config.models:
        c = [res["models"][name]["c_index"] for res in good]
        ibs = [res["models"][name]["ibs"] for res in good]
        curve = np.mean([res["models"][name]["curve"] for res in good], axis=0)
        raw[name] = {"c_index": c, "ibs": ibs}
        models[name] = {"c_index": boxplot_stats(c), "ibs": boxplot_stats(ibs),
                        "brier_curve": curve.tolist()}
    summary = {"n": data.n, "p": data.p, "event_rate": data.event_rate,
               "feature_names": list(data.feature_names)}
    return ExperimentReport(config.name, config.seed, config.to_dict(), models, raw,
                            curve_times.tolist(), config.repetitions, skipped, summary)


def write_report(report: ExperimentReport, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rpath = out / f"{report.name}_report.json"
    cpath = out / f"{report.name}_brier.csv"
    rpath.write_text(report.to_json() + "\n", encoding="utf-8")
    cpath.write_text(report.curves_csv(), encoding="utf-8")
    return rpath, cpath
