"""Command-line driver: ``simulate``, ``train``, ``evaluate`` and ``benchmark``.

Exit codes: 0 on success, 1 when fitting or evaluation fails, 2 for usage,
configuration and schema errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, bench, classic, metrics, mtlr, nmtlr, simulate
from .bench import ConfigError
from .core import RowError, SchemaError, category_levels, load_csv, make_time_grid
from .persist import ModelFormatError, load_model, save_model

logger = logging.getLogger("survmtlr")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
USAGE_ERRORS = (ConfigError, SchemaError, RowError, ModelFormatError, FileNotFoundError)

TRAIN_KEYS = {"schema", "grid", "seed", "coxph", "mtlr", "nmtlr"}
SCHEMA_KEYS = {"time_column", "event_column", "categorical_columns"}


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _rate(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {text}")
    return value


def _read_json(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def write_dataset_csv(dataset, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*dataset.feature_names, "time", "event"])
        for x, t, e in zip(dataset.features, dataset.times, dataset.events):
            w.writerow([repr(float(v)) for v in x] + [repr(float(t)), int(e)])


def cmd_simulate(args) -> int:
    cfg = simulate.SimConfig(n=args.n, risk_kind=args.risk, seed=args.seed,
                             target_event_rate=args.event_rate, form=args.form)
    data = simulate.generate(cfg)
    write_dataset_csv(data, args.out)
    q = np.quantile(data.times, [0.25, 0.5, 0.75])
    print(json.dumps({"n": data.n, "event_rate": round(data.event_rate, 6),
                      "time_quantiles": {"q25": float(q[0]), "median": float(q[1]),
                                         "q75": float(q[2])},
                      "out": str(args.out)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def parse_train_config(doc: dict, kind: str) -> dict:
    unknown = set(doc) - TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    schema = doc.get("schema")
    if not isinstance(schema, dict):
        raise ConfigError("config needs a 'schema' object with time_column and event_column")
    unknown = set(schema) - SCHEMA_KEYS
    if unknown:
        raise ConfigError(f"schema: unknown keys {sorted(unknown)}")
    for key in ("time_column", "event_column"):
        if key not in schema:
            raise ConfigError(f"schema: missing {key!r}")
    grid = doc.get("grid", {})
    unknown = set(grid) - {"num_intervals", "strategy"}
    if unknown:
        raise ConfigError(f"grid: unknown keys {sorted(unknown)}")
    params = dict(doc.get(kind, {}))
    spec = {"kind": kind, **params}
    allowed = bench._MODEL_KEYS[kind]
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigError(f"{kind}: unknown keys {sorted(unknown)}")
    if kind == "nmtlr":
        try:
            nmtlr.TrainConfig.from_dict(params.get("train"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"nmtlr.train: {exc}") from None
    return {"schema": {"categorical_columns": [], **schema}, "grid": grid, "spec": spec,
            "seed": int(doc.get("seed", 0))}


def cmd_train(args) -> int:
    cfg = parse_train_config(_read_json(args.config), args.model)
    schema = cfg["schema"]
    data = load_csv(args.data, schema["time_column"], schema["event_column"],
                    schema["categorical_columns"])
    schema = {**schema, "levels": category_levels(args.data, schema["categorical_columns"])}
    grid = None
    if args.model != "coxph":
        grid = make_time_grid(data.times, data.events, cfg["grid"].get("num_intervals"),
                              cfg["grid"].get("strategy", "quantile"))
    model = bench.fit_model(cfg["spec"], data, grid, cfg["seed"])
    save_model(model, args.out, schema, data.feature_names)
    summary = {"model": args.model, "n": data.n, "out": str(args.out)}
    if args.model == "coxph":
        summary.update(loglik=model.loglik, iterations=model.n_iter)
    elif args.model == "mtlr":
        summary.update(final_loss=model.final_loss, iterations=model.n_iter)
    else:
        summary.update(final_loss=model.final_loss, epochs=model.epochs_run,
                       best_epoch=model.best_epoch)
    print(json.dumps(summary))
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _load_with_schema(path, doc):
    schema = doc.get("schema") or {}
    if "time_column" not in schema or "event_column" not in schema:
        raise ModelFormatError("model file has no data schema")
    data = load_csv(path, schema["time_column"], schema["event_column"],
                    schema.get("categorical_columns", ()), schema.get("levels"))
    expected = list(doc.get("feature_names") or [])
    if expected and list(data.feature_names) != expected:
        raise SchemaError(f"{path}: feature columns {list(data.feature_names)} "
                          f"do not match the model's {expected}")
    return data


def evaluate_document(model, data, train, ibs_points: int = 100) -> dict:
    g_hat = classic.censoring_km(train.times, train.events)
    risk = model.risk(data.features)
    try:
        c = metrics.c_index(data.times, data.events, risk)
    except metrics.UndefinedMetricError:
        c = None
    t = metrics.ibs_grid(data.times, ibs_points, g_hat)
    bs = metrics.weighted_brier_curve(t, data.times, data.events,
                                      model.predict_survival_matrix(data.features, t), g_hat)
    return {"n": data.n, "events": int(data.events.sum()), "c_index": c,
            "ibs": metrics.integrated_brier(t, bs),
            "brier_curve": {"times": t.tolist(), "brier": bs.tolist()}}


def cmd_evaluate(args) -> int:
    model, doc = load_model(args.model)
    data = _load_with_schema(args.data, doc)
    train = _load_with_schema(args.train_data, doc)
    out = {"model": str(args.model), "kind": doc["kind"], "data": str(args.data),
           **evaluate_document(model, data, train)}
    _write_json(args.out, out)
    print(json.dumps({"c_index": out["c_index"], "ibs": out["ibs"], "out": str(args.out)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

def cmd_benchmark(args) -> int:
    config = bench.ExperimentConfig.load(args.config)
    if args.repetitions is not None:
        config = replace(config, repetitions=args.repetitions)
    if args.jobs is not None:
        config = replace(config, n_jobs=args.jobs)
    report = bench.run_experiment(config)
    rpath, cpath = bench.write_report(report, args.out)
    print(report.table())
    if report.skipped:
        print(f"skipped repetitions: {len(report.skipped)}")
    print(f"report: {rpath}\nbrier curves: {cpath}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survmtlr",
                                     description="CoxPH, MTLR and neural MTLR survival models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated dataset as CSV")
    p.add_argument("--risk", required=True, choices=simulate.RISK_KINDS)
    p.add_argument("--n", required=True, type=_positive_int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--event-rate", type=_rate, default=0.4)
    p.add_argument("--form", choices=simulate.FORMS, default="hazard")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit a model and save it as JSON")
    p.add_argument("--model", required=True, choices=bench.MODEL_KINDS)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="C-index, IBS and Brier curve of a saved model")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--train-data", required=True, type=Path,
                   help="training data, used for the censoring distribution")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="run a repeated-split experiment")
    p.add_argument("--config", required=True,
                   help="JSON config path or a shipped name: "
                        + ", ".join(bench.SHIPPED_EXPERIMENTS))
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--repetitions", type=_positive_int, default=None)
    p.add_argument("--jobs", type=_positive_int, default=None)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"survmtlr {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (mtlr.FitError, classic.ConvergenceError, simulate.CalibrationError,
            RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"survmtlr {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
