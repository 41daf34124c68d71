"""Datasets, time grids, MTLR target encoding, preprocessing and splitting."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none", "?"})


class SchemaError(ValueError):
    """The input does not follow the expected columns or value domains."""


class RowError(ValueError):
    """A single CSV row could not be parsed."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def derive_seed(seed: int, *labels) -> int:
    """Derive a child seed from a master seed and a task label.

    The derivation is ``sha256("<seed>/<label1>/<label2>...")`` truncated to
    64 bits, so it is identical on every platform and Python version.
    """
    key = "/".join([str(int(seed))] + [str(label) for label in labels])
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")


def make_rng(seed: int, *labels) -> np.random.Generator:
    """PCG64 generator for the stream ``(seed, *labels)``."""
    if labels:
        seed = derive_seed(seed, *labels)
    return np.random.Generator(np.random.PCG64(int(seed)))


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored data: one row of covariates, an observed time and an
    event flag (``True`` when the event was observed) per unit."""

    features: np.ndarray
    times: np.ndarray
    events: np.ndarray
    feature_names: tuple = ()
    dropped_rows: int = 0

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        times = np.asarray(self.times, dtype=np.float64).ravel()
        events = np.asarray(self.events).ravel()
        if events.dtype != bool:
            if not np.all(np.isin(events, (0, 1))):
                raise SchemaError("event indicators must be 0/1")
            events = events.astype(bool)
        n = times.shape[0]
        if features.shape[0] != n or events.shape[0] != n:
            raise ValueError(
                f"length mismatch: features {features.shape[0]}, times {n}, "
                f"events {events.shape[0]}")
        if not np.all(np.isfinite(times)) or np.any(times < 0):
            raise ValueError("times must be finite and nonnegative")
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(features.shape[1]))
        if len(names) != features.shape[1]:
            raise ValueError("feature_names does not match the number of columns")
        object.__setattr__(self, "features", _frozen(features, np.float64))
        object.__setattr__(self, "times", _frozen(times, np.float64))
        object.__setattr__(self, "events", _frozen(events, bool))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def event_rate(self) -> float:
        return float(self.events.mean()) if self.n else float("nan")

    def subset(self, index) -> "SurvivalDataset":
        index = np.asarray(index)
        return SurvivalDataset(self.features[index], self.times[index], self.events[index],
                               self.feature_names)

    def with_features(self, features) -> "SurvivalDataset":
        return SurvivalDataset(features, self.times, self.events, self.feature_names,
                               self.dropped_rows)

    def require_events(self):
        if self.n < 1:
            raise ValueError("dataset is empty")
        if not self.events.any():
            raise ValueError("at least one observed event is required to fit a model")


@dataclass(frozen=True)
class TimeGrid:
    """Finite interval boundaries tau_1 < ... < tau_K.

    Interval ``s`` (1-based) is ``[tau_{s-1}, tau_s)`` with ``tau_0 = 0`` and
    ``tau_{K+1} = inf``, so there are ``K + 1`` intervals.
    """

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64).ravel()
        if b.size < 1:
            raise ValueError("a time grid needs at least one finite boundary")
        if not np.all(np.isfinite(b)) or np.any(b <= 0):
            raise ValueError("boundaries must be finite and positive")
        if np.any(np.diff(b) <= 0):
            raise ValueError("boundaries must be strictly increasing")
        object.__setattr__(self, "boundaries", _frozen(b, np.float64))

    @property
    def K(self) -> int:
        return self.boundaries.size

    @property
    def num_intervals(self) -> int:
        return self.boundaries.size + 1

    def interval_of(self, times) -> np.ndarray:
        """1-based index of the interval holding each time (closed on the left)."""
        times = np.asarray(times, dtype=np.float64)
        return np.searchsorted(self.boundaries, times, side="right") + 1


@dataclass(frozen=True)
class EncodedTargets:
    """Interval index (1-based) and event flag per unit.

    For an event in interval ``s`` the implied response vector has zeros
    before ``s`` and ones from ``s`` onwards.
    """

    interval_index: np.ndarray
    is_event: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "interval_index", _frozen(self.interval_index, np.int64))
        object.__setattr__(self, "is_event", _frozen(self.is_event, bool))

    def __len__(self):
        return self.interval_index.shape[0]

    def response_matrix(self, grid: TimeGrid) -> np.ndarray:
        """0/1 matrix ``Y`` of shape (N, K+1) with ``y_j = 1[j >= s]``."""
        cols = np.arange(1, grid.num_intervals + 1)
        return (cols[None, :] >= self.interval_index[:, None]).astype(np.float64)


@dataclass(frozen=True)
class Scaler:
    """Column means and standard deviations (divisor N).

    Zero-variance columns get ``std_devs == 1`` and are flagged in
    ``zero_variance``.  Missing values are replaced by the stored mean.
    """

    means: np.ndarray
    std_devs: np.ndarray
    zero_variance: np.ndarray = field(default=None)

    def __post_init__(self):
        means = _frozen(self.means, np.float64)
        stds = _frozen(self.std_devs, np.float64)
        if means.shape != stds.shape:
            raise ValueError("means and std_devs must have the same shape")
        if np.any(stds <= 0):
            raise ValueError("std_devs must be positive")
        zv = self.zero_variance
        zv = np.zeros(means.shape, bool) if zv is None else zv
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "std_devs", stds)
        object.__setattr__(self, "zero_variance", _frozen(zv, bool))

    @classmethod
    def fit(cls, features) -> "Scaler":
        X = np.asarray(features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            means = np.nanmean(X, axis=0)
            stds = np.nanstd(X, axis=0)
        means = np.where(np.isfinite(means), means, 0.0)
        stds = np.where(np.isfinite(stds), stds, 0.0)
        zero = stds <= 1e-12 * np.maximum(1.0, np.abs(means))
        return cls(means, np.where(zero, 1.0, stds), zero)

    @classmethod
    def identity(cls, p: int) -> "Scaler":
        return cls(np.zeros(p), np.ones(p))

    @property
    def p(self) -> int:
        return self.means.shape[0]

    def transform(self, features) -> np.ndarray:
        X = np.array(features, dtype=np.float64, copy=True)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} feature columns, got {X.shape[1]}")
        missing = np.isnan(X)
        if missing.any():
            X[missing] = np.broadcast_to(self.means, X.shape)[missing]
        return (X - self.means) / self.std_devs

    def inverse_transform(self, features_std) -> np.ndarray:
        return np.asarray(features_std, dtype=np.float64) * self.std_devs + self.means

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "std_devs": self.std_devs.tolist(),
                "zero_variance": self.zero_variance.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(d["means"], d["std_devs"], d.get("zero_variance"))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def _is_missing(token: str) -> bool:
    return token.strip().lower() in MISSING_TOKENS


def _parse_float(token: str, line: int, column: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise RowError(line, f"column {column!r}: cannot parse {token!r} as a number") from None


def _read_table(path: Path):
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file (header row required)") from None
        body = [(lineno, row) for lineno, row in enumerate(reader, start=2) if row]
    return header, body


def _observed_levels(header, body, column) -> list[str]:
    i = header.index(column)
    return sorted({row[i].strip() for _, row in body
                   if len(row) == len(header) and not _is_missing(row[i])})


def category_levels(path, categorical_columns: Iterable[str]) -> dict[str, list[str]]:
    """Sorted observed levels of each categorical column (the first one is
    the reference level dropped by :func:`load_csv`)."""
    path = Path(path)
    header, body = _read_table(path)
    out = {}
    for c in categorical_columns:
        if c not in header:
            raise SchemaError(f"missing column {c!r} in {path}")
        out[c] = _observed_levels(header, body, c)
    return out


def load_csv(path, time_column: str, event_column: str,
             categorical_columns: Iterable[str] = (),
             levels: dict[str, list[str]] | None = None) -> SurvivalDataset:
    """Read a comma-separated file with a header row into a dataset.

    Categorical columns are one-hot encoded with their first (sorted) level
    dropped.  Pass ``levels`` (as returned by :func:`category_levels` on the
    training file) to reuse a fixed encoding; an unseen level is then a
    :class:`SchemaError`.  Rows with a missing time or event are dropped and
    counted in ``dropped_rows``; missing covariates are kept as NaN and later
    imputed by :class:`Scaler` with the training mean.
    """
    categorical = list(categorical_columns)
    path = Path(path)
    header, body = _read_table(path)

    for col in [time_column, event_column, *categorical]:
        if col not in header:
            raise SchemaError(f"missing column {col!r} in {path}")
    pos = {name: i for i, name in enumerate(header)}
    feature_cols = [h for h in header if h not in (time_column, event_column)]

    fixed = dict(levels or {})
    levels = {}
    for c in categorical:
        seen = _observed_levels(header, body, c)
        if c in fixed:
            unseen = sorted(set(seen) - set(fixed[c]))
            if unseen:
                raise SchemaError(f"column {c!r}: levels {unseen} not seen in training data")
            levels[c] = list(fixed[c])
        else:
            levels[c] = seen
    names: list[str] = []
    for c in feature_cols:
        if c in levels:
            names.extend(f"{c}={lv}" for lv in levels[c][1:])
        else:
            names.append(c)

    times, events, rows = [], [], []
    dropped = 0
    for lineno, row in body:
        if len(row) != len(header):
            raise RowError(lineno, f"expected {len(header)} fields, found {len(row)}")
        t_tok, e_tok = row[pos[time_column]], row[pos[event_column]]
        if _is_missing(t_tok) or _is_missing(e_tok):
            dropped += 1
            continue
        t = _parse_float(t_tok, lineno, time_column)
        e = _parse_float(e_tok, lineno, event_column)
        if e not in (0.0, 1.0):
            raise SchemaError(f"line {lineno}: event column {event_column!r} must hold 0 or 1, "
                              f"found {e_tok!r}")
        if t < 0 or not math.isfinite(t):
            raise RowError(lineno, f"time {t_tok!r} must be finite and nonnegative")
        values: list[float] = []
        for c in feature_cols:
            tok = row[pos[c]].strip()
            if c in levels:
                lv = levels[c][1:]
                if _is_missing(tok):
                    values.extend([math.nan] * len(lv))
                else:
                    values.extend(1.0 if tok == level else 0.0 for level in lv)
            else:
                values.append(math.nan if _is_missing(tok) else _parse_float(tok, lineno, c))
        times.append(t)
        events.append(e == 1.0)
        rows.append(values)

    if dropped:
        logger.warning("%s: dropped %d rows with missing time/event", path, dropped)
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return SurvivalDataset(features, times, events, tuple(names), dropped_rows=dropped)


def standardize(dataset: SurvivalDataset) -> tuple[SurvivalDataset, Scaler]:
    """Center and scale every column (population std); impute NaN by the mean."""
    if dataset.n < 2:
        raise ValueError("standardize needs at least two rows")
    scaler = Scaler.fit(dataset.features)
    if scaler.zero_variance.any():
        flagged = [n for n, z in zip(dataset.feature_names, scaler.zero_variance) if z]
        logger.info("zero-variance columns left centered: %s", flagged)
    return dataset.with_features(scaler.transform(dataset.features)), scaler


def default_num_intervals(n_events: int) -> int:
    return int(min(100, max(3, math.ceil(math.sqrt(max(n_events, 0))))))


def make_time_grid(times, events, num_intervals: int | None = None,
                   strategy: str = "quantile") -> TimeGrid:
    """Choose ``num_intervals - 1`` finite boundaries from the event times.

    ``quantile`` puts them at equally spaced quantiles of the uncensored
    times (linear interpolation between order statistics), ``uniform``
    spaces them evenly on ``[0, max event time]``.  Duplicate or
    nonpositive boundaries are dropped with a warning.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    event_times = times[events]
    if event_times.size == 0:
        raise ValueError("a time grid needs at least one observed event")
    if num_intervals is None:
        num_intervals = default_num_intervals(event_times.size)
    if num_intervals < 2:
        raise ValueError("num_intervals must be at least 2")
    if strategy == "quantile":
        probs = np.arange(1, num_intervals) / num_intervals
        cand = np.quantile(event_times, probs, method="linear")
    elif strategy == "uniform":
        cand = np.linspace(0.0, event_times.max(), num_intervals + 1)[1:-1]
    else:
        raise ValueError(f"unknown grid strategy {strategy!r}")
    bounds = np.unique(cand[cand > 0])
    if bounds.size == 0:
        raise ValueError("event times leave no positive boundary")
    if bounds.size < num_intervals - 1:
        warnings.warn(f"time grid shrunk from {num_intervals - 1} to {bounds.size} boundaries "
                      "(not enough distinct event times)", stacklevel=2)
    return TimeGrid(bounds)


def encode_targets(dataset_or_times, grid: TimeGrid, events=None) -> EncodedTargets:
    """Map each observed time to its grid interval.

    Accepts a :class:`SurvivalDataset`, or raw ``times`` plus ``events``.
    """
    if isinstance(dataset_or_times, SurvivalDataset):
        times, events = dataset_or_times.times, dataset_or_times.events
    else:
        times = np.asarray(dataset_or_times, dtype=np.float64)
        events = np.ones(times.shape, bool) if events is None else np.asarray(events, bool)
    if np.any(times < 0):
        raise ValueError("negative survival time")
    return EncodedTargets(grid.interval_of(times), events)


def split_indices(n: int, test_fraction: float, seed: int,
                  events=None, max_attempts: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Sorted train/test row indices from a seeded permutation.

    When ``events`` is given the permutation is redrawn (up to
    ``max_attempts`` times) until the training part holds an event.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test > n - 1:
        raise ValueError(f"cannot split {n} rows with test_fraction={test_fraction}")
    rng = make_rng(seed, "split")
    ev = None if events is None else np.asarray(events, bool)
    for _ in range(max_attempts):
        perm = rng.permutation(n)
        test, train = np.sort(perm[:n_test]), np.sort(perm[n_test:])
        if ev is None or ev[train].any():
            return train, test
    raise ValueError(f"no split with an event in the training part after {max_attempts} draws")


def train_test_split(dataset: SurvivalDataset, test_fraction: float = 0.2,
                     seed: int = 0) -> tuple[SurvivalDataset, SurvivalDataset]:
    train, test = split_indices(dataset.n, test_fraction, seed, dataset.events)
    return dataset.subset(train), dataset.subset(test)


def builtin_csv(name: str) -> Path:
    """Path of a dataset shipped with the package (``veteran``, ``whas500``)."""
    path = Path(__file__).parent / "data" / f"{name}.csv"
    if not path.exists():
        raise FileNotFoundError(f"no bundled dataset named {name!r}")
    return path


BUILTIN_SCHEMAS = {
    "veteran": {"time_column": "time", "event_column": "status",
                "categorical_columns": ["celltype"]},
    "whas500": {"time_column": "lenfol", "event_column": "fstat",
                "categorical_columns": []},
}


def load_builtin(name: str) -> SurvivalDataset:
    schema = BUILTIN_SCHEMAS[name]
    return load_csv(builtin_csv(name), schema["time_column"], schema["event_column"],
                    schema["categorical_columns"])


def as_matrix(x, p: int | None = None) -> np.ndarray:
    X = np.asarray(x, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if p is not None and X.shape[1] != p:
        raise ValueError(f"expected {p} feature columns, got {X.shape[1]}")
    return X


__all__ = [
    "SchemaError", "RowError", "SurvivalDataset", "TimeGrid", "EncodedTargets", "Scaler",
    "derive_seed", "make_rng", "load_csv", "standardize", "make_time_grid", "encode_targets",
    "split_indices", "train_test_split", "default_num_intervals", "load_builtin", "builtin_csv",
    "category_levels", "BUILTIN_SCHEMAS",
]
