"""Synthetic right-censored survival data with Weibull event times.

Covariates: ``x1 ~ Exp(rate 0.1)``, ``x2 ~ Normal(10, variance 5)``,
``x3 ~ Poisson(5)``.  The linear predictor is
``-0.5 x1 + 9 x2 + 19 x3``; its sample-standardized version ``z`` drives
three risk shapes:

=========  ==================  ===============
kind       risk (``hazard``)   ``lambda_coef``
=========  ==================  ===============
linear     ``exp(z)``          0.01
square     ``z**2``            0.1
gaussian   ``exp(-z**2 / 2)``  0.1
=========  ==================  ===============

With the default ``form="hazard"`` the risk multiplies a Weibull hazard,
``S(t | x) = exp(-lambda t**p)`` with ``lambda = lambda_coef * risk``, so
the linear kind satisfies proportional hazards with a log-linear risk.
``form="scale"`` instead uses ``lambda`` as a Weibull scale,
``T = lambda (-ln U)**(1/p)``, with the raw linear predictor as the linear
risk.  Censoring times are exponential with a rate bisected until the
observed event fraction hits the target.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import SurvivalDataset, make_rng

RISK_KINDS = ("linear", "square", "gaussian")
FORMS = ("hazard", "scale")
LINEAR_WEIGHTS = np.array([-0.5, 9.0, 19.0])
DEFAULT_LAMBDA = {"linear": 0.01, "square": 0.1, "gaussian": 0.1}
RISK_FLOOR = 1e-12


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n: int = 3000
    risk_kind: str = "linear"
    weibull_shape: float = 2.1
    lambda_coef: float | None = None     # None: per-kind default
    target_event_rate: float = 0.40
    seed: int = 0
    form: str = "hazard"
    rate_tolerance: float = 0.02

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.risk_kind not in RISK_KINDS:
            raise ValueError(f"unknown risk kind {self.risk_kind!r}; choose from {RISK_KINDS}")
        if self.form not in FORMS:
            raise ValueError(f"unknown form {self.form!r}; choose from {FORMS}")
        if self.weibull_shape <= 0:
            raise ValueError("weibull_shape must be positive")
        if self.lambda_coef is not None and self.lambda_coef <= 0:
            raise ValueError("lambda_coef must be positive")
        if not 0 < self.target_event_rate < 1:
            raise ValueError("target_event_rate must lie in (0, 1)")

    @property
    def coef(self) -> float:
        return DEFAULT_LAMBDA[self.risk_kind] if self.lambda_coef is None else self.lambda_coef

    def to_dict(self) -> dict:
        return asdict(self)


def sample_covariates(n: int, seed: int) -> np.ndarray:
    rng = make_rng(seed, "covariates")
    x1 = rng.exponential(scale=10.0, size=n)
    x2 = rng.normal(10.0, np.sqrt(5.0), size=n)
    x3 = rng.poisson(5.0, size=n).astype(np.float64)
    return np.column_stack([x1, x2, x3])


def linear_predictor(X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return X @ LINEAR_WEIGHTS


@dataclass(frozen=True)
class LinearStandardizer:
    """Mean and (population) std of the linear predictor over a sample."""

    mean: float
    std: float

    @classmethod
    def fit(cls, X) -> "LinearStandardizer":
        lp = linear_predictor(X)
        std = float(lp.std())
        return cls(float(lp.mean()), std if std > 0 else 1.0)

    def __call__(self, X) -> np.ndarray:
        return (linear_predictor(X) - self.mean) / self.std


def risk_score(X, kind: str, standardizer: LinearStandardizer | None = None,
               form: str = "hazard") -> np.ndarray:
    """Risk per row (see the module table).  ``standardizer`` defaults to
    one fitted on ``X`` itself."""
    if kind not in RISK_KINDS:
        raise ValueError(f"unknown risk kind {kind!r}; choose from {RISK_KINDS}")
    if kind == "linear" and form == "scale":
        return linear_predictor(X)
    z = (standardizer or LinearStandardizer.fit(X))(X)
    if kind == "linear":
        return np.exp(z)
    if kind == "square":
        return z ** 2
    return np.exp(-0.5 * z ** 2)


def sample_event_times(risks, lambda_coef: float, shape: float, seed: int,
                       form: str = "hazard") -> np.ndarray:
    """Weibull draws by inversion of ``U ~ Uniform(0, 1)``.

    ``hazard``: ``T = (-ln U / lambda)**(1/shape)``;
    ``scale``:  ``T = lambda * (-ln U)**(1/shape)``;
    with ``lambda = lambda_coef * max(risk, 1e-12)``.
    """
    lam = lambda_coef * np.maximum(np.asarray(risks, dtype=np.float64), RISK_FLOOR)
    u = make_rng(seed, "event_times").random(lam.shape)
    e = -np.log1p(-u)          # Exp(1); 1 - U is uniform on (0, 1]
    e = np.maximum(e, np.finfo(float).tiny)
    if form == "hazard":
        return (e / lam) ** (1.0 / shape)
    if form == "scale":
        return lam * e ** (1.0 / shape)
    raise ValueError(f"unknown form {form!r}")


def censor_with_rate(event_times, rate: float, seed: int):
    """Exponential(rate) censoring; returns observed times and event flags."""
    t = np.asarray(event_times, dtype=np.float64)
    c = _unit_exponentials(t.size, seed) / rate
    return np.minimum(t, c), t <= c


def _unit_exponentials(n, seed):
    u = make_rng(seed, "censoring").random(n)
    return np.maximum(-np.log1p(-u), np.finfo(float).tiny)


def apply_censoring(event_times, target_event_rate: float = 0.40, seed: int = 0,
                    tolerance: float = 0.02, max_steps: int = 60):
    """Calibrate exponential censoring to ``target_event_rate``.

    The unit exponential draws are fixed, so the event fraction is
    monotone in the rate and bisection on ``log(rate)`` converges.
    Returns ``(observed_times, events, rate)``.
    """
    if not 0 < target_event_rate < 1:
        raise ValueError("target_event_rate must lie in (0, 1)")
    t = np.asarray(event_times, dtype=np.float64)
    base = _unit_exponentials(t.size, seed)

    def fraction(rate):
        return float(np.mean(t <= base / rate))

    lo = np.log(1e-6 / t.max())      # almost no censoring
    hi = np.log(1e6 / t.min())       # almost everything censored
    achieved = None
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        achieved = fraction(np.exp(mid))
        if abs(achieved - target_event_rate) <= tolerance:
            rate = float(np.exp(mid))
            c = base / rate
            return np.minimum(t, c), t <= c, rate
        if achieved > target_event_rate:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"censoring calibration failed: event rate {achieved:.3f} "
                           f"vs target {target_event_rate:.3f}")


def generate(config: SimConfig | None = None, **kwargs) -> SurvivalDataset:
    """Draw a full simulated dataset (features are the raw covariates)."""
    cfg = config or SimConfig(**kwargs)
    X = sample_covariates(cfg.n, cfg.seed)
    risks = risk_score(X, cfg.risk_kind, form=cfg.form)
    t = sample_event_times(risks, cfg.coef, cfg.weibull_shape, cfg.seed, cfg.form)
    observed, events, _ = apply_censoring(t, cfg.target_event_rate, cfg.seed,
                                          cfg.rate_tolerance)
    return SurvivalDataset(X, observed, events, ("x1", "x2", "x3"))
