"""Kaplan-Meier estimation and the Cox proportional hazards model."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Scaler, SurvivalDataset, as_matrix

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    """Newton iterations stopped before the convergence test passed."""

    def __init__(self, message, beta=None, gradient_norm=None):
        super().__init__(message)
        self.beta = beta
        self.gradient_norm = gradient_norm


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function with jumps at ``knots``.

    ``f(t) = values[i]`` for ``knots[i] <= t < knots[i+1]``; before the
    first knot the function takes ``values[0]``.
    """

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=np.float64).ravel()
        values = np.array(self.values, dtype=np.float64).ravel()
        if knots.shape != values.shape or knots.size == 0:
            raise ValueError("knots and values must be nonempty and of equal length")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        knots.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    def __call__(self, t):
        idx = np.searchsorted(self.knots, np.asarray(t, dtype=np.float64), side="right") - 1
        return self.values[np.clip(idx, 0, None)]

    def left_limit(self, t):
        """Value just before ``t``; at or before the first knot, ``values[0]``."""
        idx = np.searchsorted(self.knots, np.asarray(t, dtype=np.float64), side="left") - 1
        return self.values[np.clip(idx, 0, None)]


class SurvivalCurve(StepFunction):
    """Nonincreasing step survival function in [0, 1]."""

    def __post_init__(self):
        super().__post_init__()
        v = self.values
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ValueError("survival probabilities must lie in [0, 1]")
        if np.any(np.diff(v) > 1e-12):
            raise ValueError("survival curve must be nonincreasing")


# ---------------------------------------------------------------------------
# Kaplan-Meier
# ---------------------------------------------------------------------------

def _event_table(times, events):
    times = np.asarray(times, dtype=np.float64).ravel()
    events = np.asarray(events, dtype=bool).ravel()
    uniq, inverse = np.unique(times, return_inverse=True)
    d = np.bincount(inverse, weights=events.astype(np.float64), minlength=uniq.size)
    counts = np.bincount(inverse, minlength=uniq.size)
    at_risk = counts[::-1].cumsum()[::-1].astype(np.float64)
    return uniq, d, at_risk


def km_fit(times, events) -> SurvivalCurve:
    r"""Product-limit estimate :math:`\prod_{t_j \le t} (1 - d_j / r_j)`.

    Knots are 0 followed by the distinct event times.
    """
    uniq, d, r = _event_table(times, events)
    if uniq.size == 0:
        raise ValueError("km_fit needs at least one observation")
    has_event = d > 0
    t_ev = uniq[has_event]
    surv = np.cumprod(1.0 - d[has_event] / r[has_event])
    if t_ev.size and t_ev[0] == 0.0:
        return SurvivalCurve(t_ev, surv)
    return SurvivalCurve(np.concatenate([[0.0], t_ev]), np.concatenate([[1.0], surv]))


def censoring_km(times, events) -> SurvivalCurve:
    """Kaplan-Meier estimate of the censoring survival ``G(t) = P[C > t]``."""
    return km_fit(times, ~np.asarray(events, dtype=bool))


# ---------------------------------------------------------------------------
# Cox partial likelihood
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _RiskSets:
    """Index bookkeeping for the partial likelihood, computed once per fit."""

    order: np.ndarray         # rows sorted by time
    first: np.ndarray         # per distinct event time: first sorted row at risk
    groups: np.ndarray        # per event row (sorted order): distinct-event-time index
    event_rows: np.ndarray    # original row of each event, grouped by time
    d: np.ndarray             # events per distinct event time
    event_times: np.ndarray
    tie_group: np.ndarray     # per Efron term: distinct-event-time index
    tie_frac: np.ndarray      # per Efron term: l / d_j


def _risk_sets(times, events) -> _RiskSets:
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    order = np.argsort(times, kind="stable")
    ts = times[order]
    ev_sorted = events[order]
    event_times = np.unique(ts[ev_sorted])
    first = np.searchsorted(ts, event_times, side="left")
    event_rows = order[ev_sorted]
    groups = np.searchsorted(event_times, times[event_rows])
    d = np.bincount(groups, minlength=event_times.size)
    tie_group = np.repeat(np.arange(event_times.size), d)
    starts = np.cumsum(d) - d
    tie_frac = (np.arange(tie_group.size) - starts[tie_group]) / d[tie_group]
    return _RiskSets(order, first, groups, event_rows, d, event_times, tie_group, tie_frac)


def _reverse_cumsum(a):
    return a[::-1].cumsum(axis=0)[::-1]


def partial_loglik(beta, X, times, events, ties: str = "efron", *, with_derivatives=True,
                   _rs: _RiskSets | None = None):
    """Log partial likelihood with Efron or Breslow tie handling.

    Returns ``(loglik, gradient, hessian)``; the derivatives are ``None``
    when ``with_derivatives`` is false.
    """
    if ties not in ("efron", "breslow"):
        raise ValueError(f"unknown tie method {ties!r}")
    X = np.asarray(X, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    rs = _risk_sets(times, events) if _rs is None else _rs
    p = X.shape[1]
    if rs.event_times.size == 0:
        return 0.0, np.zeros(p), np.zeros((p, p))

    eta = X @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    Xs = X[rs.order]
    ws = w[rs.order]
    risk0 = _reverse_cumsum(ws)[rs.first]
    risk1 = _reverse_cumsum(ws[:, None] * Xs)[rs.first]

    Xe = X[rs.event_rows]
    we = w[rs.event_rows]
    G = rs.event_times.size
    ev0 = np.bincount(rs.groups, weights=we, minlength=G)
    ev1 = np.zeros((G, p))
    np.add.at(ev1, rs.groups, we[:, None] * Xe)

    g, frac = rs.tie_group, rs.tie_frac
    if ties == "breslow":
        frac = np.zeros_like(frac)
    den = risk0[g] - frac * ev0[g]
    loglik = float(eta[rs.event_rows].sum() - np.sum(np.log(den) + shift))
    if not with_derivatives:
        return loglik, None, None

    num1 = risk1[g] - frac[:, None] * ev1[g]
    mean1 = num1 / den[:, None]
    grad = Xe.sum(axis=0) - mean1.sum(axis=0)

    risk2 = _reverse_cumsum(ws[:, None, None] * Xs[:, :, None] * Xs[:, None, :])[rs.first]
    ev2 = np.zeros((G, p, p))
    np.add.at(ev2, rs.groups, we[:, None, None] * Xe[:, :, None] * Xe[:, None, :])
    num2 = risk2[g] - frac[:, None, None] * ev2[g]
    hess = -(np.sum(num2 / den[:, None, None], axis=0) - mean1.T @ mean1)
    return loglik, grad, hess


def breslow_cumhaz(beta, X, times, events) -> StepFunction:
    r"""Breslow baseline
    :math:`\Lambda_0(t)=\sum_{t_j\le t} d_j / \sum_{k \in R_j} e^{x_k\beta}`."""
    rs = _risk_sets(times, events)
    eta = np.asarray(X, dtype=np.float64) @ np.asarray(beta, dtype=np.float64)
    ws = np.exp(eta)[rs.order]
    risk0 = _reverse_cumsum(ws)[rs.first]
    increments = rs.d / risk0
    return StepFunction(np.concatenate([[0.0], rs.event_times]),
                        np.concatenate([[0.0], np.cumsum(increments)]))


# ---------------------------------------------------------------------------
# Cox model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoxModel:
    """Fitted Cox model.

    ``beta`` acts on standardized covariates ``scaler.transform(x)``; use
    :attr:`coef` for coefficients on the original scale.
    """

    beta: np.ndarray
    baseline_cumhaz: StepFunction
    scaler: Scaler
    ties: str = "efron"
    loglik: float = float("nan")
    n_iter: int = 0

    @property
    def coef(self) -> np.ndarray:
        return self.beta / self.scaler.std_devs

    def risk(self, X) -> np.ndarray:
        return self.scaler.transform(as_matrix(X, self.scaler.p)) @ self.beta

    def predict_survival_matrix(self, X, times) -> np.ndarray:
        """``S(t | x)`` for every row of ``X`` (rows) and time (columns)."""
        cumhaz = self.baseline_cumhaz(np.asarray(times, dtype=np.float64))
        rel = np.exp(self.risk(X))
        return np.exp(-np.outer(rel, cumhaz))

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "ties": self.ties,
                "baseline_knots": self.baseline_cumhaz.knots.tolist(),
                "baseline_values": self.baseline_cumhaz.values.tolist(),
                "scaler": self.scaler.to_dict(), "loglik": self.loglik, "n_iter": self.n_iter}

    @classmethod
    def from_dict(cls, d: dict) -> "CoxModel":
        return cls(np.asarray(d["beta"], dtype=np.float64),
                   StepFunction(d["baseline_knots"], d["baseline_values"]),
                   Scaler.from_dict(d["scaler"]), d["ties"], d.get("loglik", float("nan")),
                   d.get("n_iter", 0))


def coxph_fit(dataset: SurvivalDataset, ties: str = "efron", max_iter: int = 100,
              tol: float = 1e-9, ridge: float = 0.0) -> CoxModel:
    """Maximize the penalized log partial likelihood by Newton-Raphson.

    Each step is halved until the objective does not decrease.  Stops when
    ``max|score| / N < tol`` or the relative log-likelihood change is below
    ``tol``.  ``ridge`` adds ``-(ridge / 2) * ||beta||^2`` to the objective.
    """
    dataset.require_events()
    scaler = Scaler.fit(dataset.features)
    X = scaler.transform(dataset.features)
    times, events = dataset.times, dataset.events
    n, p = X.shape
    rs = _risk_sets(times, events)

    def objective(b, derivs=True):
        ll, g, h = partial_loglik(b, X, times, events, ties, with_derivatives=derivs, _rs=rs)
        ll -= 0.5 * ridge * float(b @ b)
        if derivs:
            g = g - ridge * b
            h = h - ridge * np.eye(p)
        return ll, g, h

    beta = np.zeros(p)
    ll, grad, hess = objective(beta)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad), initial=0.0) / n < tol:
            break
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular Hessian in Cox fit; try ridge > 0", beta,
                                   float(np.linalg.norm(grad))) from None
        if not np.all(np.isfinite(step)):
            raise ConvergenceError("non-finite Newton step; try ridge > 0", beta,
                                   float(np.linalg.norm(grad)))
        scale = 1.0
        for _ in range(60):
            cand = beta + scale * step
            ll_new, _, _ = objective(cand, derivs=False)
            if np.isfinite(ll_new) and ll_new >= ll:
                break
            scale *= 0.5
        else:
            # no ascent along the Newton direction: at the optimum to machine precision
            break
        rel = abs(ll_new - ll) / max(abs(ll), 1.0)
        beta = cand
        ll, grad, hess = objective(beta)
        if rel < tol:
            break
    else:
        raise ConvergenceError(f"Cox fit did not converge in {max_iter} iterations", beta,
                               float(np.linalg.norm(grad)))

    baseline = breslow_cumhaz(beta, X, times, events)
    return CoxModel(beta, baseline, scaler, ties, float(ll), it)


def coxph_predict_survival(model: CoxModel, x, eval_times=None) -> SurvivalCurve:
    """Survival curve ``exp(-Lambda_0(t) exp(x_std . beta))`` for one unit.

    Without ``eval_times`` the curve keeps the baseline's own knots.
    """
    x = as_matrix(x, model.scaler.p)[:1]
    if eval_times is None:
        knots = model.baseline_cumhaz.knots
    else:
        knots = np.unique(np.concatenate([[0.0], np.asarray(eval_times, dtype=np.float64)]))
    return SurvivalCurve(knots, model.predict_survival_matrix(x, knots)[0])


def coxph_risk(model: CoxModel, x):
    """Log relative risk ``x_std . beta`` (scalar for one row, array for many)."""
    r = model.risk(x)
    return float(r[0]) if np.ndim(x) == 1 else r
