"""Censoring-aware evaluation: concordance, Brier score and its integral."""

from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy.integrate import trapezoid

from .classic import StepFunction

logger = logging.getLogger(__name__)

G_FLOOR = 1e-8


class UndefinedMetricError(ValueError):
    """The metric has no comparable pairs / observations to average over."""


def c_index(times, events, risks) -> float:
    """Harrell's concordance index.

    A pair is comparable when ``T_i > T_j`` and unit ``j`` had the event;
    it is concordant when ``eta_j > eta_i`` (the earlier failure has the
    higher risk).  Tied risks count one half.
    """
    times = np.asarray(times, dtype=np.float64).ravel()
    events = np.asarray(events, dtype=bool).ravel()
    risks = np.asarray(risks, dtype=np.float64).ravel()
    if not times.shape == events.shape == risks.shape:
        raise ValueError("times, events and risks must have equal length")
    num = 0.0
    den = 0
    ev = np.flatnonzero(events)
    for start in range(0, ev.size, 512):
        j = ev[start:start + 512]
        later = times[None, :] > times[j, None]
        den += int(later.sum())
        num += float(np.sum(later & (risks[j, None] > risks[None, :])))
        num += 0.5 * float(np.sum(later & (risks[j, None] == risks[None, :])))
    if den == 0:
        raise UndefinedMetricError("C-index undefined: no comparable pairs")
    return num / den


def brier(t: float, times, events, predicted_survival_at_t) -> float:
    """Brier score at ``t`` for data without censoring before ``t``."""
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    s = np.asarray(predicted_survival_at_t, dtype=np.float64)
    if np.any(~events & (times <= t)):
        raise ValueError("observations censored at or before t: use weighted_brier")
    return float(np.mean(((times > t).astype(np.float64) - s) ** 2))


def _weights(t, times, events, censor_curve: StepFunction):
    g_event = censor_curve.left_limit(times)
    g_t = float(censor_curve(t))
    floored = int(np.sum((g_event < G_FLOOR) & events & (times <= t)) + (g_t < G_FLOOR))
    return np.maximum(g_event, G_FLOOR), max(g_t, G_FLOOR), floored


def weighted_brier(t: float, times, events, predicted_survival_at_t,
                   censor_curve: StepFunction) -> float:
    """IPCW Brier score at ``t``.

    Events at or before ``t`` are weighted by ``1 / G(T_i-)``, survivors past
    ``t`` by ``1 / G(t)``; units censored at or before ``t`` contribute 0 but
    stay in the ``N`` denominator.  ``G`` is floored at 1e-8.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    s = np.asarray(predicted_survival_at_t, dtype=np.float64)
    g_ev, g_t, floored = _weights(t, times, events, censor_curve)
    if floored:
        warnings.warn(f"{floored} censoring weights floored at {G_FLOOR}", RuntimeWarning,
                      stacklevel=2)
    died = events & (times <= t)
    alive = times > t
    terms = np.where(died, s ** 2 / g_ev, 0.0) + np.where(alive, (1.0 - s) ** 2 / g_t, 0.0)
    return float(np.mean(terms))


def weighted_brier_curve(eval_times, times, events, survival_matrix,
                         censor_curve: StepFunction) -> np.ndarray:
    """Weighted Brier score at every ``eval_times[k]``; ``survival_matrix``
    holds ``S(eval_times[k] | x_i)`` in row ``i``, column ``k``."""
    eval_times = np.asarray(eval_times, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    S = np.asarray(survival_matrix, dtype=np.float64)
    if S.shape != (times.size, eval_times.size):
        raise ValueError(f"survival_matrix shape {S.shape} != ({times.size}, {eval_times.size})")
    g_ev = np.maximum(censor_curve.left_limit(times), G_FLOOR)
    g_t = np.maximum(censor_curve(eval_times), G_FLOOR)
    died = events[:, None] & (times[:, None] <= eval_times[None, :])
    alive = times[:, None] > eval_times[None, :]
    terms = (np.where(died, S ** 2 / g_ev[:, None], 0.0)
             + np.where(alive, (1.0 - S) ** 2 / g_t[None, :], 0.0))
    return terms.mean(axis=0)


def integrated_brier(eval_times, brier_values) -> float:
    """Trapezoid-rule average of ``BS(t)`` over the span of ``eval_times``."""
    t = np.asarray(eval_times, dtype=np.float64)
    bs = np.asarray(brier_values, dtype=np.float64)
    if t.size < 2 or bs.shape != t.shape:
        raise ValueError("need at least two evaluation times with one score each")
    if np.any(np.diff(t) < 0):
        raise ValueError("eval_times must be sorted")
    span = t[-1] - t[0]
    if span <= 0:
        raise ValueError("eval_times must span a positive range")
    return float(trapezoid(bs, t) / span)


def ibs_horizon(times, censor_curve: StepFunction | None = None) -> float:
    """Largest usable evaluation time: ``max(times)``, pulled back below the
    point where ``censor_curve`` reaches zero (if it does) so that no inverse
    weight is infinite.  The new end is the largest of ``times`` before that
    point, or the float just below it when no time qualifies."""
    times = np.asarray(times, dtype=np.float64)
    end = float(times.max())
    if censor_curve is None:
        return end
    zero = np.flatnonzero(censor_curve.values <= 0.0)
    if zero.size == 0 or censor_curve.knots[zero[0]] > end:
        return end
    t_zero = float(censor_curve.knots[zero[0]])
    before = times[times < t_zero]
    if before.size and before.max() > 0:
        return float(before.max())
    return float(np.nextafter(t_zero, -np.inf))


def ibs_grid(times, n_points: int = 100, censor_curve: StepFunction | None = None) -> np.ndarray:
    """``n_points`` equally spaced times on ``[0, ibs_horizon(times, censor_curve)]``."""
    return np.linspace(0.0, ibs_horizon(times, censor_curve), n_points)
