"""Linear multi-task logistic regression (MTLR).

A grid with ``K`` finite boundaries has ``K + 1`` intervals.  Each boundary
``j`` owns one logistic task with logit ``u_j = x . theta_j + b_j``.  The
score of interval ``s`` is the tail sum ``u_s + ... + u_K`` (the last
interval scores 0) and the interval probabilities are the softmax of the
scores.

The likelihood pieces below are written in terms of the logit matrix ``u``
so the neural variant can reuse them unchanged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import softmax

from . import net
from .classic import SurvivalCurve
from .core import EncodedTargets, Scaler, SurvivalDataset, TimeGrid, as_matrix, encode_targets

logger = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Logit-level likelihood
# ---------------------------------------------------------------------------

def scores_from_logits(u) -> np.ndarray:
    """(n, K) logits -> (n, K+1) interval scores by reverse cumulative sum."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    tail = np.cumsum(u[:, ::-1], axis=1)[:, ::-1]
    return np.concatenate([tail, np.zeros((u.shape[0], 1))], axis=1)


def density_from_logits(u) -> np.ndarray:
    return softmax(scores_from_logits(u), axis=1)


def tail_sums(density) -> np.ndarray:
    """``out[:, s] = sum_{k >= s} density[:, k]``: survival at the start of
    each interval (column 0 is 1)."""
    return np.cumsum(density[:, ::-1], axis=1)[:, ::-1]


def _target_mask(encoded: EncodedTargets, num_intervals: int) -> np.ndarray:
    """True where an interval is compatible with the observation: the event's
    own interval, or every interval from the censoring one onwards."""
    cols = np.arange(1, num_intervals + 1)[None, :]
    s = encoded.interval_index[:, None]
    return np.where(encoded.is_event[:, None], cols == s, cols >= s)


def nll_from_logits(u, encoded: EncodedTargets, with_grad: bool = True):
    """Mean negative log-likelihood over the rows of ``u`` and its gradient
    with respect to ``u`` (already divided by the row count)."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    n, K = u.shape
    scores = scores_from_logits(u)
    masked = np.where(_target_mask(encoded, K + 1), scores, -np.inf)
    # log-sum-exp by hand: scipy's version dominates the fit time here
    m_all = scores.max(axis=1, keepdims=True)
    m_obs = masked.max(axis=1, keepdims=True)
    e_all = np.exp(scores - m_all)
    e_obs = np.exp(masked - m_obs)
    z_all = e_all.sum(axis=1, keepdims=True)
    z_obs = e_obs.sum(axis=1, keepdims=True)
    log_ratio = (m_all + np.log(z_all)) - (m_obs + np.log(z_obs))
    loss = float(np.mean(log_ratio))
    if not with_grad:
        return loss, None
    g_scores = e_all / z_all - e_obs / z_obs
    g_u = np.cumsum(g_scores, axis=1)[:, :K] / n
    return loss, g_u


def survival_from_logits(u, grid: TimeGrid, times) -> np.ndarray:
    """Step survival at ``times`` for each row: constant inside each interval,
    ``f(K+1)`` beyond the last boundary."""
    # rounded sums can exceed 1; clip so S(0) = 1 exactly and the curve never rises
    tails = np.minimum(tail_sums(density_from_logits(u)), 1.0)
    tails[:, 0] = 1.0
    idx = grid.interval_of(np.asarray(times, dtype=np.float64)) - 1
    return tails[:, idx]


def risk_from_logits(u) -> np.ndarray:
    """Negative sum of the survival probabilities at the K finite boundaries."""
    tails = tail_sums(density_from_logits(u))
    return -tails[:, 1:].sum(axis=1)


# ---------------------------------------------------------------------------
# Parameters and model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MtlrParameters:
    theta: np.ndarray   # (p, K)
    bias: np.ndarray    # (K,)

    def __post_init__(self):
        theta = np.atleast_2d(np.asarray(self.theta, dtype=np.float64))
        bias = np.asarray(self.bias, dtype=np.float64).ravel()
        if theta.shape[1] != bias.shape[0]:
            raise ValueError(f"theta has {theta.shape[1]} columns but bias has {bias.shape[0]}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "bias", bias)

    @classmethod
    def zeros(cls, p: int, K: int) -> "MtlrParameters":
        return cls(np.zeros((p, K)), np.zeros(K))

    @property
    def K(self) -> int:
        return self.bias.shape[0]

    def logits(self, X_std) -> np.ndarray:
        return as_matrix(X_std, self.theta.shape[0]) @ self.theta + self.bias

    def flat(self) -> np.ndarray:
        return np.concatenate([self.theta.ravel(), self.bias])

    @classmethod
    def from_flat(cls, v, p: int, K: int) -> "MtlrParameters":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:p * K].reshape(p, K), v[p * K:])


@dataclass(frozen=True)
class MtlrModel:
    params: MtlrParameters
    grid: TimeGrid
    scaler: Scaler
    reg_strength: float = 1e-2
    final_loss: float = float("nan")
    n_iter: int = 0

    def logits(self, X) -> np.ndarray:
        return self.params.logits(self.scaler.transform(as_matrix(X, self.scaler.p)))

    def predict_density(self, X) -> np.ndarray:
        return density_from_logits(self.logits(X))

    def predict_survival_matrix(self, X, times) -> np.ndarray:
        return survival_from_logits(self.logits(X), self.grid, times)

    def risk(self, X) -> np.ndarray:
        return risk_from_logits(self.logits(X))

    def to_dict(self) -> dict:
        return {"theta": self.params.theta.tolist(), "bias": self.params.bias.tolist(),
                "grid": self.grid.boundaries.tolist(), "scaler": self.scaler.to_dict(),
                "reg_strength": self.reg_strength, "final_loss": self.final_loss,
                "n_iter": self.n_iter}

    @classmethod
    def from_dict(cls, d) -> "MtlrModel":
        grid = TimeGrid(d["grid"])
        theta = np.asarray(d["theta"], dtype=np.float64).reshape(-1, grid.K)
        return cls(MtlrParameters(theta, d["bias"]), grid, Scaler.from_dict(d["scaler"]),
                   d["reg_strength"], d.get("final_loss", float("nan")), d.get("n_iter", 0))


# ---------------------------------------------------------------------------
# Functional interface
# ---------------------------------------------------------------------------

def interval_scores(params: MtlrParameters, x_std) -> np.ndarray:
    """Scores of the K+1 intervals for one standardized row (or a batch)."""
    s = scores_from_logits(params.logits(x_std))
    return s[0] if np.ndim(x_std) == 1 else s


def predict_density(model, x) -> np.ndarray:
    """Interval probabilities; ``model`` may also be bare :class:`MtlrParameters`
    (then ``x`` is taken as already standardized)."""
    if isinstance(model, MtlrModel):
        d = model.predict_density(x)
    else:
        d = density_from_logits(model.logits(x))
    return d[0] if np.ndim(x) == 1 else d


def predict_survival(model: MtlrModel, x, eval_times=None) -> SurvivalCurve:
    """Survival curve of one unit, on the grid knots or at ``eval_times``."""
    x = as_matrix(x, model.scaler.p)[:1]
    if eval_times is None:
        knots = np.concatenate([[0.0], model.grid.boundaries])
    else:
        knots = np.unique(np.concatenate([[0.0], np.asarray(eval_times, dtype=np.float64)]))
    return SurvivalCurve(knots, model.predict_survival_matrix(x, knots)[0])


def neg_log_likelihood(params: MtlrParameters, encoded: EncodedTargets, features_std,
                       reg_strength: float = 0.0) -> float:
    """Mean NLL plus ``(reg_strength / 2) * ||theta||_F^2`` (biases unpenalized)."""
    loss, _ = nll_from_logits(params.logits(features_std), encoded, with_grad=False)
    return loss + 0.5 * reg_strength * float(np.sum(params.theta ** 2))


def gradient(params: MtlrParameters, encoded: EncodedTargets, features_std,
             reg_strength: float = 0.0) -> MtlrParameters:
    return _objective(params, encoded, as_matrix(features_std, params.theta.shape[0]),
                      reg_strength)[1]


def _objective(params, encoded, X, reg_strength):
    loss, g_u = nll_from_logits(X @ params.theta + params.bias, encoded)
    loss += 0.5 * reg_strength * float(np.sum(params.theta ** 2))
    return loss, MtlrParameters(X.T @ g_u + reg_strength * params.theta, g_u.sum(axis=0))


def mtlr_fit(dataset: SurvivalDataset, grid: TimeGrid, reg_strength: float = 1e-2,
             optimizer: str = "adam", learning_rate: float = 1e-2, max_iter: int = 2000,
             tol: float = 1e-7, seed: int = 0, patience: int = 10) -> MtlrModel:
    """Fit by full-batch minimization of the regularized NLL.

    First-order optimizers (``adam``, ``adamax``, ``rmsprop``, ``sgd``) start
    from zero and stop once the relative loss change stays below ``tol`` for
    ``patience`` consecutive iterations.  ``lbfgs`` hands the same objective
    to scipy.  The fit is deterministic; ``seed`` is accepted for interface
    symmetry with the neural model.
    """
    dataset.require_events()
    scaler = Scaler.fit(dataset.features)
    X = scaler.transform(dataset.features)
    enc = encode_targets(dataset, grid)
    p, K = X.shape[1], grid.K
    params = MtlrParameters.zeros(p, K)

    if optimizer == "lbfgs":
        def fun(v):
            loss, g = _objective(MtlrParameters.from_flat(v, p, K), enc, X, reg_strength)
            return loss, g.flat()
        res = minimize(fun, params.flat(), jac=True, method="L-BFGS-B",
                       options={"maxiter": max_iter, "gtol": 1e-10, "ftol": tol * 1e-3})
        if not np.isfinite(res.fun):
            raise FitError(f"non-finite loss after {res.nit} iterations")
        return MtlrModel(MtlrParameters.from_flat(res.x, p, K), grid, scaler, reg_strength,
                         float(res.fun), int(res.nit))

    state = net.make_optimizer(optimizer, [params.theta, params.bias], learning_rate)
    prev = np.inf
    calm = 0
    loss = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        loss, g = _objective(params, enc, X, reg_strength)
        if not np.isfinite(loss):
            raise FitError(f"non-finite loss at iteration {it}; "
                           f"parameter norm {np.linalg.norm(params.flat()):.3g}")
        if np.isfinite(prev) and abs(prev - loss) <= tol * max(abs(prev), 1e-12):
            calm += 1
            if calm >= patience:
                break
        else:
            calm = 0
        prev = loss
        state, (theta, bias) = net.optimizer_step(state, [params.theta, params.bias],
                                                  [g.theta, g.bias])
        params = MtlrParameters(theta, bias)
    loss = neg_log_likelihood(params, enc, X, reg_strength)
    return MtlrModel(params, grid, scaler, reg_strength, float(loss), it)


def mtlr_risk(model: MtlrModel, x):
    r = model.risk(x)
    return float(r[0]) if np.ndim(x) == 1 else r
