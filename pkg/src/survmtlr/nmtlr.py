"""Neural MTLR: a feedforward network produces the K task logits."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import net
from .classic import SurvivalCurve
from .core import (EncodedTargets, Scaler, SurvivalDataset, TimeGrid, as_matrix, derive_seed,
                   encode_targets, make_rng, split_indices)
from .mtlr import (FitError, density_from_logits, nll_from_logits, risk_from_logits,
                   scores_from_logits, survival_from_logits)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    epochs: int = 1000
    batch_size: int | None = None        # None: full batch
    reg_strength: float = 1e-4           # L2 on weight matrices only
    seed: int = 0
    validation_fraction: float = 0.2     # 0 disables early stopping
    early_stopping_patience: int = 50
    initializer: str = "xavier_uniform"

    @classmethod
    def from_dict(cls, d: dict | None) -> "TrainConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training settings: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class NmtlrModel:
    network: net.Network
    grid: TimeGrid
    scaler: Scaler
    final_loss: float = float("nan")
    epochs_run: int = 0
    best_epoch: int = 0

    def logits(self, X) -> np.ndarray:
        X_std = self.scaler.transform(as_matrix(X, self.scaler.p))
        return net.forward(self.network, X_std, mode="infer").logits

    def predict_density(self, X) -> np.ndarray:
        return density_from_logits(self.logits(X))

    def predict_survival_matrix(self, X, times) -> np.ndarray:
        return survival_from_logits(self.logits(X), self.grid, times)

    def risk(self, X) -> np.ndarray:
        return risk_from_logits(self.logits(X))

    def to_dict(self) -> dict:
        return {"network": self.network.to_dict(), "grid": self.grid.boundaries.tolist(),
                "scaler": self.scaler.to_dict(), "final_loss": self.final_loss,
                "epochs_run": self.epochs_run, "best_epoch": self.best_epoch}

    @classmethod
    def from_dict(cls, d) -> "NmtlrModel":
        return cls(net.Network.from_dict(d["network"]), TimeGrid(d["grid"]),
                   Scaler.from_dict(d["scaler"]), d.get("final_loss", float("nan")),
                   d.get("epochs_run", 0), d.get("best_epoch", 0))


def nmtlr_scores(model: NmtlrModel, x) -> np.ndarray:
    s = scores_from_logits(model.logits(x))
    return s[0] if np.ndim(x) == 1 else s


def nmtlr_predict_density(model: NmtlrModel, x) -> np.ndarray:
    d = model.predict_density(x)
    return d[0] if np.ndim(x) == 1 else d


def nmtlr_predict_survival(model: NmtlrModel, x, eval_times=None) -> SurvivalCurve:
    x = as_matrix(x, model.scaler.p)[:1]
    if eval_times is None:
        knots = np.concatenate([[0.0], model.grid.boundaries])
    else:
        knots = np.unique(np.concatenate([[0.0], np.asarray(eval_times, dtype=np.float64)]))
    return SurvivalCurve(knots, model.predict_survival_matrix(x, knots)[0])


def nmtlr_risk(model: NmtlrModel, x):
    r = model.risk(x)
    return float(r[0]) if np.ndim(x) == 1 else r


def _subset(enc: EncodedTargets, idx) -> EncodedTargets:
    return EncodedTargets(enc.interval_index[idx], enc.is_event[idx])


def loss_and_grads(network: net.Network, X_std, encoded: EncodedTargets, reg_strength: float,
                   mode: str = "infer", rng=None):
    """Regularized mean NLL of a batch and its gradient for every network parameter."""
    acts = net.forward(network, X_std, mode=mode, rng=rng)
    loss, g_u = nll_from_logits(acts.logits, encoded)
    grads = net.backward(network, acts, g_u)
    for i, W in enumerate(network.weights):
        loss += 0.5 * reg_strength * float(np.sum(W * W))
        grads[2 * i] = grads[2 * i] + reg_strength * W
    return loss, grads


def penalized_loss(network: net.Network, X_std, encoded: EncodedTargets,
                   reg_strength: float) -> float:
    logits = net.forward(network, X_std, mode="infer").logits
    loss, _ = nll_from_logits(logits, encoded, with_grad=False)
    return loss + 0.5 * reg_strength * sum(float(np.sum(W * W)) for W in network.weights)


def nmtlr_fit(dataset: SurvivalDataset, grid: TimeGrid, layers=(), config=None,
              **overrides) -> NmtlrModel:
    """Train a network whose K outputs are the MTLR task logits.

    ``layers`` lists the hidden layers (``LayerSpec`` or dicts); an empty
    list gives the linear model.  Training settings come from ``config``
    (a :class:`TrainConfig` or dict) updated with ``overrides``.  With a
    positive ``validation_fraction`` a held-out slice of the training rows
    drives early stopping and the best-validation parameters are returned.
    """
    if config is None or isinstance(config, dict):
        cfg = TrainConfig.from_dict({**(config or {}), **overrides})
    else:
        cfg = TrainConfig.from_dict({**config.__dict__, **overrides})
    dataset.require_events()
    scaler = Scaler.fit(dataset.features)
    X = scaler.transform(dataset.features)
    enc = encode_targets(dataset, grid)

    fit_idx = np.arange(dataset.n)
    val_idx = np.empty(0, dtype=np.int64)
    if cfg.validation_fraction > 0 and dataset.n >= 10:
        fit_idx, val_idx = split_indices(dataset.n, cfg.validation_fraction,
                                         derive_seed(cfg.seed, "validation"),
                                         dataset.events)
    X_fit, enc_fit = X[fit_idx], _subset(enc, fit_idx)
    X_val, enc_val = X[val_idx], _subset(enc, val_idx)

    network = net.init_network(X.shape[1], layers, grid.K, cfg.initializer, cfg.seed)
    state = net.make_optimizer(cfg.optimizer, network.params, cfg.learning_rate)
    shuffle_rng = make_rng(cfg.seed, "shuffle")
    dropout_rng = make_rng(cfg.seed, "dropout")
    uses_dropout = any(s.dropout_rate > 0 for s in network.specs)
    mode = "train" if uses_dropout else "infer"
    n_fit = fit_idx.size
    batch = n_fit if not cfg.batch_size else min(int(cfg.batch_size), n_fit)

    best_val, best_net, best_epoch, waited = np.inf, network, 0, 0
    epoch = 0
    loss = np.nan
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n_fit) if batch < n_fit else np.arange(n_fit)
        for start in range(0, n_fit, batch):
            rows = order[start:start + batch]
            try:
                loss, grads = loss_and_grads(network, X_fit[rows], _subset(enc_fit, rows),
                                             cfg.reg_strength, mode, dropout_rng)
            except net.NonFiniteError as exc:
                raise FitError(f"epoch {epoch}: {exc}") from None
            if not np.isfinite(loss):
                raise FitError(f"non-finite training loss at epoch {epoch}")
            state, params = net.optimizer_step(state, network.params, grads)
            network = network.with_params(params)
        if val_idx.size:
            val_loss, _ = nll_from_logits(net.forward(network, X_val).logits, enc_val,
                                          with_grad=False)
            if val_loss < best_val - 1e-12:
                best_val, best_net, best_epoch, waited = val_loss, network, epoch, 0
            else:
                waited += 1
                if waited >= cfg.early_stopping_patience:
                    break
    if val_idx.size:
        network = best_net
    else:
        best_epoch = epoch
    final = penalized_loss(network, X, enc, cfg.reg_strength)
    if not np.isfinite(final):
        raise FitError("non-finite loss after training")
    return NmtlrModel(network, grid, scaler, float(final), epoch, best_epoch)
