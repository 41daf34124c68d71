"""A small dense feedforward network with reverse-mode gradients.

The network maps standardized covariates to ``K`` unnormalized logits; the
last layer is always a linear (identity) map.  Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .core import make_rng

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

ACTIVATIONS = ("identity", "tanh", "relu", "softmax", "selu", "softplus")
INITIALIZERS = ("xavier_uniform", "xavier_gaussian")


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    units: int
    activation: str = "relu"
    dropout_rate: float = 0.0

    def __post_init__(self):
        if int(self.units) < 1:
            raise ValueError("units must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {ACTIVATIONS}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self):
        return {"units": int(self.units), "activation": self.activation,
                "dropout_rate": float(self.dropout_rate)}


@dataclass(frozen=True)
class Network:
    """Layer stack; ``specs[-1]`` is the identity output layer."""

    specs: tuple
    weights: tuple
    biases: tuple

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def params(self) -> list:
        """Flat parameter list ``[W_1, c_1, W_2, c_2, ...]``."""
        out = []
        for W, c in zip(self.weights, self.biases):
            out.extend((W, c))
        return out

    def with_params(self, params) -> "Network":
        return replace(self, weights=tuple(params[0::2]), biases=tuple(params[1::2]))

    def to_dict(self) -> dict:
        return {"layers": [s.to_dict() for s in self.specs],
                "weights": [W.tolist() for W in self.weights],
                "biases": [c.tolist() for c in self.biases]}

    @classmethod
    def from_dict(cls, d) -> "Network":
        specs = tuple(LayerSpec(**s) for s in d["layers"])
        weights = tuple(np.asarray(W, dtype=np.float64).reshape(len(W), -1) for W in d["weights"])
        biases = tuple(np.asarray(c, dtype=np.float64) for c in d["biases"])
        return cls(specs, weights, biases)


def init_network(input_dim: int, layer_specs, output_dim: int,
                 scheme: str = "xavier_uniform", seed: int = 0) -> Network:
    """Xavier-initialized weights, zero biases.

    ``layer_specs`` lists the hidden layers (may be empty); an identity
    output layer with ``output_dim`` units is appended.
    """
    if input_dim < 1 or output_dim < 1:
        raise ValueError("dimensions must be positive")
    if scheme not in INITIALIZERS:
        raise ValueError(f"unknown initializer {scheme!r}")
    hidden = [s if isinstance(s, LayerSpec) else LayerSpec(**s) for s in layer_specs]
    specs = tuple(hidden) + (LayerSpec(output_dim, "identity", 0.0),)
    rng = make_rng(seed, "init")
    weights, biases = [], []
    fan_in = input_dim
    for spec in specs:
        fan_out = spec.units
        if scheme == "xavier_uniform":
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        else:
            W = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))
        weights.append(W)
        biases.append(np.zeros(fan_out))
        fan_in = fan_out
    return Network(specs, tuple(weights), tuple(biases))


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "identity":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "softplus":
        return np.logaddexp(0.0, z)
    if kind == "selu":
        return SELU_LAMBDA * np.where(z > 0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))
    if kind == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_backward(kind, z, a, g):
    """Gradient w.r.t. pre-activation ``z`` given output ``a`` and upstream ``g``."""
    if kind == "identity":
        return g
    if kind == "tanh":
        return g * (1.0 - a * a)
    if kind == "relu":
        return g * (z > 0)
    if kind == "softplus":
        return g * expit(z)
    if kind == "selu":
        return g * np.where(z > 0, SELU_LAMBDA, a + SELU_LAMBDA * SELU_ALPHA)
    if kind == "softmax":
        return a * (g - np.sum(g * a, axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

@dataclass
class Activations:
    """Everything ``backward`` needs from a forward pass."""

    inputs: list = field(default_factory=list)     # input to each layer
    pre: list = field(default_factory=list)        # W h + c
    post: list = field(default_factory=list)       # act(W h + c), before dropout
    masks: list = field(default_factory=list)      # scaled dropout masks or None

    @property
    def logits(self) -> np.ndarray:
        return self.post[-1]


def forward(network: Network, x_batch, mode: str = "infer", seed=None,
            rng: np.random.Generator | None = None) -> Activations:
    """Run the network on a batch (rows are samples).

    In ``train`` mode, inverted dropout is applied to hidden-layer outputs
    using ``rng`` (or a generator built from ``seed``).
    """
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    h = np.asarray(x_batch, dtype=np.float64)
    if h.ndim == 1:
        h = h.reshape(1, -1)
    if h.shape[1] != network.input_dim:
        raise ValueError(f"expected {network.input_dim} input columns, got {h.shape[1]}")
    if mode == "train" and rng is None:
        rng = make_rng(0 if seed is None else seed, "dropout")
    rec = Activations()
    for idx, (spec, W, c) in enumerate(zip(network.specs, network.weights, network.biases)):
        rec.inputs.append(h)
        z = h @ W + c
        a = activate(spec.activation, z)
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite output in layer {idx + 1} ({spec.activation})")
        mask = None
        if mode == "train" and spec.dropout_rate > 0:
            keep = 1.0 - spec.dropout_rate
            mask = (rng.random(a.shape) < keep) / keep
            h = a * mask
        else:
            h = a
        rec.pre.append(z)
        rec.post.append(a)
        rec.masks.append(mask)
    return rec


def backward(network: Network, activations: Activations, logit_gradient) -> list:
    """Parameter gradients ``[dW_1, dc_1, ...]`` for a loss whose gradient
    with respect to the output logits is ``logit_gradient``."""
    g = np.asarray(logit_gradient, dtype=np.float64)
    if g.shape != activations.logits.shape:
        raise ValueError(f"logit_gradient shape {g.shape} != logits shape "
                         f"{activations.logits.shape}")
    grads = [None] * (2 * len(network.specs))
    for idx in range(len(network.specs) - 1, -1, -1):
        spec = network.specs[idx]
        mask = activations.masks[idx]
        if mask is not None:
            g = g * mask
        gz = _activation_backward(spec.activation, activations.pre[idx],
                                  activations.post[idx], g)
        grads[2 * idx] = activations.inputs[idx].T @ gz
        grads[2 * idx + 1] = gz.sum(axis=0)
        if idx:
            g = gz @ network.weights[idx].T
    return grads


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

OPTIMIZER_DEFAULTS = {
    "sgd": {"learning_rate": 1e-2},
    "adam": {"learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8},
    "adamax": {"learning_rate": 2e-3, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8},
    "rmsprop": {"learning_rate": 1e-3, "rho": 0.9, "epsilon": 1e-8},
}


@dataclass(frozen=True)
class OptimizerState:
    kind: str
    hyper: dict
    slots: tuple = ()      # per-parameter accumulators, one tuple entry per slot kind
    step: int = 0

    @property
    def learning_rate(self) -> float:
        return self.hyper["learning_rate"]


def make_optimizer(kind: str, params, learning_rate: float | None = None,
                   **extra) -> OptimizerState:
    if kind not in OPTIMIZER_DEFAULTS:
        raise ValueError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZER_DEFAULTS)}")
    hyper = dict(OPTIMIZER_DEFAULTS[kind])
    unknown = set(extra) - set(hyper)
    if unknown:
        raise ValueError(f"unknown {kind} settings: {sorted(unknown)}")
    hyper.update(extra)
    if learning_rate is not None:
        hyper["learning_rate"] = float(learning_rate)
    n_slots = {"sgd": 0, "adam": 2, "adamax": 2, "rmsprop": 1}[kind]
    slots = tuple(tuple(np.zeros_like(p) for p in params) for _ in range(n_slots))
    return OptimizerState(kind, hyper, slots, 0)


def optimizer_step(state: OptimizerState, params, grads):
    """One update; returns ``(new_state, new_params)`` without mutating inputs."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    h = state.hyper
    lr = h["learning_rate"]
    t = state.step + 1
    if state.kind == "sgd":
        return replace(state, step=t), [p - lr * g for p, g in zip(params, grads)]
    if state.kind == "adam":
        b1, b2, eps = h["beta1"], h["beta2"], h["epsilon"]
        m = [b1 * m0 + (1 - b1) * g for m0, g in zip(state.slots[0], grads)]
        v = [b2 * v0 + (1 - b2) * g * g for v0, g in zip(state.slots[1], grads)]
        c1, c2 = 1 - b1 ** t, 1 - b2 ** t
        new = [p - lr * (mi / c1) / (np.sqrt(vi / c2) + eps) for p, mi, vi in zip(params, m, v)]
        return replace(state, slots=(tuple(m), tuple(v)), step=t), new
    if state.kind == "adamax":
        b1, b2, eps = h["beta1"], h["beta2"], h["epsilon"]
        m = [b1 * m0 + (1 - b1) * g for m0, g in zip(state.slots[0], grads)]
        u = [np.maximum(b2 * u0, np.abs(g)) for u0, g in zip(state.slots[1], grads)]
        step_size = lr / (1 - b1 ** t)
        new = [p - step_size * mi / (ui + eps) for p, mi, ui in zip(params, m, u)]
        return replace(state, slots=(tuple(m), tuple(u)), step=t), new
    if state.kind == "rmsprop":
        rho, eps = h["rho"], h["epsilon"]
        v = [rho * v0 + (1 - rho) * g * g for v0, g in zip(state.slots[0], grads)]
        new = [p - lr * g / (np.sqrt(vi) + eps) for p, g, vi in zip(params, grads, v)]
        return replace(state, slots=(tuple(v),), step=t), new
    raise ValueError(f"unknown optimizer {state.kind!r}")
