"""Multilayer perceptrons with exact per-sample parameter Jacobians.

The network is a plain fully connected stack with a linear final layer; any
inverse link (sigmoid, softmax, ...) belongs to the likelihood.  Parameters
live in one flat double precision vector so that the whole model can be
treated as a single point in R^P: the penalised training objective, the
tangent-space linearisation and the checkpoint format all operate on that
vector.

Training minimises

    sum_i -log p(y_i | f_w(x_i)) + (delta / 2) ||w||^2

with Adam, early-stopping on a validation set and returning the checkpoint
with the lowest validation loss.  The ridge term covers every coordinate of
w, biases included, so the same precision ``delta`` applies to every row of
the Jacobian downstream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .errors import DimensionMismatch, Error, NonFiniteLoss

_ACTIVATIONS = ("tanh", "relu", "sigmoid")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    raise Error(f"unknown activation {name!r}")


def _act_deriv(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # a is the already computed activation at z
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    raise Error(f"unknown activation {name!r}")


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: sizes, activation, and whether layers carry biases."""

    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = ()
    activation: str = "tanh"
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise Error("all layer widths must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise Error(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden, self.output_dim]
        return list(zip(sizes[:-1], sizes[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "bias": self.bias,
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        return NetworkSpec(
            input_dim=int(d["input_dim"]),
            output_dim=int(d["output_dim"]),
            hidden=tuple(d.get("hidden", ())),
            activation=d.get("activation", "tanh"),
            bias=bool(d.get("bias", True)),
        )


class LayerSlot(NamedTuple):
    """Flat-vector slot of one layer: a (rows x cols) block starting at offset.

    rows = fan_in + 1 when the layer has a bias (the last row is the bias).
    """

    rows: int
    cols: int
    offset: int


def build_layout(spec: NetworkSpec) -> tuple[tuple[LayerSlot, ...], int]:
    slots = []
    offset = 0
    extra = 1 if spec.bias else 0
    for fan_in, fan_out in spec.layer_dims():
        rows = fan_in + extra
        slots.append(LayerSlot(rows=rows, cols=fan_out, offset=offset))
        offset += rows * fan_out
    return tuple(slots), offset


@dataclass(eq=False)
class Weights:
    """Flat parameter vector plus the layout needed to slice it into layers."""

    values: np.ndarray
    spec: NetworkSpec
    layout: tuple[LayerSlot, ...] = field(default=())

    def __post_init__(self):
        if not self.layout:
            self.layout, expected = build_layout(self.spec)
        else:
            _, expected = build_layout(self.spec)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (expected,):
            raise DimensionMismatch(f"expected {expected} parameters, got {self.values.shape}")

    @property
    def num_params(self) -> int:
        return self.values.shape[0]

    def layer(self, i: int) -> tuple[np.ndarray, np.ndarray | None]:
        """Return (W, b) for layer i; b is None for bias-free networks."""
        slot = self.layout[i]
        block = self.values[slot.offset : slot.offset + slot.rows * slot.cols]
        block = block.reshape(slot.rows, slot.cols)
        if self.spec.bias:
            return block[:-1], block[-1]
        return block, None

    def copy(self) -> "Weights":
        return Weights(values=self.values.copy(), spec=self.spec, layout=self.layout)

    def replace_values(self, values: np.ndarray) -> "Weights":
        return Weights(values=np.asarray(values, dtype=np.float64), spec=self.spec, layout=self.layout)


def init_weights(spec: NetworkSpec, seed: int) -> Weights:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    layout, total = build_layout(spec)
    values = np.zeros(total)
    for slot, (fan_in, fan_out) in zip(layout, spec.layer_dims()):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        block = values[slot.offset : slot.offset + slot.rows * slot.cols].reshape(slot.rows, slot.cols)
        block[:fan_in] = w  # bias row (if any) stays zero
    return Weights(values=values, spec=spec, layout=layout)


def _check_inputs(spec: NetworkSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != spec.input_dim:
        raise DimensionMismatch(f"inputs have {x.shape[1]} columns, network expects {spec.input_dim}")
    return x


def _trace(weights: Weights, x: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for backprop."""
    spec = weights.spec
    inputs = [x]
    pre = []
    h = x
    n_layers = len(weights.layout)
    for i in range(n_layers):
        w, b = weights.layer(i)
        z = h @ w
        if b is not None:
            z = z + b
        pre.append(z)
        if i < n_layers - 1:
            h = _act(spec.activation, z)
            inputs.append(h)
    return inputs, pre


def forward(weights: Weights, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch; returns (N, C) latent outputs."""
    x = _check_inputs(weights.spec, x)
    _, pre = _trace(weights, x)
    return pre[-1]


def _augment(h: np.ndarray, bias: bool) -> np.ndarray:
    if not bias:
        return h
    return np.concatenate([h, np.ones((h.shape[0], 1))], axis=1)


def vjp(weights: Weights, x: np.ndarray, seed: np.ndarray) -> np.ndarray:
    """Gradient of sum_{n,c} seed[n,c] * f_c(x_n) with respect to the flat parameters."""
    spec = weights.spec
    x = _check_inputs(spec, x)
    seed = np.asarray(seed, dtype=np.float64)
    inputs, pre = _trace(weights, x)
    grad = np.zeros(weights.num_params)
    g = seed
    for i in reversed(range(len(weights.layout))):
        slot = weights.layout[i]
        h_aug = _augment(inputs[i], spec.bias)
        grad[slot.offset : slot.offset + slot.rows * slot.cols] = (h_aug.T @ g).ravel()
        if i > 0:
            w, _ = weights.layer(i)
            g = g @ w.T
            a = inputs[i]
            g = g * _act_deriv(spec.activation, pre[i - 1], a)
    return grad


def jacobian_batch(weights: Weights, x: np.ndarray) -> np.ndarray:
    """Exact reverse-mode Jacobians for a batch: (N, C, P).

    Row (n, c) is the gradient of output c at x_n with respect to all P
    parameters.  Peak extra memory is O(N * C * P).
    """
    spec = weights.spec
    x = _check_inputs(spec, x)
    n = x.shape[0]
    c = spec.output_dim
    inputs, pre = _trace(weights, x)
    jac = np.zeros((n, c, weights.num_params))
    g = np.broadcast_to(np.eye(c), (n, c, c)).copy()
    for i in reversed(range(len(weights.layout))):
        slot = weights.layout[i]
        h_aug = _augment(inputs[i], spec.bias)
        block = np.einsum("ni,nco->ncio", h_aug, g)
        jac[:, :, slot.offset : slot.offset + slot.rows * slot.cols] = block.reshape(n, c, -1)
        if i > 0:
            w, _ = weights.layer(i)
            g = g @ w.T
            a = inputs[i]
            g = g * _act_deriv(spec.activation, pre[i - 1], a)[:, None, :]
    return jac


def jacobian(weights: Weights, x: np.ndarray) -> np.ndarray:
    """Jacobian at a single input: (C, P)."""
    return jacobian_batch(weights, np.atleast_2d(np.asarray(x, dtype=np.float64)))[0]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 30
    prior_precision: float = 1e-4
    seed: int = 0
    # per-epoch multiplicative learning rate decay; 1.0 keeps it constant.
    # Decaying toward zero lets Adam settle much closer to a stationary
    # point, which the zero-mean function-space read-out depends on.
    lr_decay: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.prior_precision <= 0:
            raise Error("learning_rate and prior_precision must be positive")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 0:
            raise Error("batch_size must be >= 1, max_epochs and patience >= 0")
        if not 0.0 < self.lr_decay <= 1.0:
            raise Error("lr_decay must lie in (0, 1]")


class _Adam:
    def __init__(self, size: int, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, w: np.ndarray, g: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * g
        self.v = self.b2 * self.v + (1.0 - self.b2) * g * g
        m_hat = self.m / (1.0 - self.b1**self.t)
        v_hat = self.v / (1.0 - self.b2**self.t)
        return w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train_map(
    data,
    spec: NetworkSpec,
    likelihood,
    cfg: TrainConfig,
    val,
    w_init: Weights | None = None,
    penalty: Callable[[Weights], tuple[float, np.ndarray]] | None = None,
) -> Weights:
    """Penalised maximum a posteriori training with early stopping.

    ``penalty``, when given, is an extra objective term P(w) returning
    (value, flat gradient); it is folded in at 1/N scale so that it adds to
    the per-sample mean objective exactly like the ridge term.  Validation
    loss (mean negative log-likelihood plus the scaled penalty) is evaluated
    once per epoch and the best checkpoint is returned.  Raises
    ``NonFiniteLoss`` as soon as the objective stops being finite.
    """
    x_train, y_train = np.asarray(data.X, dtype=np.float64), data.y
    x_val, y_val = np.asarray(val.X, dtype=np.float64), val.y
    n = x_train.shape[0]
    if n == 0 or x_val.shape[0] == 0:
        raise Error("training and validation sets must be nonempty")
    delta = cfg.prior_precision

    weights = w_init.copy() if w_init is not None else init_weights(spec, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = _Adam(weights.num_params, cfg.learning_rate)

    def val_loss(w: Weights) -> float:
        f = forward(w, x_val)
        loss = float(np.mean(-likelihood.log_density(y_val, f)))
        if penalty is not None:
            value, _ = penalty(w)
            loss += value / n
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"validation loss is {loss}")
        return loss

    best_loss = val_loss(weights)
    best = weights.copy()
    stale = 0

    for epoch in range(cfg.max_epochs):
        if stale >= cfg.patience:
            break
        if cfg.lr_decay != 1.0:
            opt.lr = cfg.learning_rate * cfg.lr_decay**epoch
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            f = forward(weights, xb)
            nll = -likelihood.log_density(yb, f)
            batch_loss = float(np.mean(nll)) + 0.5 * delta / n * float(weights.values @ weights.values)
            if not np.isfinite(batch_loss):
                raise NonFiniteLoss(f"training loss is {batch_loss}")
            g = vjp(weights, xb, likelihood.dloss_df(yb, f) / len(idx))
            g += (delta / n) * weights.values
            if penalty is not None:
                _, pg = penalty(weights)
                g += pg / n
            weights = weights.replace_values(opt.step(weights.values, g))
        loss = val_loss(weights)
        if loss < best_loss:
            best_loss = loss
            best = weights.copy()
            stale = 0
        else:
            stale += 1
    return best


def training_objective(weights: Weights, data, likelihood, delta: float,
                       penalty: Callable[[Weights], tuple[float, np.ndarray]] | None = None) -> tuple[float, np.ndarray]:
    """Full-dataset objective and its exact gradient (used by gradient checks)."""
    f = forward(weights, data.X)
    value = float(np.sum(-likelihood.log_density(data.y, f)))
    value += 0.5 * delta * float(weights.values @ weights.values)
    grad = vjp(weights, data.X, likelihood.dloss_df(data.y, f)) + delta * weights.values
    if penalty is not None:
        pv, pg = penalty(weights)
        value += pv
        grad = grad + pg
    return value, grad


CHECKPOINT_VERSION = 1


def checkpoint_dict(weights: Weights, normalization: dict | None = None) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "spec": weights.spec.to_dict(),
        "layout": [[s.rows, s.cols, s.offset] for s in weights.layout],
        "values": [float(v) for v in weights.values],
        "normalization": normalization,
    }


def save_checkpoint(weights: Weights, path, normalization: dict | None = None) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(weights, normalization), indent=2) + "\n")


def load_checkpoint(path) -> tuple[Weights, dict | None]:
    p = Path(path)
    if not p.exists():
        raise Error(f"checkpoint not found: {p}")
    doc = json.loads(p.read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise Error(f"unsupported checkpoint version {doc.get('version')}")
    spec = NetworkSpec.from_dict(doc["spec"])
    weights = Weights(values=np.array(doc["values"], dtype=np.float64), spec=spec)
    stored = [[s.rows, s.cols, s.offset] for s in weights.layout]
    if stored != doc["layout"]:
        raise Error("checkpoint layout does not match its architecture")
    return weights, doc.get("normalization")
