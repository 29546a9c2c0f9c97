"""Function-space regularisation for training on a sequence of tasks.

After finishing task s the model is summarised by a small memory: inducing
inputs Z_s drawn from that task's data, the network outputs u_s = f(Z_s) at
the task optimum, and one M x M metric per class,

    metric_c = Kzz_c^{-1} ( sum_{i in task} k_zi beta_i k_zi^T ) Kzz_c^{-1},

which is the curvature of the task's data seen through the kernel.  Classes
with no observations so far get the identity metric.  While training task t
the penalty

    R(w) = 1/2 * sum_s sum_c (1/M_s) * d_c^T metric_{s,c} d_c,
    d_c = u_{s,c} - f_w(Z_s)_c

keeps the live network close to each stored summary, weighted where the old
data actually constrained the function.  Stored quantities are constants;
gradients flow only through the live network outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from .datasets import Dataset, split
from .errors import Error
from .kernels import DEFAULT_BATCH, TangentKernel
from .likelihoods import Likelihood
from .metrics import accuracy
from .nets import NetworkSpec, TrainConfig, Weights, forward, init_weights, train_map, vjp
from .posterior import _accumulate, DualParams, sample_inducing


@dataclass(eq=False)
class TaskMemory:
    points: np.ndarray  # (M, D) inducing inputs from the task
    targets: np.ndarray  # (M, C) network outputs at the task optimum
    metric: np.ndarray  # (C, M, M) symmetric PSD, identity for unseen classes

    @property
    def m(self) -> int:
        return self.points.shape[0]


@dataclass(eq=False)
class MemoryBuffer:
    tasks: list[TaskMemory] = field(default_factory=list)
    observed_classes: set[int] = field(default_factory=set)

    def add(self, memory: TaskMemory, classes) -> None:
        self.tasks.append(memory)
        self.observed_classes |= set(int(c) for c in classes)


@dataclass(frozen=True)
class ClConfig:
    tau: float = 1.0
    points_per_task: int = 20
    train: TrainConfig = field(default_factory=TrainConfig)
    reg_metric: str = "dual"  # "dual" or "identity" (plain L2 ablation)
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.tau) or self.tau < 0:
            raise Error("tau must be finite and nonnegative")
        if self.reg_metric not in ("dual", "identity"):
            raise Error("reg_metric must be 'dual' or 'identity'")


def build_task_memory(data: Dataset, weights: Weights, likelihood: Likelihood,
                      prior_precision: float, m: int, seed: int,
                      observed_classes=None, batch: int = DEFAULT_BATCH) -> TaskMemory:
    """Summarise one finished task into (Z, u, metric).

    ``observed_classes`` defaults to the classes present in the task data;
    in a sequential run the caller passes every class seen so far.  Classes
    outside that set get the identity metric.
    """
    kernel = TangentKernel(weights=weights, prior_precision=prior_precision)
    inducing = sample_inducing(data.X, m, seed)
    u = forward(weights, inducing.points)

    c = kernel.num_outputs
    if observed_classes is None:
        observed_classes = set(range(c)) if data.task == "regression" else set(int(v) for v in np.unique(data.y))

    j_z = kernel.jacobians(inducing.points)
    duals = DualParams(alpha=np.zeros((c, m)), curvature=np.zeros((c, m, m)))
    x = np.asarray(data.X, dtype=np.float64)
    batch = max(int(batch), 1)
    for s in range(0, x.shape[0], batch):
        xb, yb = x[s : s + batch], data.y[s : s + batch]
        f = forward(weights, xb)
        alpha_hat, beta_hat = likelihood.duals(yb, f)
        kzx = kernel.pair_gram(j_z, kernel.jacobians(xb, batch=batch))
        _accumulate(duals, kzx, alpha_hat, beta_hat)

    metric = np.zeros((c, m, m))
    for ci in range(c):
        if ci not in observed_classes:
            metric[ci] = np.eye(m)
            continue
        kzz = linalg.symmetrize(kernel.pair_gram(j_z, j_z)[ci])
        factor = linalg.cholesky_jittered(kzz)
        half = linalg.solve_posdef(factor, duals.curvature[ci])
        metric[ci] = linalg.symmetrize(linalg.solve_posdef(factor, half.T))
    return TaskMemory(points=inducing.points, targets=u, metric=metric)


def regularizer(weights: Weights, buffer: MemoryBuffer) -> float:
    """Value of the memory penalty at the given weights (0 for an empty buffer)."""
    value, _ = _regularizer_terms(weights, buffer)
    return value


def _regularizer_terms(weights: Weights, buffer: MemoryBuffer):
    """Penalty value plus, per task, the gradient seed d(penalty)/d f(Z_s)."""
    value = 0.0
    seeds = []
    for mem in buffer.tasks:
        f = forward(weights, mem.points)  # (M, C)
        d = mem.targets - f
        seed = np.zeros_like(f)
        for ci in range(f.shape[1]):
            md = mem.metric[ci] @ d[:, ci]
            value += 0.5 / mem.m * float(d[:, ci] @ md)
            seed[:, ci] = -md / mem.m
        seeds.append(seed)
    return value, seeds


def regularizer_gradient(weights: Weights, buffer: MemoryBuffer) -> np.ndarray:
    """Exact gradient of the penalty with respect to the flat parameters."""
    _, seeds = _regularizer_terms(weights, buffer)
    grad = np.zeros(weights.num_params)
    for mem, seed in zip(buffer.tasks, seeds):
        grad += vjp(weights, mem.points, seed)
    return grad


def make_penalty(buffer: MemoryBuffer, tau: float):
    """Objective hook returning (tau * R(w), its gradient) for the trainer."""

    def penalty(weights: Weights):
        value, seeds = _regularizer_terms(weights, buffer)
        grad = np.zeros(weights.num_params)
        for mem, seed in zip(buffer.tasks, seeds):
            grad += vjp(weights, mem.points, seed)
        return tau * value, tau * grad

    return penalty


def train_task(data: Dataset, w_init: Weights | None, buffer: MemoryBuffer,
               cfg: ClConfig, likelihood: Likelihood, val: Dataset,
               observed_classes=None) -> tuple[Weights, TaskMemory]:
    """Train on one task under the memory penalty, then summarise the task.

    With tau = 0 or an empty buffer the run follows exactly the same
    trajectory as plain training with the same seed.
    """
    spec = w_init.spec if w_init is not None else None
    if spec is None:
        raise Error("train_task needs initial weights (they fix the architecture)")
    penalty = make_penalty(buffer, cfg.tau)
    weights = train_map(data, spec, likelihood, cfg.train, val, w_init=w_init, penalty=penalty)
    memory = build_task_memory(
        data, weights, likelihood, cfg.train.prior_precision,
        m=min(cfg.points_per_task, data.n), seed=cfg.seed,
        observed_classes=observed_classes,
    )
    if cfg.reg_metric == "identity":
        memory = TaskMemory(
            points=memory.points,
            targets=memory.targets,
            metric=np.stack([np.eye(memory.m)] * memory.metric.shape[0]),
        )
    return weights, memory


@dataclass(eq=False)
class ContinuumResult:
    accuracy_matrix: np.ndarray  # (T, T): after task i, accuracy on task j's test split
    average_final_accuracy: float
    weights: Weights
    buffer: MemoryBuffer

    def to_dict(self) -> dict:
        t = self.accuracy_matrix.shape[0]
        matrix = {
            f"task_{i}": {f"task_{j}": float(self.accuracy_matrix[i, j]) for j in range(t)}
            for i in range(t)
        }
        return {"accuracy_matrix": matrix, "average_final_accuracy": self.average_final_accuracy}


def run_continuum(tasks: list[Dataset], network: NetworkSpec, cfg: ClConfig,
                  likelihood: Likelihood) -> ContinuumResult:
    """Sequentially train over tasks, carrying weights and the memory buffer.

    Each task dataset is split 70/15/15; the matrix entry (i, j) is the
    accuracy of the model after task i on task j's test split, evaluated
    from the network's own predictions.
    """
    if not tasks:
        raise Error("need at least one task")
    splits = [
        split(task, (0.7, 0.15, 0.15), seed=cfg.seed + 101 * t, normalize=False)
        for t, task in enumerate(tasks)
    ]
    buffer = MemoryBuffer()
    weights = init_weights(network, cfg.train.seed)
    t_count = len(tasks)
    matrix = np.zeros((t_count, t_count))
    for t, (train, val, _) in enumerate(splits):
        classes = set(int(v) for v in np.unique(train.y)) if train.task == "classification" else set()
        observed = buffer.observed_classes | classes
        weights, memory = train_task(train, weights, buffer, cfg, likelihood, val,
                                     observed_classes=observed)
        buffer.add(memory, classes)
        for j, (_, _, test) in enumerate(splits):
            probs = likelihood.probs(forward(weights, test.X))
            matrix[t, j] = accuracy(probs, test.y)
    return ContinuumResult(
        accuracy_matrix=matrix,
        average_final_accuracy=float(matrix[-1].mean()),
        weights=weights,
        buffer=buffer,
    )


BUFFER_VERSION = 1


def buffer_dict(buffer: MemoryBuffer) -> dict:
    return {
        "version": BUFFER_VERSION,
        "observed_classes": sorted(buffer.observed_classes),
        "tasks": [
            {
                "points": [[float(v) for v in row] for row in mem.points],
                "targets": [[float(v) for v in row] for row in mem.targets],
                "metric": [[[float(v) for v in row] for row in mat] for mat in mem.metric],
            }
            for mem in buffer.tasks
        ],
    }


def save_buffer(buffer: MemoryBuffer, path) -> None:
    Path(path).write_text(json.dumps(buffer_dict(buffer), indent=2) + "\n")


def load_buffer(path) -> MemoryBuffer:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != BUFFER_VERSION:
        raise Error(f"unsupported buffer version {doc.get('version')}")
    buffer = MemoryBuffer()
    buffer.observed_classes = set(int(c) for c in doc["observed_classes"])
    for entry in doc["tasks"]:
        buffer.tasks.append(
            TaskMemory(
                points=np.array(entry["points"], dtype=np.float64),
                targets=np.array(entry["targets"], dtype=np.float64),
                metric=np.array(entry["metric"], dtype=np.float64),
            )
        )
    return buffer
