"""Dataset loading, splitting, normalisation and synthetic generators.

Inputs are standardised per feature using statistics from the training
portion of a split; regression targets are standardised too, with the
statistics kept on the dataset so predictions and metrics can be mapped
back to original units.  Classification targets stay as raw class indices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import BadFractions, EmptyFile, Error, MissingColumn, MissingFile, ParseError

TASKS = ("regression", "classification")


@dataclass(eq=False)
class Normalization:
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float | None = None
    y_std: float | None = None

    def to_dict(self) -> dict:
        return {
            "x_mean": [float(v) for v in self.x_mean],
            "x_std": [float(v) for v in self.x_std],
            "y_mean": self.y_mean,
            "y_std": self.y_std,
        }

    @staticmethod
    def from_dict(d: dict) -> "Normalization":
        return Normalization(
            x_mean=np.array(d["x_mean"], dtype=np.float64),
            x_std=np.array(d["x_std"], dtype=np.float64),
            y_mean=d.get("y_mean"),
            y_std=d.get("y_std"),
        )


@dataclass(eq=False)
class Dataset:
    X: np.ndarray  # (N, D)
    y: np.ndarray  # (N,) floats for regression, class indices otherwise
    task: str = "regression"
    feature_names: tuple[str, ...] | None = None
    normalization: Normalization | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y)
        if self.task not in TASKS:
            raise Error(f"task must be one of {TASKS}")
        if self.y.shape[0] != self.X.shape[0]:
            raise Error(f"{self.y.shape[0]} targets for {self.X.shape[0]} rows")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx].copy(), y=self.y[idx].copy())

    def num_classes(self) -> int:
        if self.task != "classification":
            raise Error("num_classes is only defined for classification data")
        return int(self.y.max()) + 1 if self.n else 0


def _is_int(cell: str) -> bool:
    try:
        int(cell)
        return True
    except ValueError:
        return False


def load_csv(path, target_column: str, task: str) -> Dataset:
    """Read a comma separated file with a header row.

    Non-numeric classification labels are mapped to contiguous indices in
    order of first appearance; integer labels are taken at face value.  Cell
    positions in errors count the header as row 0.
    """
    p = Path(path)
    if not p.exists():
        raise MissingFile(f"no such file: {p}")
    with p.open(newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise EmptyFile(f"{p} has no header row")
    header = [h.strip() for h in rows[0]]
    if target_column not in header:
        raise MissingColumn(f"column {target_column!r} not in header {header}")
    target_idx = header.index(target_column)
    feature_names = tuple(h for i, h in enumerate(header) if i != target_idx)

    features: list[list[float]] = []
    raw_targets: list[str] = []
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise ParseError(r, len(row), f"row {r} has {len(row)} cells, expected {len(header)}")
        vals = []
        for col, cell in enumerate(row):
            if col == target_idx:
                raw_targets.append(cell.strip())
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(r, col) from None
        features.append(vals)

    x = np.array(features, dtype=np.float64).reshape(len(features), len(feature_names))
    if task == "regression":
        y = np.empty(len(raw_targets))
        for i, cell in enumerate(raw_targets):
            try:
                y[i] = float(cell)
            except ValueError:
                raise ParseError(i + 1, target_idx) from None
    elif task == "classification":
        y = np.empty(len(raw_targets), dtype=np.int64)
        if raw_targets and all(_is_int(cell) for cell in raw_targets) and all(int(c) >= 0 for c in raw_targets):
            # integer labels keep their value so class indices survive
            # round-trips through prediction/evaluation files
            for i, cell in enumerate(raw_targets):
                y[i] = int(cell)
        else:
            seen: dict[str, int] = {}
            for i, cell in enumerate(raw_targets):
                if cell not in seen:
                    seen[cell] = len(seen)
                y[i] = seen[cell]
    else:
        raise Error(f"task must be one of {TASKS}")
    return Dataset(X=x, y=y, task=task, feature_names=feature_names)


def fit_normalization(train: Dataset) -> Normalization:
    x_mean = train.X.mean(axis=0)
    x_std = train.X.std(axis=0)
    x_std = np.where(x_std > 0, x_std, 1.0)  # constant features pass through
    norm = Normalization(x_mean=x_mean, x_std=x_std)
    if train.task == "regression":
        y_std = float(np.std(np.asarray(train.y, dtype=np.float64)))
        norm.y_mean = float(np.mean(np.asarray(train.y, dtype=np.float64)))
        norm.y_std = y_std if y_std > 0 else 1.0
    return norm


def apply_normalization(data: Dataset, norm: Normalization) -> Dataset:
    x = (data.X - norm.x_mean) / norm.x_std
    y = data.y
    if data.task == "regression" and norm.y_mean is not None:
        y = (np.asarray(y, dtype=np.float64) - norm.y_mean) / norm.y_std
    return replace(data, X=x, y=y, normalization=norm)


def normalize_inputs(x: np.ndarray, norm: Normalization) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - norm.x_mean) / norm.x_std


def denormalize_inputs(x: np.ndarray, norm: Normalization) -> np.ndarray:
    return np.asarray(x, dtype=np.float64) * norm.x_std + norm.x_mean


def denormalize_predictions(mean: np.ndarray, var: np.ndarray, norm: Normalization):
    """Map standardised-target predictions back to original units."""
    if norm.y_mean is None:
        return mean, var
    return mean * norm.y_std + norm.y_mean, var * norm.y_std**2


def split(data: Dataset, fractions: tuple[float, float, float], seed: int,
          normalize: bool = True) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle then contiguous partition into train / val / test.

    Sizes are floor(N * f_train) and floor(N * f_val), the remainder going
    to test.  Normalisation statistics come from the train part and are
    applied to all three.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be three nonnegative values summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.n)
    n_train = int(np.floor(data.n * fractions[0]))
    n_val = int(np.floor(data.n * fractions[1]))
    parts = (
        data.take(order[:n_train]),
        data.take(order[n_train : n_train + n_val]),
        data.take(order[n_train + n_val :]),
    )
    if not normalize:
        return parts
    norm = fit_normalization(parts[0])
    return tuple(apply_normalization(p, norm) for p in parts)


def _split_two(data: Dataset, first_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.n)
    n_first = int(np.floor(data.n * first_fraction))
    return data.take(order[:n_first]), data.take(order[n_first:])


@dataclass(eq=False)
class UpdateSplit:
    """Ordered split for the update experiment: in-distribution train/val plus
    a held-out second half cut into update and test portions."""

    train: Dataset
    val: Dataset
    update: Dataset
    test: Dataset


def ordered_split_for_update(data: Dataset, seed: int = 0, normalize: bool = True) -> UpdateSplit:
    """Sort along the most varied feature, halve, then sub-split both halves.

    The feature with the most distinct values (ties: lowest index) orders the
    data; the first half is in-distribution and is split 70/30 into
    train/val, the second half 70/30 into update/test.  Statistics from the
    in-distribution train portion normalise everything.
    """
    counts = [np.unique(data.X[:, j]).size for j in range(data.d)]
    feature = int(np.argmax(counts))
    order = np.argsort(data.X[:, feature], kind="stable")
    n_first = (data.n + 1) // 2
    d1 = data.take(order[:n_first])
    d2 = data.take(order[n_first:])
    train, val = _split_two(d1, 0.7, seed)
    update, test = _split_two(d2, 0.7, seed + 1)
    if normalize:
        norm = fit_normalization(train)
        train, val, update, test = (apply_normalization(p, norm) for p in (train, val, update, test))
    return UpdateSplit(train=train, val=val, update=update, test=test)


def make_sine(n: int, noise_std: float = 0.2, seed: int = 0,
              x_min: float = -3.0, x_max: float = 3.0,
              gap: tuple[float, float] | None = (1.5, 3.0)) -> Dataset:
    """1D regression: y = sin(3x) + noise, with an optional unobserved gap.

    Inputs are uniform over [x_min, x_max] minus the gap interval, which is
    left empty to mimic a region where data arrives later.
    """
    if n < 2:
        raise Error("need at least 2 points")
    rng = np.random.default_rng(seed)
    intervals = [(x_min, x_max)] if gap is None else [
        (lo, hi) for lo, hi in ((x_min, gap[0]), (gap[1], x_max)) if hi > lo
    ]
    lengths = np.array([hi - lo for lo, hi in intervals])
    u = rng.uniform(0.0, lengths.sum(), size=n)
    x = np.empty(n)
    edges = np.concatenate([[0.0], np.cumsum(lengths)])
    for i, (lo, _) in enumerate(intervals):
        inside = (u >= edges[i]) & (u < edges[i + 1])
        x[inside] = lo + (u[inside] - edges[i])
    y = np.sin(3.0 * x) + noise_std * rng.standard_normal(n)
    return Dataset(X=x[:, None], y=y, task="regression")


def make_banana(n: int, seed: int = 0, noise: float = 0.15) -> Dataset:
    """2D binary classification: two interleaved crescents, balanced within one point."""
    if n < 2:
        raise Error("need at least 2 points")
    rng = np.random.default_rng(seed)
    n0 = n - n // 2
    n1 = n // 2
    t0 = rng.uniform(0.0, np.pi, size=n0)
    t1 = rng.uniform(0.0, np.pi, size=n1)
    x0 = np.column_stack([np.cos(t0), np.sin(t0)])
    x1 = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    x = np.concatenate([x0, x1]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    order = rng.permutation(n)
    return Dataset(X=x[order], y=y[order], task="classification")


def make_blobs(n: int, num_classes: int = 4, seed: int = 0, spread: float = 0.6,
               radius: float = 2.5) -> Dataset:
    """2D Gaussian blobs on a circle, one per class, near-equal class counts."""
    if num_classes < 2:
        raise Error("need at least 2 classes")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    centers = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    counts = [n // num_classes + (1 if i < n % num_classes else 0) for i in range(num_classes)]
    xs, ys = [], []
    for cls, cnt in enumerate(counts):
        xs.append(centers[cls] + spread * rng.standard_normal((cnt, 2)))
        ys.append(np.full(cnt, cls, dtype=np.int64))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(n)
    return Dataset(X=x[order], y=y[order], task="classification")


def make_split_tasks(base: Dataset, classes_per_task: int) -> list[Dataset]:
    """Partition a labelled dataset into tasks of disjoint classes, in index order.

    Labels keep their global indices (single shared output head).
    """
    if base.task != "classification":
        raise Error("task splits need classification data")
    if classes_per_task < 1:
        raise Error("classes_per_task must be >= 1")
    num_classes = base.num_classes()
    tasks = []
    for start in range(0, num_classes, classes_per_task):
        members = set(range(start, min(start + classes_per_task, num_classes)))
        idx = np.array([i for i in range(base.n) if int(base.y[i]) in members], dtype=np.int64)
        tasks.append(base.take(idx))
    return tasks
