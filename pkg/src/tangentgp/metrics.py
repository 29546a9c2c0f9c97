"""Evaluation metrics: NLPD, accuracy, calibration error, entropy-based AUROC."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-300
ENTROPY_FLOOR = 1e-12


@dataclass
class EvalReport:
    nlpd: float
    accuracy: float | None = None
    ece: float | None = None
    auroc: float | None = None
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "nlpd": self.nlpd,
            "accuracy": self.accuracy,
            "ece": self.ece,
            "auroc": self.auroc,
            # wall time is measured, not derived; identical runs may differ here
            "wall_seconds": self.wall_seconds,
        }


def nlpd_gaussian(mean: np.ndarray, var: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log density of y under per-point normal predictions."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    var = np.asarray(var, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    logp = -0.5 * np.log(2.0 * np.pi * var) - 0.5 * (y - mean) ** 2 / var
    return float(-np.mean(logp))


def nlpd_probs(probs: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log probability of the true class."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    p = probs[np.arange(probs.shape[0]), y]
    floored = int(np.sum(p < PROB_FLOOR))
    if floored:
        warnings.warn(f"floored {floored} probabilities below {PROB_FLOOR:.0e}", RuntimeWarning)
        p = np.maximum(p, PROB_FLOOR)
    return float(-np.mean(np.log(p)))


def accuracy(probs: np.ndarray, y: np.ndarray) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    return float(np.mean(np.argmax(probs, axis=1) == y))


def ece(probs: np.ndarray, y: np.ndarray, bins: int = 15) -> float:
    """Top-label expected calibration error with equal-width confidence bins."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    conf = probs.max(axis=1)
    correct = (np.argmax(probs, axis=1) == y).astype(np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.digitize(conf, edges[1:-1], right=True), 0, bins - 1)
    total = 0.0
    n = conf.shape[0]
    for b in range(bins):
        members = idx == b
        count = int(members.sum())
        if count == 0:
            continue
        gap = abs(correct[members].mean() - conf[members].mean())
        total += (count / n) * gap
    return float(total)


def entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy per row, natural log, probabilities floored at 1e-12."""
    p = np.maximum(np.asarray(probs, dtype=np.float64), ENTROPY_FLOOR)
    return -np.sum(p * np.log(p), axis=1)


def auroc_scores(scores_neg: np.ndarray, scores_pos: np.ndarray) -> float:
    """AUROC of positive-vs-negative scores; ties count one half."""
    neg = np.asarray(scores_neg, dtype=np.float64).reshape(-1)
    pos = np.asarray(scores_pos, dtype=np.float64).reshape(-1)
    if neg.size == 0 or pos.size == 0:
        raise ValueError("both score sets must be nonempty")
    diff = pos[:, None] - neg[None, :]
    wins = np.sum(diff > 0) + 0.5 * np.sum(diff == 0)
    return float(wins / (neg.size * pos.size))


def auroc_entropy(probs_id: np.ndarray, probs_ood: np.ndarray) -> float:
    """AUROC for separating OOD from ID points by predictive entropy."""
    return auroc_scores(entropy(probs_id), entropy(probs_ood))


class Stopwatch:
    """Monotonic wall-clock timer for report fields."""

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self._start
        return False
