"""Observation models: log densities, inverse links, and dual derivatives.

Each likelihood exposes the two per-point statistics that determine the
function-space posterior: ``alpha`` (gradient of the log density in the
latent) and ``beta`` (negative second derivative, clamped at zero since none
of these likelihoods has negative curvature).  For the categorical model only
the diagonal of the softmax Hessian is kept, one value per class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .errors import Error, InvalidTarget


class Duals(NamedTuple):
    alpha: np.ndarray  # (N, C) gradient of log p(y|f)
    beta: np.ndarray  # (N, C) negative diagonal curvature, >= 0


def _latent(f: np.ndarray, c: int) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None] if c == 1 else f[None, :]
    if f.shape[1] != c:
        raise Error(f"latent values have {f.shape[1]} columns, expected {c}")
    return f


class Likelihood:
    """Base class; subclasses set ``num_outputs`` (latent dimension C)."""

    num_outputs = 1

    def log_density(self, y, f) -> np.ndarray:
        raise NotImplementedError

    def duals(self, y, f) -> Duals:
        raise NotImplementedError

    def dloss_df(self, y, f) -> np.ndarray:
        """Gradient of the negative log-likelihood in the latent: -alpha."""
        return -self.duals(y, f).alpha

    def probs(self, f) -> np.ndarray:
        """Inverse link applied to latents, as class-probability rows."""
        raise NotImplementedError

    def expected_prob(self, f_mean, f_var, samples: int = 64, seed: int = 0) -> np.ndarray:
        """Monte Carlo estimate of E_{N(f_mean, diag f_var)}[inverse link]."""
        mean = _latent(f_mean, self.num_outputs)
        var = np.asarray(f_var, dtype=np.float64).reshape(mean.shape)
        if np.any(var < 0):
            raise Error("latent variances must be nonnegative")
        if not np.any(var > 0):
            return self.probs(mean)
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((samples,) + mean.shape)
        draws = mean[None] + np.sqrt(var)[None] * z
        p = self.probs(draws.reshape(-1, mean.shape[1]))
        return p.reshape(samples, mean.shape[0], -1).mean(axis=0)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Gaussian(Likelihood):
    """Homoscedastic Gaussian observations with fixed noise variance."""

    noise_variance: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.noise_variance) or self.noise_variance <= 0:
            raise Error("noise_variance must be finite and positive")

    def _targets(self, y, n) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != n:
            raise InvalidTarget(f"{y.shape[0]} targets for {n} latent rows")
        if not np.all(np.isfinite(y)):
            raise InvalidTarget("regression targets must be finite")
        return y

    def log_density(self, y, f) -> np.ndarray:
        f = _latent(f, 1)[:, 0]
        y = self._targets(y, f.shape[0])
        s2 = self.noise_variance
        return -0.5 * np.log(2.0 * np.pi * s2) - 0.5 * (y - f) ** 2 / s2

    def duals(self, y, f) -> Duals:
        f = _latent(f, 1)
        y = self._targets(y, f.shape[0])[:, None]
        alpha = (y - f) / self.noise_variance
        beta = np.full_like(f, 1.0 / self.noise_variance)
        return Duals(alpha=alpha, beta=beta)

    def probs(self, f) -> np.ndarray:
        return _latent(f, 1)

    def predictive(self, f_mean, f_var) -> tuple[np.ndarray, np.ndarray]:
        """Closed-form predictive: latent mean, latent variance plus noise."""
        return np.asarray(f_mean, dtype=np.float64), np.asarray(f_var, dtype=np.float64) + self.noise_variance

    def expected_prob(self, f_mean, f_var, samples: int = 64, seed: int = 0):
        return self.predictive(f_mean, f_var)

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "noise_variance": self.noise_variance}


@dataclass(frozen=True)
class Bernoulli(Likelihood):
    """Binary classification through a sigmoid link on a single latent."""

    def _targets(self, y, n) -> np.ndarray:
        y = np.asarray(y)
        if y.shape != (n,):
            raise InvalidTarget(f"expected {n} binary targets, got shape {y.shape}")
        yv = y.astype(np.float64)
        if not np.all((yv == 0.0) | (yv == 1.0)):
            raise InvalidTarget("Bernoulli targets must be 0 or 1")
        return yv

    def log_density(self, y, f) -> np.ndarray:
        f = _latent(f, 1)[:, 0]
        y = self._targets(y, f.shape[0])
        # y*f - log(1 + e^f), stable for large |f|
        return y * f - np.logaddexp(0.0, f)

    def duals(self, y, f) -> Duals:
        f = _latent(f, 1)
        y = self._targets(y, f.shape[0])[:, None]
        p = expit(f)
        return Duals(alpha=y - p, beta=np.maximum(p * (1.0 - p), 0.0))

    def probs(self, f) -> np.ndarray:
        p = expit(_latent(f, 1)[:, 0])
        return np.column_stack([1.0 - p, p])

    def to_dict(self) -> dict:
        return {"kind": "bernoulli"}


@dataclass(frozen=True)
class Categorical(Likelihood):
    """Multi-class classification through a softmax link."""

    num_classes: int = 2

    def __post_init__(self):
        if self.num_classes < 2:
            raise Error("categorical likelihood needs at least 2 classes")

    @property
    def num_outputs(self) -> int:
        return self.num_classes

    def _targets(self, y, n) -> np.ndarray:
        y = np.asarray(y)
        if y.shape != (n,):
            raise InvalidTarget(f"expected {n} class indices, got shape {y.shape}")
        yi = y.astype(np.int64)
        if np.any(yi != np.asarray(y, dtype=np.float64)) or yi.min(initial=0) < 0 or yi.max(initial=0) >= self.num_classes:
            raise InvalidTarget(f"class indices must lie in [0, {self.num_classes})")
        return yi

    def log_density(self, y, f) -> np.ndarray:
        f = _latent(f, self.num_classes)
        y = self._targets(y, f.shape[0])
        return f[np.arange(f.shape[0]), y] - logsumexp(f, axis=1)

    def duals(self, y, f) -> Duals:
        f = _latent(f, self.num_classes)
        y = self._targets(y, f.shape[0])
        p = softmax(f, axis=1)
        onehot = np.zeros_like(p)
        onehot[np.arange(f.shape[0]), y] = 1.0
        return Duals(alpha=onehot - p, beta=np.maximum(p * (1.0 - p), 0.0))

    def probs(self, f) -> np.ndarray:
        return softmax(_latent(f, self.num_classes), axis=1)

    def to_dict(self) -> dict:
        return {"kind": "categorical", "num_classes": self.num_classes}


def make_likelihood(cfg: dict) -> Likelihood:
    kind = cfg.get("kind")
    if kind == "gaussian":
        return Gaussian(noise_variance=float(cfg.get("noise_variance", 1.0)))
    if kind == "bernoulli":
        return Bernoulli()
    if kind == "categorical":
        return Categorical(num_classes=int(cfg["num_classes"]))
    raise Error(f"unknown likelihood kind {kind!r}")
