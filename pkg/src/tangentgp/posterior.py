"""Sparse function-space posterior built from a trained network.

The trained network is linearised and read as a zero-mean GP with the
empirical tangent kernel.  Per-point derivative statistics of the log
likelihood, evaluated at the network outputs, are projected onto a set of
inducing inputs Z:

    alpha_u = sum_i k_zi * alpha_i          (per class, an M-vector)
    B_u     = sum_i k_zi * beta_i * k_zi^T  (per class, an M x M matrix)

These two statistics summarise every training point and fully determine the
posterior over latent functions:

    E[f(x)]   = k_zx^T Kzz^{-1} alpha_u
    Var[f(x)] = k_xx - k_zx^T [ Kzz^{-1} - (Kzz + B_u)^{-1} ] k_zx

Because the projections are plain sums over data points, new observations
can be folded in later by accumulating their contributions into
(alpha_u, B_u) and refactoring (Kzz + B_u): no retraining of the network.
Sums always run in global sample-index order so results cannot depend on
the batch size.

A dense,
all-points variant (``full_gp_predict``) serves as the exact counterpart
for verification at small N, and ``fit_subset`` is the baseline that keeps
only the inducing points' own contributions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linalg
from .errors import DimensionMismatch, Error, MTooLarge, NegativeVariance, NTooLarge
from .kernels import DEFAULT_BATCH, TangentKernel
from .likelihoods import Gaussian, Likelihood, make_likelihood
from .nets import Weights, forward

VARIANCE_TOL = -1e-10
MEAN_MODES = ("zero_mean", "nn_mean")


@dataclass(eq=False)
class InducingSet:
    points: np.ndarray  # (M, D)
    source_indices: np.ndarray | None
    seed: int

    @property
    def m(self) -> int:
        return self.points.shape[0]


def sample_inducing(x: np.ndarray, m: int, seed: int) -> InducingSet:
    """Draw M inducing inputs uniformly without replacement from the rows of X."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n = x.shape[0]
    if not 1 <= m <= n:
        raise MTooLarge(f"needs 1 <= M <= N, got M={m}, N={n}")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(n)[:m]
    return InducingSet(points=x[idx].copy(), source_indices=idx, seed=seed)


@dataclass(eq=False)
class DualParams:
    alpha: np.ndarray  # (C, M)
    curvature: np.ndarray  # (C, M, M), symmetric PSD

    def copy(self) -> "DualParams":
        return DualParams(alpha=self.alpha.copy(), curvature=self.curvature.copy())


def _accumulate(duals: DualParams, kzx: np.ndarray, alpha_hat: np.ndarray, beta_hat: np.ndarray) -> None:
    """Fold a block of points into the duals, strictly one sample at a time."""
    for i in range(kzx.shape[2]):
        k = kzx[:, :, i]  # (C, M)
        duals.alpha += k * alpha_hat[i][:, None]
        duals.curvature += beta_hat[i][:, None, None] * (k[:, :, None] * k[:, None, :])


class SparsePosterior:
    """Fitted sparse posterior: inducing set, duals, and cached factorisations.

    Instances are immutable once built; ``dual_update`` returns a new
    posterior, so concurrent readers of the old one are never disturbed.
    """

    def __init__(self, inducing: InducingSet, duals: DualParams, kernel: TangentKernel,
                 likelihood: Likelihood, mean_mode: str = "zero_mean"):
        if mean_mode not in MEAN_MODES:
            raise Error(f"mean_mode must be one of {MEAN_MODES}")
        self.inducing = inducing
        self.duals = duals
        self.kernel = kernel
        self.likelihood = likelihood
        self.mean_mode = mean_mode
        self._inducing_jac = kernel.jacobians(inducing.points)  # cached (M, C, P)
        kzz = kernel.pair_gram(self._inducing_jac, self._inducing_jac)
        self.kzz = np.stack([linalg.symmetrize(kzz[c]) for c in range(kzz.shape[0])])
        # one jitter scale per class, set by the prior gram: the same smoothing
        # must apply to Kzz and Kzz + B_u or their near-null spaces drift apart
        self._base_jitter = [
            linalg.DEFAULT_BASE_FRACTION * float(np.mean(np.diag(self.kzz[c])))
            for c in range(self.num_outputs)
        ]
        self.kzz_chol = [
            linalg.cholesky_jittered(self.kzz[c], base_jitter=self._base_jitter[c])
            for c in range(self.num_outputs)
        ]
        self._refresh_factors()

    def _refresh_factors(self) -> None:
        self.kzz_plus_b_chol = [
            linalg.cholesky_jittered(
                linalg.symmetrize(self.kzz[c] + self.duals.curvature[c]),
                base_jitter=self._base_jitter[c],
            )
            for c in range(self.num_outputs)
        ]
        self._mean_weights = np.stack(
            [linalg.solve_posdef(self.kzz_chol[c], self.duals.alpha[c]) for c in range(self.num_outputs)]
        )

    @property
    def num_outputs(self) -> int:
        return self.kernel.num_outputs

    @property
    def weights(self) -> Weights:
        return self.kernel.weights

    def predict_f(self, x: np.ndarray, batch: int = DEFAULT_BATCH) -> tuple[np.ndarray, np.ndarray]:
        """Latent posterior mean and variance at test inputs, both (N, C)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n, c = x.shape[0], self.num_outputs
        mean = np.zeros((n, c))
        var = np.zeros((n, c))
        batch = max(int(batch), 1)
        for s in range(0, n, batch):
            xb = x[s : s + batch]
            j_b = self.kernel.jacobians(xb, batch=batch)
            kzx = self.kernel.pair_gram(self._inducing_jac, j_b)  # (C, M, nb)
            kdiag = np.einsum("ncp,ncp->cn", j_b, j_b) / self.kernel.prior_precision
            for ci in range(c):
                mean[s : s + batch, ci] = kzx[ci].T @ self._mean_weights[ci]
                s0 = linalg.solve_posdef(self.kzz_chol[ci], kzx[ci])
                s1 = linalg.solve_posdef(self.kzz_plus_b_chol[ci], kzx[ci])
                var[s : s + batch, ci] = kdiag[ci] - np.einsum("mn,mn->n", kzx[ci], s0) + np.einsum(
                    "mn,mn->n", kzx[ci], s1
                )
        worst = float(var.min()) if var.size else 0.0
        if worst < VARIANCE_TOL:
            raise NegativeVariance(f"posterior variance {worst:.3e} below tolerance {VARIANCE_TOL:.0e}")
        var = np.maximum(var, 0.0)
        if self.mean_mode == "nn_mean":
            mean = forward(self.weights, x)
        return mean, var

    def predict_y(self, x: np.ndarray, samples: int = 64, seed: int = 0, batch: int = DEFAULT_BATCH):
        """Predictive distribution: (mean, var) for Gaussian, probability rows otherwise."""
        mean, var = self.predict_f(x, batch=batch)
        return self.likelihood.expected_prob(mean, var, samples=samples, seed=seed)


def _check_same_dim(x: np.ndarray, d: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != d:
        raise DimensionMismatch(f"inputs have {x.shape[1]} columns, expected {d}")
    return x


def fit(data, weights: Weights, likelihood: Likelihood, prior_precision: float,
        inducing: InducingSet, batch: int = DEFAULT_BATCH, mean_mode: str = "zero_mean") -> SparsePosterior:
    """Project every training point onto the inducing set and build the posterior.

    Per batch: evaluate the network, read off the likelihood's derivative
    statistics there, and accumulate the kernel-weighted sums in double
    precision.  Accumulation order is the global sample index, so the duals
    match a refit over any concatenation of the same points.
    """
    kernel = TangentKernel(weights=weights, prior_precision=prior_precision)
    x = _check_same_dim(data.X, weights.spec.input_dim)
    y = data.y
    c, m = kernel.num_outputs, inducing.m
    duals = DualParams(alpha=np.zeros((c, m)), curvature=np.zeros((c, m, m)))
    j_z = kernel.jacobians(inducing.points)
    batch = max(int(batch), 1)
    for s in range(0, x.shape[0], batch):
        xb, yb = x[s : s + batch], y[s : s + batch]
        f = forward(weights, xb)
        alpha_hat, beta_hat = likelihood.duals(yb, f)
        kzx = kernel.pair_gram(j_z, kernel.jacobians(xb, batch=batch))
        _accumulate(duals, kzx, alpha_hat, beta_hat)
    return SparsePosterior(inducing=inducing, duals=duals, kernel=kernel,
                           likelihood=likelihood, mean_mode=mean_mode)


def fit_subset(data, weights: Weights, likelihood: Likelihood, prior_precision: float,
               inducing: InducingSet, mean_mode: str = "zero_mean") -> SparsePosterior:
    """Baseline: same machinery but only the inducing rows contribute.

    Equivalent to running the dense model on just the M selected training
    points; with M = N it coincides with ``fit``.
    """
    if inducing.source_indices is None:
        raise Error("subset baseline needs inducing points drawn from the training inputs")
    x = np.atleast_2d(np.asarray(data.X, dtype=np.float64))
    idx = np.sort(np.asarray(inducing.source_indices))  # accumulate in global sample order
    sub = _Slice(X=x[idx], y=np.asarray(data.y)[idx])
    return fit(sub, weights, likelihood, prior_precision, inducing, batch=len(idx), mean_mode=mean_mode)


@dataclass(eq=False)
class _Slice:
    X: np.ndarray
    y: np.ndarray


def dual_update(post: SparsePosterior, new_data, batch: int = DEFAULT_BATCH) -> SparsePosterior:
    """Fold new observations into the duals without touching the network.

    Kzz and its factor are reused; only (Kzz + B_u) is refactored.  With an
    empty dataset the returned posterior carries bitwise identical state.
    """
    x = np.atleast_2d(np.asarray(new_data.X, dtype=np.float64))
    if x.size and x.shape[1] != post.weights.spec.input_dim:
        raise DimensionMismatch(f"new data has {x.shape[1]} columns, expected {post.weights.spec.input_dim}")
    duals = post.duals.copy()
    batch = max(int(batch), 1)
    for s in range(0, x.shape[0], batch):
        xb, yb = x[s : s + batch], new_data.y[s : s + batch]
        f = forward(post.weights, xb)
        alpha_hat, beta_hat = post.likelihood.duals(yb, f)
        kzx = post.kernel.pair_gram(post._inducing_jac, post.kernel.jacobians(xb, batch=batch))
        _accumulate(duals, kzx, alpha_hat, beta_hat)

    updated = SparsePosterior.__new__(SparsePosterior)
    updated.inducing = post.inducing
    updated.duals = duals
    updated.kernel = post.kernel
    updated.likelihood = post.likelihood
    updated.mean_mode = post.mean_mode
    updated._inducing_jac = post._inducing_jac
    updated.kzz = post.kzz
    updated._base_jitter = post._base_jitter
    updated.kzz_chol = post.kzz_chol
    updated._refresh_factors()
    return updated


MAX_DENSE_POINTS = 5000


def full_gp_predict(data, weights: Weights, likelihood: Likelihood, prior_precision: float,
                    x_test: np.ndarray, batch: int = DEFAULT_BATCH,
                    mean_mode: str = "zero_mean") -> tuple[np.ndarray, np.ndarray]:
    """Dense all-points posterior, the exact counterpart of the sparse model.

    Per class: mean(x) = k_x^T alpha_hat and
    var(x) = k_xx - k_x^T (K + diag(beta_hat)^{-1})^{-1} k_x, with beta_hat
    floored at 1e-12 so the per-point noise term stays finite.
    """
    x = _check_same_dim(data.X, weights.spec.input_dim)
    n = x.shape[0]
    if n > MAX_DENSE_POINTS:
        raise NTooLarge(f"dense model guard: N={n} exceeds {MAX_DENSE_POINTS}")
    x_test = _check_same_dim(x_test, weights.spec.input_dim)
    kernel = TangentKernel(weights=weights, prior_precision=prior_precision)

    f = forward(weights, x)
    alpha_hat, beta_hat = likelihood.duals(data.y, f)
    beta_hat = np.maximum(beta_hat, 1e-12)

    j_train = kernel.jacobians(x, batch=batch)
    j_test = kernel.jacobians(x_test, batch=batch)
    k_train = kernel.pair_gram(j_train, j_train)  # (C, N, N)
    k_cross = kernel.pair_gram(j_train, j_test)  # (C, N, T)
    kdiag = np.einsum("ncp,ncp->cn", j_test, j_test) / prior_precision

    c = kernel.num_outputs
    mean = np.zeros((x_test.shape[0], c))
    var = np.zeros((x_test.shape[0], c))
    for ci in range(c):
        mean[:, ci] = k_cross[ci].T @ alpha_hat[:, ci]
        gram = linalg.symmetrize(k_train[ci]) + np.diag(1.0 / beta_hat[:, ci])
        factor = linalg.cholesky_jittered(gram)
        solved = linalg.solve_posdef(factor, k_cross[ci])
        var[:, ci] = kdiag[ci] - np.einsum("nt,nt->t", k_cross[ci], solved)
    worst = float(var.min()) if var.size else 0.0
    if worst < VARIANCE_TOL:
        raise NegativeVariance(f"posterior variance {worst:.3e} below tolerance {VARIANCE_TOL:.0e}")
    var = np.maximum(var, 0.0)
    if mean_mode == "nn_mean":
        mean = forward(weights, x_test)
    return mean, var


def full_gp_predict_y(data, weights, likelihood, prior_precision, x_test,
                      samples: int = 64, seed: int = 0, batch: int = DEFAULT_BATCH,
                      mean_mode: str = "zero_mean"):
    mean, var = full_gp_predict(data, weights, likelihood, prior_precision, x_test,
                                batch=batch, mean_mode=mean_mode)
    return likelihood.expected_prob(mean, var, samples=samples, seed=seed)


POSTERIOR_VERSION = 1


def posterior_dict(post: SparsePosterior, weights_ref: str) -> dict:
    src = post.inducing.source_indices
    return {
        "version": POSTERIOR_VERSION,
        "inducing": {
            "points": [[float(v) for v in row] for row in post.inducing.points],
            "source_indices": None if src is None else [int(i) for i in src],
            "seed": int(post.inducing.seed),
        },
        "alpha": [[float(v) for v in row] for row in post.duals.alpha],
        "curvature": [[[float(v) for v in row] for row in mat] for mat in post.duals.curvature],
        "prior_precision": float(post.kernel.prior_precision),
        "likelihood": post.likelihood.to_dict(),
        "mean_mode": post.mean_mode,
        "weights_ref": weights_ref,
    }


def save_posterior(post: SparsePosterior, path, weights_ref: str) -> None:
    Path(path).write_text(json.dumps(posterior_dict(post, weights_ref), indent=2) + "\n")


def load_posterior(path, weights: Weights | None = None) -> tuple[SparsePosterior, str]:
    """Rebuild a posterior from disk; factors are recomputed, never stored.

    When ``weights`` is not supplied the checkpoint named by ``weights_ref``
    is loaded, resolving a relative reference against the posterior file's
    directory.
    """
    from .nets import load_checkpoint

    p = Path(path)
    if not p.exists():
        raise Error(f"posterior not found: {p}")
    doc = json.loads(p.read_text())
    if doc.get("version") != POSTERIOR_VERSION:
        raise Error(f"unsupported posterior version {doc.get('version')}")
    weights_ref = doc["weights_ref"]
    if weights is None:
        ref = Path(weights_ref)
        if not ref.is_absolute():
            ref = p.parent / ref
        weights, _ = load_checkpoint(ref)
    ind = doc["inducing"]
    src = ind["source_indices"]
    inducing = InducingSet(
        points=np.array(ind["points"], dtype=np.float64),
        source_indices=None if src is None else np.array(src, dtype=np.int64),
        seed=int(ind["seed"]),
    )
    duals = DualParams(
        alpha=np.array(doc["alpha"], dtype=np.float64),
        curvature=np.array(doc["curvature"], dtype=np.float64),
    )
    kernel = TangentKernel(weights=weights, prior_precision=float(doc["prior_precision"]))
    post = SparsePosterior(
        inducing=inducing,
        duals=duals,
        kernel=kernel,
        likelihood=make_likelihood(doc["likelihood"]),
        mean_mode=doc["mean_mode"],
    )
    return post, weights_ref
