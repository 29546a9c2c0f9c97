"""Empirical tangent kernel of a trained network.

Linearising the network at its trained weights and treating the ridge
penalty as a Gaussian prior over parameters induces, per output c, the
kernel

    k_c(x, x') = (1 / delta) * J_c(x) . J_c(x')

with J_c the row of the parameter Jacobian for output c and delta the prior
precision used as weight decay during training.  Outputs are treated as
independent functions, so a Gram evaluation returns one matrix per output
class.  All evaluations stream over row batches so that peak extra memory
stays at O(batch * C * P).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Error
from .nets import Weights, jacobian_batch

DEFAULT_BATCH = 128


@dataclass(eq=False)
class TangentKernel:
    """Kernel induced by linearising ``weights`` under prior precision ``prior_precision``.

    ``prior_precision`` must equal the weight-decay coefficient the network
    was trained with, otherwise prior and curvature scales disagree.
    """

    weights: Weights
    prior_precision: float

    def __post_init__(self):
        if self.prior_precision <= 0:
            raise Error("prior_precision must be positive")

    @property
    def num_outputs(self) -> int:
        return self.weights.spec.output_dim

    def jacobians(self, x: np.ndarray, batch: int = DEFAULT_BATCH) -> np.ndarray:
        """Stacked Jacobians (N, C, P), computed in row batches."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        blocks = [jacobian_batch(self.weights, x[s : s + batch]) for s in range(0, x.shape[0], max(batch, 1))]
        return np.concatenate(blocks, axis=0)

    def pair_gram(self, j_left: np.ndarray, j_right: np.ndarray) -> np.ndarray:
        """Per-class cross Gram (C, n_left, n_right) from precomputed Jacobians."""
        left = np.ascontiguousarray(j_left.transpose(1, 0, 2))  # (C, nL, P)
        right = np.ascontiguousarray(j_right.transpose(1, 2, 0))  # (C, P, nR)
        return np.matmul(left, right) / self.prior_precision

    def gram(self, a: np.ndarray, b: np.ndarray | None = None, batch: int = DEFAULT_BATCH) -> np.ndarray:
        """Kernel matrix blocks (C, n_a, n_b); b defaults to a.

        The result does not depend on ``batch``: every entry is a single dot
        product over the parameter axis regardless of how rows are grouped.
        """
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        b = a if b is None else np.atleast_2d(np.asarray(b, dtype=np.float64))
        if a.shape[1] != b.shape[1]:
            raise Error(f"point sets have mismatched dimension {a.shape[1]} vs {b.shape[1]}")
        batch = max(int(batch), 1)
        out = np.zeros((self.num_outputs, a.shape[0], b.shape[0]))
        for i in range(0, a.shape[0], batch):
            j_a = jacobian_batch(self.weights, a[i : i + batch])
            for j in range(0, b.shape[0], batch):
                j_b = jacobian_batch(self.weights, b[j : j + batch])
                out[:, i : i + batch, j : j + batch] = self.pair_gram(j_a, j_b)
        return out

    def diag(self, x: np.ndarray, batch: int = DEFAULT_BATCH) -> np.ndarray:
        """Per-class prior variances (C, N) without forming the full Gram."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        batch = max(int(batch), 1)
        out = np.zeros((self.num_outputs, x.shape[0]))
        for i in range(0, x.shape[0], batch):
            j = jacobian_batch(self.weights, x[i : i + batch])
            out[:, i : i + batch] = np.einsum("ncp,ncp->cn", j, j) / self.prior_precision
        return out
