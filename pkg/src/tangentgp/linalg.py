"""Dense symmetric linear algebra with jitter-stabilised Cholesky factors.

Everything here runs in double precision and is purely functional, so the
routines can be shared freely across threads.  Factorisation retries with a
geometrically growing diagonal jitter until the matrix becomes numerically
positive definite, and records how much jitter was needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import Asymmetric, DimensionMismatch, JitterExhausted, NotSquare

# Jitter schedule: {0, b, 10 b, 100 b, ...} with default b = 1e-8 * mean(diag),
# aborting once the candidate would exceed 1e-2 * mean(diag).
DEFAULT_BASE_FRACTION = 1e-8
MAX_JITTER_FRACTION = 1e-2
ASYMMETRY_TOL = 1e-10


@dataclass(eq=False)
class CholeskyFactor:
    """Lower-triangular factor L with L @ L.T = A + jitter_used * I."""

    lower: np.ndarray
    jitter_used: float

    @property
    def n(self) -> int:
        return self.lower.shape[0]


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Average away rounding asymmetry: (A + A.T) / 2."""
    return 0.5 * (a + a.T)


def cholesky_jittered(a: np.ndarray, base_jitter: float | None = None) -> CholeskyFactor:
    """Factor a symmetric positive (semi)definite matrix, adding jitter if needed.

    Tries the bare matrix first, then A + j I for j on the geometric
    schedule {base, 10 base, ...}.  Raises ``JitterExhausted`` when the
    candidate jitter would exceed 1e-2 times the mean diagonal, which bounds
    the perturbation relative to the matrix scale.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSquare(f"expected a square matrix, got shape {a.shape}")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > ASYMMETRY_TOL * max(scale, 1e-300):
        raise Asymmetric(f"relative asymmetry {asym / max(scale, 1e-300):.3e} exceeds {ASYMMETRY_TOL:.0e}")

    diag_mean = float(np.mean(np.diag(a))) if a.size else 0.0
    if base_jitter is None:
        base_jitter = DEFAULT_BASE_FRACTION * diag_mean
    cap = MAX_JITTER_FRACTION * diag_mean

    jitter = 0.0
    eye = np.eye(a.shape[0])
    while True:
        try:
            lower = np.linalg.cholesky(a + jitter * eye if jitter else a)
            return CholeskyFactor(lower=lower, jitter_used=jitter)
        except np.linalg.LinAlgError:
            nxt = base_jitter if jitter == 0.0 else 10.0 * jitter
            if nxt <= jitter or nxt > cap:
                raise JitterExhausted(
                    f"jitter {nxt:.3e} would exceed {cap:.3e} (1e-2 * mean diagonal)"
                ) from None
            jitter = nxt


def solve_posdef(factor: CholeskyFactor, b: np.ndarray) -> np.ndarray:
    """Solve (L L.T) X = B given the Cholesky factor L."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != factor.n:
        raise DimensionMismatch(f"factor is {factor.n}x{factor.n} but rhs has leading dim {b.shape[0]}")
    return cho_solve((factor.lower, True), b, check_finite=False)


def reconstruct(factor: CholeskyFactor) -> np.ndarray:
    """Return L @ L.T, i.e. the (jittered) matrix that was factored."""
    return factor.lower @ factor.lower.T
