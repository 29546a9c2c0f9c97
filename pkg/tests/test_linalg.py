import numpy as np
import pytest

from tangentgp import linalg
from tangentgp.errors import Asymmetric, DimensionMismatch, JitterExhausted, NotSquare


def test_identity_needs_no_jitter():
    factor = linalg.cholesky_jittered(np.eye(2), base_jitter=1e-8)
    assert np.array_equal(factor.lower, np.eye(2))
    assert factor.jitter_used == 0.0


def test_hand_cholesky_2x2():
    factor = linalg.cholesky_jittered(np.array([[4.0, 2.0], [2.0, 3.0]]))
    expected = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])
    assert np.allclose(factor.lower, expected, atol=1e-12)
    assert factor.jitter_used == 0.0


def test_singular_matrix_forces_jitter():
    factor = linalg.cholesky_jittered(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert factor.jitter_used > 0.0
    recon = linalg.reconstruct(factor)
    assert np.allclose(recon, np.ones((2, 2)) + factor.jitter_used * np.eye(2), atol=1e-10)


def test_jitter_exhausted_on_hopeless_matrix():
    with pytest.raises(JitterExhausted):
        linalg.cholesky_jittered(np.zeros((2, 2)))


def test_not_square_and_asymmetric():
    with pytest.raises(NotSquare):
        linalg.cholesky_jittered(np.ones((2, 3)))
    with pytest.raises(Asymmetric):
        linalg.cholesky_jittered(np.array([[1.0, 0.5], [0.1, 1.0]]))


def test_solve_identity():
    factor = linalg.cholesky_jittered(np.eye(3))
    assert np.allclose(linalg.solve_posdef(factor, np.eye(3)), np.eye(3), atol=1e-12)


def test_solve_returns_inverse_times_matrix():
    a = np.array([[4.0, 2.0], [2.0, 3.0]])
    factor = linalg.cholesky_jittered(a)
    assert np.allclose(linalg.solve_posdef(factor, a), np.eye(2), atol=1e-12)


def test_solve_diagonal_by_hand():
    factor = linalg.cholesky_jittered(np.diag([2.0, 2.0]))
    x = linalg.solve_posdef(factor, np.array([[2.0], [4.0]]))
    assert np.allclose(x, np.array([[1.0], [2.0]]), atol=1e-14)


def test_solve_dimension_mismatch():
    factor = linalg.cholesky_jittered(np.eye(3))
    with pytest.raises(DimensionMismatch):
        linalg.solve_posdef(factor, np.ones((2, 2)))


def test_reconstruction_error_bound():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = rng.integers(2, 8)
        b = rng.standard_normal((n, n))
        a = b @ b.T  # PSD
        factor = linalg.cholesky_jittered(a)
        err = np.linalg.norm(linalg.reconstruct(factor) - a)
        assert err <= factor.jitter_used * np.sqrt(n) + 1e-8 * np.linalg.norm(a)


def test_solve_is_left_inverse_for_well_conditioned():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n = int(rng.integers(2, 10))
        b = rng.standard_normal((n, n))
        a = b @ b.T + n * np.eye(n)  # condition number well under 1e6
        x = rng.standard_normal((n, 3))
        factor = linalg.cholesky_jittered(a)
        recovered = linalg.solve_posdef(factor, a @ x)
        assert np.allclose(recovered, x, atol=1e-7)
