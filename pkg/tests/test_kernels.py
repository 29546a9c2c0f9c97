import numpy as np

import tangentgp as tg
from tangentgp.kernels import TangentKernel

from conftest import perturbed_weights


def linear_no_bias_kernel():
    spec = tg.NetworkSpec(1, 1, (), bias=False)
    w = tg.Weights(values=np.array([0.7]), spec=spec)
    return TangentKernel(weights=w, prior_precision=1.0)


def test_linear_model_gram_is_input_product():
    # f = w x without bias has Jacobian x, so the kernel is x x' / delta
    kern = linear_no_bias_kernel()
    x = np.array([[1.0], [2.0], [-3.0]])
    gram = kern.gram(x)
    assert np.allclose(gram[0], np.outer(x[:, 0], x[:, 0]))


def test_single_point_gram_is_squared_norm():
    spec = tg.NetworkSpec(2, 2, (4,))
    kern = TangentKernel(weights=perturbed_weights(spec, 0), prior_precision=2.0)
    x = np.array([[0.3, -1.2]])
    gram = kern.gram(x)
    jac = tg.jacobian(kern.weights, x[0])
    for c in range(2):
        assert gram[c].shape == (1, 1)
        assert gram[c][0, 0] >= 0.0
        assert np.isclose(gram[c][0, 0], jac[c] @ jac[c] / 2.0)


def test_gram_batch_invariance():
    spec = tg.NetworkSpec(2, 2, (6,))
    kern = TangentKernel(weights=perturbed_weights(spec, 1), prior_precision=0.5)
    rng = np.random.default_rng(2)
    a = rng.standard_normal((9, 2))
    b = rng.standard_normal((5, 2))
    full = kern.gram(a, b, batch=9)
    assert np.allclose(kern.gram(a, b, batch=1), full, atol=1e-12)
    assert np.allclose(kern.gram(a, b, batch=4), full, atol=1e-12)


def test_diag_matches_gram_diagonal():
    spec = tg.NetworkSpec(3, 2, (5,))
    kern = TangentKernel(weights=perturbed_weights(spec, 3), prior_precision=1.3)
    x = np.random.default_rng(4).standard_normal((7, 3))
    gram = kern.gram(x)
    diag = kern.diag(x)
    for c in range(2):
        assert np.allclose(diag[c], np.diag(gram[c]), atol=1e-12)


def test_diag_linear_value_and_scaling():
    kern = linear_no_bias_kernel()
    assert np.isclose(kern.diag(np.array([[2.0]]))[0, 0], 4.0)
    half = TangentKernel(weights=kern.weights, prior_precision=2.0)
    x = np.array([[0.5], [2.0], [-1.0]])
    assert np.array_equal(half.gram(x), kern.gram(x) / 2.0)  # power-of-two scaling is exact


def test_gram_symmetric_and_psd():
    spec = tg.NetworkSpec(2, 3, (8,))
    kern = TangentKernel(weights=perturbed_weights(spec, 5), prior_precision=1.0)
    x = np.random.default_rng(6).standard_normal((12, 2))
    gram = kern.gram(x)
    for c in range(3):
        block = gram[c]
        scale = np.abs(block).max()
        assert np.max(np.abs(block - block.T)) <= 1e-10 * max(scale, 1e-12)
        eigs = np.linalg.eigvalsh(0.5 * (block + block.T))
        assert eigs.min() >= -1e-8 * np.trace(block) / block.shape[0]
