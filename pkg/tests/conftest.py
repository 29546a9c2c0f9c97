import os

# keep BLAS single-threaded so repeated runs stay bit-identical
for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np
import pytest

import tangentgp as tg
from tangentgp.datasets import Dataset


def train_chain(data, spec, likelihood, delta, seed, chain, val=None):
    """Chained Adam runs with decreasing learning rate; returns near-stationary weights."""
    w = None
    for lr, epochs in chain:
        cfg = tg.TrainConfig(learning_rate=lr, batch_size=data.n, max_epochs=epochs,
                             patience=epochs, prior_precision=delta, seed=seed)
        w = tg.train_map(data, spec, likelihood, cfg, val if val is not None else data, w_init=w)
    return w


def sine_grid(n, noise, seed, lo=-3.0, hi=1.5):
    """Equispaced noisy sine, the best conditioned 1D regression fixture."""
    rng = np.random.default_rng(seed)
    x = np.linspace(lo, hi, n)
    return Dataset(X=x[:, None], y=np.sin(3.0 * x) + noise * rng.standard_normal(n), task="regression")


def trend_sine(n, noise, seed):
    """Two-feature regression: gentle trend in the split axis plus a sine in the other."""
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-3.0, 3.0, n)
    x1 = rng.uniform(-3.0, 3.0, n)
    y = 0.3 * x0 + np.sin(3.0 * x1) + noise * rng.standard_normal(n)
    return Dataset(X=np.column_stack([x0, x1]), y=y, task="regression")


def perturbed_weights(spec, seed, scale=0.5):
    rng = np.random.default_rng(seed + 1000)
    w = tg.init_weights(spec, seed)
    return w.replace_values(w.values + scale * rng.standard_normal(w.num_params))


@pytest.fixture(scope="session")
def scalar_fixture():
    """Bias-free linear model with one data point: every quantity is known in closed form.

    f(x) = w x with w = 0.5, x = y = 1, noise variance 1, prior precision 1:
    kernel value 1, alpha = 0.5, beta = 1, posterior mean 0.5, variance 0.5.
    """
    spec = tg.NetworkSpec(input_dim=1, output_dim=1, hidden=(), bias=False)
    weights = tg.Weights(values=np.array([0.5]), spec=spec)
    data = Dataset(X=np.array([[1.0]]), y=np.array([1.0]), task="regression")
    return data, weights, tg.Gaussian(noise_variance=1.0)
