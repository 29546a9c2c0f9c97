import numpy as np
import pytest

import tangentgp as tg
from tangentgp.datasets import Dataset
from tangentgp.errors import MTooLarge, NTooLarge
from tangentgp.posterior import InducingSet, full_gp_predict_y, load_posterior, save_posterior

from conftest import perturbed_weights, sine_grid


def identity_inducing(data):
    return InducingSet(points=data.X.copy(), source_indices=np.arange(data.n), seed=0)


# ---------------------------------------------------------------------------
# inducing point sampling
# ---------------------------------------------------------------------------


def test_sample_all_is_permutation():
    x = np.arange(12.0).reshape(6, 2)
    z = tg.sample_inducing(x, 6, seed=3)
    assert sorted(map(tuple, z.points)) == sorted(map(tuple, x))


def test_sample_deterministic_by_seed():
    x = np.random.default_rng(0).standard_normal((20, 3))
    a = tg.sample_inducing(x, 5, seed=9)
    b = tg.sample_inducing(x, 5, seed=9)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.source_indices, b.source_indices)


def test_sample_matches_reference_shuffle():
    x = np.arange(3.0)[:, None]
    z = tg.sample_inducing(x, 1, seed=123)
    expected = np.random.default_rng(123).permutation(3)[:1]
    assert np.array_equal(z.source_indices, expected)


def test_sample_m_too_large():
    with pytest.raises(MTooLarge):
        tg.sample_inducing(np.zeros((3, 1)), 4, seed=0)


# ---------------------------------------------------------------------------
# fit on the closed-form scalar fixture
# ---------------------------------------------------------------------------


def test_fit_scalar_duals(scalar_fixture):
    data, weights, lik = scalar_fixture
    post = tg.fit(data, weights, lik, 1.0, identity_inducing(data))
    assert np.isclose(post.duals.alpha[0, 0], 0.5)
    assert np.isclose(post.duals.curvature[0, 0, 0], 1.0)


def test_fit_zero_residual_gives_zero_alpha(scalar_fixture):
    _, weights, lik = scalar_fixture
    x = np.array([[1.0], [2.0], [-0.5]])
    data = Dataset(X=x, y=tg.forward(weights, x)[:, 0], task="regression")
    post = tg.fit(data, weights, lik, 1.0, identity_inducing(data))
    assert np.allclose(post.duals.alpha, 0.0, atol=1e-14)


def test_fit_batch_invariance():
    spec = tg.NetworkSpec(2, 2, (6,))
    w = perturbed_weights(spec, 0)
    rng = np.random.default_rng(1)
    data = Dataset(X=rng.standard_normal((23, 2)), y=rng.integers(0, 2, 23), task="classification")
    lik = tg.Categorical(num_classes=2)
    z = tg.sample_inducing(data.X, 6, seed=0)
    ref = tg.fit(data, w, lik, 1.0, z, batch=23)
    for batch in (1, 7):
        post = tg.fit(data, w, lik, 1.0, z, batch=batch)
        assert np.allclose(post.duals.alpha, ref.duals.alpha, atol=1e-12)
        assert np.allclose(post.duals.curvature, ref.duals.curvature, atol=1e-12)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def test_predict_scalar_fixture(scalar_fixture):
    data, weights, lik = scalar_fixture
    post = tg.fit(data, weights, lik, 1.0, identity_inducing(data))
    mean, var = post.predict_f(np.array([[1.0]]))
    assert np.isclose(mean[0, 0], 0.5)
    assert np.isclose(var[0, 0], 0.5)
    pred_mean, pred_var = post.predict_y(np.array([[1.0]]))
    assert np.isclose(pred_mean[0, 0], 0.5)
    assert np.isclose(pred_var[0, 0], 1.5)


def test_orthogonal_test_point_keeps_prior():
    # bias-free linear model in 2D: kernel is the input inner product, so a
    # test point orthogonal to the single inducing point is untouched by data
    spec = tg.NetworkSpec(2, 1, (), bias=False)
    weights = tg.Weights(values=np.array([0.3, -0.2]), spec=spec)
    data = Dataset(X=np.array([[1.0, 0.0]]), y=np.array([0.7]), task="regression")
    post = tg.fit(data, weights, tg.Gaussian(1.0), 1.0, identity_inducing(data))
    mean, var = post.predict_f(np.array([[0.0, 1.0]]))
    assert np.isclose(mean[0, 0], 0.0, atol=1e-12)
    assert np.isclose(var[0, 0], 1.0)  # prior variance (1/delta) * ||x||^2


def test_mean_linear_in_alpha(scalar_fixture):
    data, weights, lik = scalar_fixture
    post = tg.fit(data, weights, lik, 1.0, identity_inducing(data))
    doubled = tg.dual_update(post, data)  # adds the same point once more: alpha doubles
    x = np.array([[1.0]])
    assert np.isclose(doubled.duals.alpha[0, 0], 2.0 * post.duals.alpha[0, 0])
    m1, _ = post.predict_f(x)
    # rebuild with doubled alpha but the original curvature to isolate the mean
    from tangentgp.posterior import DualParams, SparsePosterior

    scaled = SparsePosterior(
        inducing=post.inducing,
        duals=DualParams(alpha=2.0 * post.duals.alpha, curvature=post.duals.curvature.copy()),
        kernel=post.kernel,
        likelihood=post.likelihood,
    )
    m2, v2 = scaled.predict_f(x)
    assert np.isclose(m2[0, 0], 2.0 * m1[0, 0])
    _, v1 = post.predict_f(x)
    assert np.isclose(v2[0, 0], v1[0, 0])


def test_nn_mean_mode_uses_network_outputs():
    data = sine_grid(12, 0.1, 0)
    spec = tg.NetworkSpec(1, 1, (8,))
    w = perturbed_weights(spec, 2)
    z = tg.sample_inducing(data.X, 6, seed=0)
    post = tg.fit(data, w, tg.Gaussian(0.5), 1.0, z, mean_mode="nn_mean")
    xs = np.linspace(-2, 1, 9)[:, None]
    mean, var = post.predict_f(xs)
    assert np.array_equal(mean, tg.forward(w, xs))
    zero = tg.fit(data, w, tg.Gaussian(0.5), 1.0, z)
    _, var_zero = zero.predict_f(xs)
    assert np.allclose(var, var_zero)


def test_classification_probabilities_normalised():
    rng = np.random.default_rng(5)
    data = Dataset(X=rng.standard_normal((20, 2)), y=rng.integers(0, 3, 20), task="classification")
    spec = tg.NetworkSpec(2, 3, (6,))
    w = perturbed_weights(spec, 5)
    post = tg.fit(data, w, tg.Categorical(num_classes=3), 1.0, tg.sample_inducing(data.X, 8, 0))
    probs = post.predict_y(data.X, samples=32, seed=1)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs >= 0.0)


# ---------------------------------------------------------------------------
# dual updates
# ---------------------------------------------------------------------------


def test_update_with_empty_data_is_bitwise_noop(scalar_fixture):
    data, weights, lik = scalar_fixture
    post = tg.fit(data, weights, lik, 1.0, identity_inducing(data))
    empty = Dataset(X=np.zeros((0, 1)), y=np.zeros(0), task="regression")
    updated = tg.dual_update(post, empty)
    assert np.array_equal(updated.duals.alpha, post.duals.alpha)
    assert np.array_equal(updated.duals.curvature, post.duals.curvature)


def test_update_equals_refit():
    spec = tg.NetworkSpec(1, 1, (8,))
    w = perturbed_weights(spec, 7)
    lik = tg.Gaussian(0.5)
    d_all = sine_grid(24, 0.2, 1)
    d1 = Dataset(X=d_all.X[:15], y=d_all.y[:15], task="regression")
    d2 = Dataset(X=d_all.X[15:], y=d_all.y[15:], task="regression")
    z = tg.sample_inducing(d1.X, 8, seed=2)
    incremental = tg.dual_update(tg.fit(d1, w, lik, 1.0, z), d2)
    refit = tg.fit(d_all, w, lik, 1.0, z)
    assert np.max(np.abs(incremental.duals.alpha - refit.duals.alpha)) <= 1e-10
    assert np.max(np.abs(incremental.duals.curvature - refit.duals.curvature)) <= 1e-10
    xs = np.linspace(-3, 1.5, 11)[:, None]
    mi, vi = incremental.predict_f(xs)
    mr, vr = refit.predict_f(xs)
    assert np.allclose(mi, mr, atol=1e-9)
    assert np.allclose(vi, vr, atol=1e-9)


def test_update_is_associative():
    spec = tg.NetworkSpec(1, 1, (6,))
    w = perturbed_weights(spec, 8)
    lik = tg.Gaussian(1.0)
    d_all = sine_grid(18, 0.2, 3)
    parts = [Dataset(X=d_all.X[i:j], y=d_all.y[i:j], task="regression") for i, j in ((0, 6), (6, 12), (12, 18))]
    z = tg.sample_inducing(parts[0].X, 4, seed=0)
    base = tg.fit(parts[0], w, lik, 1.0, z)
    stepwise = tg.dual_update(tg.dual_update(base, parts[1]), parts[2])
    joined = tg.dual_update(base, Dataset(X=d_all.X[6:], y=d_all.y[6:], task="regression"))
    assert np.max(np.abs(stepwise.duals.alpha - joined.duals.alpha)) <= 1e-10
    assert np.max(np.abs(stepwise.duals.curvature - joined.duals.curvature)) <= 1e-10


def test_update_never_decreases_curvature_trace(scalar_fixture):
    data, weights, lik = scalar_fixture
    post = tg.fit(data, weights, lik, 1.0, identity_inducing(data))
    updated = tg.dual_update(post, Dataset(X=np.array([[0.5]]), y=np.array([0.2]), task="regression"))
    assert np.trace(updated.duals.curvature[0]) >= np.trace(post.duals.curvature[0])


def test_update_leaves_original_untouched(scalar_fixture):
    data, weights, lik = scalar_fixture
    post = tg.fit(data, weights, lik, 1.0, identity_inducing(data))
    alpha_before = post.duals.alpha.copy()
    tg.dual_update(post, data)
    assert np.array_equal(post.duals.alpha, alpha_before)


# ---------------------------------------------------------------------------
# dense counterpart and subset baseline
# ---------------------------------------------------------------------------


def test_full_gp_matches_scalar_fixture(scalar_fixture):
    data, weights, lik = scalar_fixture
    mean, var = tg.full_gp_predict(data, weights, lik, 1.0, np.array([[1.0]]))
    assert np.isclose(mean[0, 0], 0.5)
    assert np.isclose(var[0, 0], 0.5)


def test_full_gp_equals_closed_form_regression():
    # exact ridge optimum of a linear model makes the dual construction exact
    rng = np.random.default_rng(4)
    x = rng.uniform(-2, 2, (24, 1))
    y = 1.3 * x[:, 0] - 0.4 + 0.3 * rng.standard_normal(24)
    sigma2, delta = 0.4, 0.05
    design = np.concatenate([x, np.ones((24, 1))], axis=1)
    w_star = np.linalg.solve(design.T @ design / sigma2 + delta * np.eye(2), design.T @ y / sigma2)
    weights = tg.Weights(values=w_star, spec=tg.NetworkSpec(1, 1, ()))
    data = Dataset(X=x, y=y, task="regression")
    xs = np.linspace(-2.5, 2.5, 20)[:, None]
    mean, var = tg.full_gp_predict(data, weights, tg.Gaussian(sigma2), delta, xs)
    design_t = np.concatenate([xs, np.ones((20, 1))], axis=1)
    k_train = design @ design.T / delta
    k_cross = design @ design_t.T / delta
    k_diag = np.sum(design_t**2, axis=1) / delta
    gram = k_train + sigma2 * np.eye(24)
    mean_ref = k_cross.T @ np.linalg.solve(gram, y)
    var_ref = k_diag - np.einsum("nt,nt->t", k_cross, np.linalg.solve(gram, k_cross))
    assert np.max(np.abs(mean[:, 0] - mean_ref)) <= 1e-8
    assert np.max(np.abs(var[:, 0] - var_ref)) <= 1e-8


def test_full_gp_near_noiseless_interpolates():
    # sigma^2 -> 0 with an exactly optimal linear model: the posterior mean at
    # the training points converges to the kernel-space projection of the
    # targets (here: the least squares affine fit)
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, (20, 1))
    y = 0.8 * x[:, 0] + 0.3 * rng.standard_normal(20)
    sigma2, delta = 1e-6, 1.0
    design = np.concatenate([x, np.ones((20, 1))], axis=1)
    w_star = np.linalg.solve(design.T @ design / sigma2 + delta * np.eye(2), design.T @ y / sigma2)
    weights = tg.Weights(values=w_star, spec=tg.NetworkSpec(1, 1, ()))
    data = Dataset(X=x, y=y, task="regression")
    mean, _ = tg.full_gp_predict(data, weights, tg.Gaussian(sigma2), delta, x)
    projected = design @ np.linalg.lstsq(design, y, rcond=None)[0]
    assert np.max(np.abs(mean[:, 0] - projected)) < 1e-3


def test_sparse_equals_dense_when_inducing_is_all_data():
    data = sine_grid(16, 0.2, 5)
    spec = tg.NetworkSpec(1, 1, (16,))
    w = perturbed_weights(spec, 6)
    lik = tg.Gaussian(0.5)
    post = tg.fit(data, w, lik, 1.0, identity_inducing(data))
    xs = np.linspace(-3.2, 1.8, 25)[:, None]
    sm, sv = post.predict_f(xs)
    fm, fv = tg.full_gp_predict(data, w, lik, 1.0, xs)
    assert np.max(np.abs(sm - fm)) <= 1e-6
    assert np.max(np.abs(sv - fv)) <= 1e-6


def test_posterior_variance_below_prior():
    data = sine_grid(20, 0.2, 6)
    spec = tg.NetworkSpec(1, 1, (10,))
    w = perturbed_weights(spec, 9)
    post = tg.fit(data, w, tg.Gaussian(0.5), 1.0, tg.sample_inducing(data.X, 10, 1))
    xs = np.linspace(-3.5, 2.0, 40)[:, None]
    _, var = post.predict_f(xs)
    prior = post.kernel.diag(xs)
    assert np.all(var[:, 0] <= prior[0] + 1e-10)


def test_full_gp_size_guard():
    data = Dataset(X=np.zeros((5001, 1)), y=np.zeros(5001), task="regression")
    w = perturbed_weights(tg.NetworkSpec(1, 1, ()), 0)
    with pytest.raises(NTooLarge):
        tg.full_gp_predict(data, w, tg.Gaussian(1.0), 1.0, np.zeros((1, 1)))


def test_subset_with_all_points_equals_fit():
    data = sine_grid(14, 0.2, 7)
    spec = tg.NetworkSpec(1, 1, (8,))
    w = perturbed_weights(spec, 10)
    lik = tg.Gaussian(0.5)
    z = tg.sample_inducing(data.X, 14, seed=4)
    full = tg.fit(data, w, lik, 1.0, z, batch=14)
    subset = tg.fit_subset(data, w, lik, 1.0, z)
    assert np.allclose(subset.duals.alpha, full.duals.alpha, atol=1e-12)
    assert np.allclose(subset.duals.curvature, full.duals.curvature, atol=1e-12)


def test_subset_ignores_excluded_points():
    spec = tg.NetworkSpec(1, 1, (), bias=False)
    weights = tg.Weights(values=np.array([0.5]), spec=spec)
    data = Dataset(X=np.array([[1.0], [2.0]]), y=np.array([1.0, -1.0]), task="regression")
    z = InducingSet(points=np.array([[1.0]]), source_indices=np.array([0]), seed=0)
    subset = tg.fit_subset(data, weights, tg.Gaussian(1.0), 1.0, z)
    solo = tg.fit(Dataset(X=np.array([[1.0]]), y=np.array([1.0]), task="regression"),
                  weights, tg.Gaussian(1.0), 1.0, z)
    assert np.array_equal(subset.duals.alpha, solo.duals.alpha)
    assert np.array_equal(subset.duals.curvature, solo.duals.curvature)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_posterior_roundtrip_reproduces_predictions(tmp_path):
    data = sine_grid(12, 0.2, 8)
    spec = tg.NetworkSpec(1, 1, (6,))
    w = perturbed_weights(spec, 11)
    lik = tg.Gaussian(0.5)
    post = tg.fit(data, w, lik, 1.0, tg.sample_inducing(data.X, 5, 2))
    ckpt = tmp_path / "weights.json"
    tg.save_checkpoint(w, ckpt)
    path = tmp_path / "posterior.json"
    save_posterior(post, path, weights_ref=str(ckpt))
    loaded, ref = load_posterior(path)
    assert ref == str(ckpt)
    xs = np.linspace(-3, 1.5, 9)[:, None]
    m0, v0 = post.predict_f(xs)
    m1, v1 = loaded.predict_f(xs)
    assert np.array_equal(m0, m1)
    assert np.array_equal(v0, v1)


def test_gaussian_full_gp_predict_y_adds_noise(scalar_fixture):
    data, weights, lik = scalar_fixture
    mean, var = full_gp_predict_y(data, weights, lik, 1.0, np.array([[1.0]]))
    assert np.isclose(mean[0, 0], 0.5)
    assert np.isclose(var[0, 0], 1.5)
