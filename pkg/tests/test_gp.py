import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from kqbatch.gp import (
    Dataset,
    FactorizationError,
    GPPosterior,
    Kernel,
    VarianceError,
    _clamp,
    _lml_and_grad,
    dumps,
    fit_hyperparameters,
    fit_posterior,
    loads,
    log_marginal_likelihood,
    optimize_hyperparameters,
    posterior_mean_cov,
    stable_cholesky,
)


def dense_posterior(kernel, X, Y, noise, A, B, m=0.0):
    """Mean and covariance by explicit inversion."""
    Kinv = np.linalg.inv(kernel(X) + noise * np.eye(len(X)))
    mean = m + kernel(A, X) @ Kinv @ (Y - m)
    cov = kernel(A, B) - kernel(A, X) @ Kinv @ kernel(X, B)
    return mean, cov


def direct_rbf(A, B, ls, s):
    out = np.empty((len(A), len(B)))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            out[i, j] = s * np.exp(-0.5 * np.sum(((a - b) / ls) ** 2))
    return out


class TestKernel:
    def test_matches_direct_formula(self, backend):
        rng = np.random.default_rng(1)
        A, B = rng.normal(size=(7, 3)), rng.normal(size=(5, 3))
        k = Kernel([0.5, 1.0, 2.0], 1.3)
        np.testing.assert_allclose(k(A, B), direct_rbf(A, B, k.lengthscales, 1.3), rtol=1e-12)

    def test_diagonal_is_outputscale(self):
        k = Kernel([0.3, 0.7], 2.5)
        X = np.random.default_rng(0).normal(size=(10, 2))
        np.testing.assert_allclose(np.diag(k(X)), 2.5)
        np.testing.assert_allclose(k.diag(X), 2.5)

    @pytest.mark.parametrize("ls, s", [([0.0, 1.0], 1.0), ([1.0, -1.0], 1.0), ([1.0], 0.0)])
    def test_rejects_nonpositive_parameters(self, ls, s):
        with pytest.raises(ValueError):
            Kernel(ls, s)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 40), st.integers(1, 4))
    def test_gram_symmetric_psd(self, seed, n, d):
        rng = np.random.default_rng(seed)
        k = Kernel(rng.uniform(0.05, 3.0, d), rng.uniform(0.1, 5.0))
        G = k(rng.uniform(-2, 2, size=(n, d)))
        np.testing.assert_allclose(G, G.T, atol=0)
        assert np.linalg.eigvalsh(G).min() >= -1e-8 * np.trace(G)

    def test_quadform_matches_gram(self, backend):
        rng = np.random.default_rng(2)
        A, B = rng.normal(size=(30, 2)), rng.normal(size=(20, 2))
        wa, wb = rng.random(30), rng.random(20)
        k = Kernel([0.4, 0.9], 1.1)
        np.testing.assert_allclose(k.quadform(A, wa, B, wb), wa @ k(A, B) @ wb, rtol=1e-12)


class TestDataset:
    def test_row_count_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(2))

    def test_negative_noise(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 1)), np.zeros(3), -1e-3)

    def test_json_round_trip(self):
        rng = np.random.default_rng(0)
        k = Kernel([0.2, 0.4], 1.5)
        data = Dataset(rng.random((4, 2)), rng.random(4), 0.01)
        k2, d2 = loads(dumps(k, data))
        np.testing.assert_array_equal(k2.lengthscales, k.lengthscales)
        assert k2.outputscale == k.outputscale
        np.testing.assert_array_equal(d2.X, data.X)
        np.testing.assert_array_equal(d2.Y, data.Y)
        assert d2.noise_variance == data.noise_variance


class TestPosterior:
    def test_empty_data_is_prior(self):
        gp = fit_posterior(Dataset.empty(1), Kernel([1.0], 1.0), 0.0)
        x = np.array([[0.3], [-2.0], [5.0]])
        np.testing.assert_allclose(gp.mean(x), 0.0)
        np.testing.assert_allclose(np.diag(gp.cov(x)), 1.0)
        np.testing.assert_allclose(gp.cov(x), Kernel([1.0], 1.0)(x))

    def test_noiseless_single_point(self):
        gp = fit_posterior(Dataset([[0.0]], [2.0], 0.0), Kernel([1.0], 1.0))
        np.testing.assert_allclose(gp.mean([[0.0]]), 2.0, atol=1e-8)
        np.testing.assert_allclose(gp.var([[0.0]]), 0.0, atol=1e-8)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_dense_oracle(self, seed, backend):
        rng = np.random.default_rng(seed)
        X, Y = rng.random((5, 2)), rng.normal(size=5)
        k = Kernel([0.3, 0.5], 1.2)
        gp = fit_posterior(Dataset(X, Y, 0.01), k, 0.4)
        A, B = rng.random((6, 2)), rng.random((4, 2))
        m_ref, c_ref = dense_posterior(k, X, Y, 0.01, A, B, 0.4)
        np.testing.assert_allclose(gp.mean(A), m_ref, atol=1e-8)
        np.testing.assert_allclose(gp.cov(A, B), c_ref, atol=1e-8)
        m, C = posterior_mean_cov(gp, A, B)
        np.testing.assert_allclose(C, c_ref, atol=1e-8)

    def test_noiseless_training_diagonal(self):
        rng = np.random.default_rng(4)
        X = rng.random((6, 2))
        gp = fit_posterior(Dataset(X, np.cos(X).sum(1), 0.0), Kernel([0.4, 0.4], 1.0))
        _, C = posterior_mean_cov(gp, X, X)
        np.testing.assert_allclose(np.diag(C), 0.0, atol=1e-8)
        np.testing.assert_allclose(C, C.T)
        np.testing.assert_allclose(gp.mean(X), np.cos(X).sum(1), atol=1e-6)

    def test_far_point_reverts_to_prior(self):
        rng = np.random.default_rng(5)
        X = rng.random((5, 2))
        gp = fit_posterior(Dataset(X, rng.normal(size=5), 1e-4), Kernel([0.1, 0.1], 2.0))
        far = np.array([[3.0, 3.0]])
        np.testing.assert_allclose(gp.var(far), 2.0, atol=1e-6)

    def test_dimension_mismatch(self):
        gp = fit_posterior(Dataset(np.zeros((2, 2)), [0.0, 1.0], 0.1), Kernel([1.0, 1.0]))
        with pytest.raises(ValueError):
            gp.mean(np.zeros((3, 3)))

    def test_var_and_mean_var_agree(self):
        rng = np.random.default_rng(6)
        gp = fit_posterior(Dataset(rng.random((8, 2)), rng.normal(size=8), 1e-3), Kernel([0.3, 0.3]))
        A = rng.random((20, 2))
        m, v = gp.mean_var(A)
        np.testing.assert_allclose(m, gp.mean(A))
        np.testing.assert_allclose(v, gp.var(A))
        np.testing.assert_allclose(v, np.diag(gp.cov(A)), atol=1e-12)

    def test_quadform_matches_dense(self):
        rng = np.random.default_rng(7)
        gp = fit_posterior(Dataset(rng.random((8, 2)), rng.normal(size=8), 1e-3), Kernel([0.3, 0.3]))
        A, B = rng.random((15, 2)), rng.random((9, 2))
        wa, wb = rng.random(15), rng.random(9)
        np.testing.assert_allclose(gp.quadform(A, wa, B, wb), wa @ gp.cov(A, B) @ wb, atol=1e-12)
        np.testing.assert_allclose(gp.quadform(A, wa), wa @ gp.cov(A) @ wa, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 15), st.integers(1, 10))
    def test_variance_bounds(self, seed, t, extra):
        rng = np.random.default_rng(seed)
        k = Kernel(rng.uniform(0.1, 1.0, 2), rng.uniform(0.5, 2.0))
        gp = fit_posterior(Dataset(rng.random((t, 2)), rng.normal(size=t), 1e-6), k)
        v = gp.var(rng.uniform(-0.5, 1.5, size=(50, 2)))
        assert np.all(v >= 0) and np.all(v <= k.outputscale * (1 + 1e-12))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 10), st.integers(1, 10))
    def test_conditioning_never_increases_variance(self, seed, t, extra):
        rng = np.random.default_rng(seed)
        k = Kernel([0.3, 0.6], 1.0)
        X, Y = rng.random((t + extra, 2)), rng.normal(size=t + extra)
        small = fit_posterior(Dataset(X[:t], Y[:t], 1e-4), k)
        big = small.condition(X[t:], Y[t:])
        A = rng.random((40, 2))
        assert np.all(big.var(A) <= small.var(A) + 1e-8)

    def test_duplicate_noiseless_observation_keeps_mean(self):
        rng = np.random.default_rng(8)
        X = rng.random((5, 1))
        Y = np.sin(5 * X[:, 0])
        k = Kernel([0.2], 1.0)
        gp = fit_posterior(Dataset(X, Y, 0.0), k)
        dup = gp.condition(X[:1], Y[:1])
        A = np.linspace(0, 1, 50)[:, None]
        np.testing.assert_allclose(dup.mean(A), gp.mean(A), atol=1e-6)


class TestJitter:
    def test_plain_cholesky_when_possible(self):
        L, jitter = stable_cholesky(np.eye(3))
        assert jitter == 0.0
        np.testing.assert_allclose(L, np.eye(3))

    def test_escalates_on_singular_gram(self):
        S = np.ones((4, 4))
        L, jitter = stable_cholesky(S)
        assert 1e-8 * 1.0 <= jitter <= 1e-4 * 1.0
        np.testing.assert_allclose(L @ L.T, S + jitter * np.eye(4))

    def test_error_names_size(self):
        S = -np.eye(3)
        with pytest.raises(FactorizationError, match="3x3"):
            stable_cholesky(S)

    def test_variance_clamp(self):
        np.testing.assert_array_equal(_clamp(np.array([-5e-9, 0.3]), 1.0), [0.0, 0.3])
        with pytest.raises(VarianceError):
            _clamp(np.array([-1e-6]), 1.0)


class TestMarginalLikelihood:
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_direct_formula(self, seed):
        rng = np.random.default_rng(seed)
        X, Y = rng.random((12, 2)), rng.normal(size=12)
        k = Kernel([0.3, 0.8], 1.4)
        S = k(X) + 0.05 * np.eye(12)
        sign, logdet = np.linalg.slogdet(S)
        direct = -0.5 * Y @ np.linalg.solve(S, Y) - 0.5 * logdet - 6 * np.log(2 * np.pi)
        got = log_marginal_likelihood(Dataset(X, Y, 0.05), k)
        np.testing.assert_allclose(got, direct, atol=1e-6)
        np.testing.assert_allclose(got, multivariate_normal(np.zeros(12), S).logpdf(Y), atol=1e-6)

    @pytest.mark.parametrize("fit_noise, fit_mean", [(False, False), (True, False), (True, True)])
    def test_gradient_matches_finite_differences(self, fit_noise, fit_mean):
        rng = np.random.default_rng(3)
        X, Y = rng.random((10, 2)), rng.normal(size=10)
        theta = np.log([0.4, 0.7, 1.3])
        if fit_noise:
            theta = np.append(theta, np.log(0.02))
        if fit_mean:
            theta = np.append(theta, 0.3)
        f = lambda th: _lml_and_grad(th, X, Y, fit_noise, 0.01, fit_mean, 0.0)  # noqa: E731
        _, g = f(theta)
        h = 1e-6
        fd = np.array([(f(theta + h * e)[0] - f(theta - h * e)[0]) / (2 * h) for e in np.eye(theta.size)])
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


class TestHyperparameters:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 20))
    def test_never_worse_than_init(self, seed, t):
        rng = np.random.default_rng(seed)
        data = Dataset(rng.random((t, 2)), rng.normal(size=t), 1e-3)
        init = Kernel(rng.uniform(0.05, 2.0, 2), rng.uniform(0.2, 3.0))
        fit = fit_hyperparameters(data, init, restarts=2, seed=seed)
        assert fit.lml >= log_marginal_likelihood(data, init) - 1e-9
        assert fit.lml >= fit.init_lml - 1e-9

    def test_lengthscales_respect_box(self):
        rng = np.random.default_rng(0)
        X = rng.random((15, 1))
        data = Dataset(X, np.zeros(15) + 1e-3 * rng.normal(size=15), 1e-6)
        k = optimize_hyperparameters(data, Kernel([0.5], 1.0), 3, domain_width=[1.0])
        assert 1e-3 <= k.lengthscales[0] <= 1e3

    def test_degenerate_inputs_flagged(self):
        data = Dataset(np.ones((5, 2)), np.arange(5.0), 0.1)
        init = Kernel([0.5, 0.5], 1.0)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = fit_hyperparameters(data, init)
        assert fit.degenerate and fit.kernel is init
        assert any(issubclass(w.category, RuntimeWarning) for w in caught)

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            fit_hyperparameters(Dataset([[0.0]], [1.0], 0.1), Kernel([1.0]))

    def test_recovers_lengthscale(self):
        hits = 0
        grid = np.geomspace(0.05, 1.0, 60)
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            X = rng.random((200, 1))
            K = Kernel([0.2], 1.0)(X) + 1e-4 * np.eye(200)
            Y = np.linalg.cholesky(K) @ rng.standard_normal(200)
            data = Dataset(X, Y, 1e-4)
            ell = optimize_hyperparameters(data, Kernel([0.5], 1.0), 3, domain_width=[1.0]).lengthscales[0]
            # grid oracle over the lengthscale at the fitted outputscale basin
            lml = [max(log_marginal_likelihood(data, Kernel([g], s)) for s in (0.5, 1.0, 2.0)) for g in grid]
            best = grid[int(np.argmax(lml))]
            assert abs(np.log(ell) - np.log(best)) < np.log(2.0)
            hits += 0.1 <= ell <= 0.4
        assert hits >= 8
