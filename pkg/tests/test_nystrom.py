import numpy as np
import pytest

from kqbatch.domain import EmpiricalMeasure
from kqbatch.gp import Kernel, PosteriorKernel
from kqbatch.nystrom import approx_diag, build_basis, residual_diagonal
from kqbatch.nystrom import test_functions as phi_at
from kqbatch.quadrature import mmd_squared, recombination

from conftest import toy_gp


def random_measure(seed, N=300, d=2):
    rng = np.random.default_rng(seed)
    w = rng.random(N)
    return EmpiricalMeasure(rng.random((N, d)), w / w.sum())


class RankOne:
    """``k(x, y) = v(x) v(y)`` with ``v(x) = 1 + x_0``."""

    def __call__(self, A, B=None):
        B = A if B is None else B
        return np.outer(1 + A[:, 0], 1 + B[:, 0])

    def diag(self, A):
        return (1 + A[:, 0]) ** 2


class TestBuildBasis:
    def test_full_rank_reproduces_kernel(self, backend):
        X = np.linspace(0, 1, 12)[:, None]
        k = Kernel([0.5], 1.0)
        basis = build_basis(k, EmpiricalMeasure.uniform(X), 12, 12, landmarks=X)
        phi = phi_at(basis, X)
        lam = basis.eigenvalues[: basis.rank]
        approx = phi / lam @ phi.T
        np.testing.assert_allclose(approx, k(X), atol=1e-6 * basis.eigenvalues[0])

    def test_rank_one_kernel(self):
        X = np.random.default_rng(0).random((30, 1))
        basis = build_basis(RankOne(), EmpiricalMeasure.uniform(X), 10, 5, seed=0)
        assert basis.rank == 1 and basis.rank_reduced
        r, eps = residual_diagonal(basis, X)
        np.testing.assert_allclose(r, 0.0, atol=1e-6)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_dense_eigensolver(self, seed):
        m = random_measure(seed)
        gp = toy_gp(seed)
        kern = PosteriorKernel(gp)
        basis = build_basis(kern, m, 40, 20, seed=seed)
        ref = np.sort(np.linalg.eigvalsh(kern(basis.landmarks)))[::-1]
        ref = np.maximum(ref, 0)
        top = ref > 1e-8 * ref[0]
        np.testing.assert_allclose(basis.eigenvalues[top], ref[top], rtol=1e-8)
        U = basis.eigenvectors
        np.testing.assert_allclose(U.T @ U, np.eye(U.shape[1]), atol=1e-8)

    def test_eigenvalues_ordered_and_clamped(self):
        basis = build_basis(PosteriorKernel(toy_gp(0)), random_measure(0), 60, 30, seed=1)
        lam = basis.eigenvalues
        assert np.all(lam >= 0) and np.all(np.diff(lam) <= 0)
        assert basis.rank <= np.sum(lam > 1e-12 * lam[0])

    def test_landmarks_follow_weights(self):
        X = np.arange(4.0)[:, None]
        m = EmpiricalMeasure(X, [0.0, 0.0, 1.0, 0.0])
        basis = build_basis(Kernel([1.0]), m, 3, 1, seed=0)
        np.testing.assert_array_equal(basis.landmarks, np.full((3, 1), 2.0))

    def test_too_many_landmarks(self):
        with pytest.raises(ValueError):
            build_basis(Kernel([1.0]), EmpiricalMeasure.uniform(np.zeros((3, 1))), 5, 1)

    def test_randomized_matches_dense(self):
        m = random_measure(4, N=2000)
        k = Kernel([0.3, 0.3], 1.0)
        dense = build_basis(k, m, 400, 10, seed=2)
        fast = build_basis(k, m, 400, 10, seed=2, landmarks=dense.landmarks, method="randomized")
        np.testing.assert_allclose(fast.eigenvalues[:10], dense.eigenvalues[:10], rtol=1e-6)


class TestTestFunctions:
    def test_eigen_identity_at_landmarks(self, backend):
        basis = build_basis(Kernel([0.4, 0.4]), random_measure(1), 50, 10, seed=3)
        phi = phi_at(basis, basis.landmarks)
        lam, U = basis.eigenvalues[:10], basis.eigenvectors[:, :10]
        np.testing.assert_allclose(phi, U * lam, atol=1e-8)

    def test_zero_rank_is_empty(self):
        X = np.zeros((5, 1))
        basis = build_basis(lambda A, B=None: np.zeros((len(A), len(A if B is None else B))),
                            EmpiricalMeasure.uniform(X), 5, 3, seed=0)
        assert basis.rank == 0
        assert phi_at(basis, X).shape == (5, 0)

    def test_direct_product(self):
        k = Kernel([0.3, 0.6], 1.2)
        basis = build_basis(k, random_measure(2), 30, 8, seed=4)
        P = np.random.default_rng(5).random((17, 2))
        ref = np.array([[basis.eigenvectors[:, j] @ k(basis.landmarks, p[None])[:, 0] for j in range(8)] for p in P])
        np.testing.assert_allclose(phi_at(basis, P), ref, atol=1e-12)


class TestResidual:
    def test_zero_at_landmarks_full_rank(self):
        k = Kernel([0.5, 0.5])
        L = np.random.default_rng(0).random((15, 2))
        basis = build_basis(k, EmpiricalMeasure.uniform(L), 15, 15, landmarks=L)
        r, _ = residual_diagonal(basis, L)
        np.testing.assert_allclose(r, 0.0, atol=1e-6 * np.sqrt(basis.eigenvalues[0]))

    def test_bounds(self):
        gp = toy_gp(1)
        kern = PosteriorKernel(gp)
        basis = build_basis(kern, random_measure(1), 80, 12, seed=0)
        X = np.random.default_rng(1).uniform(-0.5, 1.5, (200, 2))
        r, eps = residual_diagonal(basis, X)
        assert np.all(r >= 0)
        assert np.all(r <= np.sqrt(gp.var(X)) + 1e-6)
        assert eps == pytest.approx(r.max())

    def test_weighted_average_matches_dense(self):
        m = random_measure(3)
        kern = PosteriorKernel(toy_gp(3))
        basis = build_basis(kern, m, 50, 7, seed=0)
        Kxm = kern(m.points, basis.landmarks)
        U = basis.eigenvectors[:, :7]
        lam = basis.eigenvalues[:7]
        approx = np.einsum("ij,jk,k,lk,il->i", Kxm, U, 1 / lam, U, Kxm)
        dense = m.weights @ np.sqrt(np.maximum(np.diag(kern(m.points)) - approx, 0))
        r, _ = residual_diagonal(basis, m.points)
        np.testing.assert_allclose(m.weights @ r, dense, rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(approx_diag(basis, m.points), approx, rtol=1e-8, atol=1e-14)

    def test_more_landmarks_shrink_residual(self):
        # nested landmark sets, fixed rank policy; median over seeds
        small, large = [], []
        for seed in range(20):
            m = random_measure(seed, N=600)
            kern = Kernel([0.25, 0.25])
            rng = np.random.default_rng(seed)
            L = m.points[rng.choice(len(m), 120, p=m.weights)]
            for M, store in ((30, small), (120, large)):
                basis = build_basis(kern, m, M, 25, landmarks=L[:M])
                store.append(m.weights @ residual_diagonal(basis, m.points)[0])
        assert np.median(large) <= np.median(small)

    def test_theorem_bound_on_enumerated_candidates(self):
        for seed in range(5):
            m = random_measure(seed, N=150)
            kern = PosteriorKernel(toy_gp(seed))
            n = 10
            basis = build_basis(kern, m, 150, n - 1, seed=seed)
            r, _ = residual_diagonal(basis, m.points)
            rule = recombination(m, phi_at(basis, m.points), n)
            assert np.sqrt(mmd_squared(rule, m, kern)) <= 2 * (m.weights @ r) + 1e-6
