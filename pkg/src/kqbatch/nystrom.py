"""Nyström test-function basis of a kernel and its residual diagnostics."""
from dataclasses import dataclass

import numpy as np

from kqbatch.gp import kernel_diag

POSITIVE_TOL = 1e-12
RSVD_OVERSAMPLE = 10
RSVD_POWER_ITERS = 2


@dataclass(frozen=True, eq=False)
class NystromBasis:
    """Landmarks, eigenpairs of the landmark Gram matrix and the active rank.

    ``eigenvalues`` are non-increasing and clamped at zero; only the first
    ``rank`` pairs define test functions.
    """

    landmarks: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    rank: int
    kernel: object
    requested_rank: int

    @property
    def rank_reduced(self):
        return self.rank < self.requested_rank


def _sym_eig(G):
    lam, U = np.linalg.eigh(0.5 * (G + G.T))
    order = np.argsort(lam)[::-1]
    return lam[order], U[:, order]


def _randomized_eig(G, k, rng):
    # Halko-Martinsson-Tropp range finder for a symmetric PSD matrix
    M = G.shape[0]
    ell = min(M, k + RSVD_OVERSAMPLE)
    Q, _ = np.linalg.qr(G @ rng.standard_normal((M, ell)))
    for _ in range(RSVD_POWER_ITERS):
        Q, _ = np.linalg.qr(G @ Q)
    B = Q.T @ G @ Q
    lam, W = _sym_eig(B)
    return lam[:k], (Q @ W)[:, :k]


def build_basis(kernel, measure, M, rank, seed=None, *, landmarks=None, method="dense"):
    """Eigendecompose the kernel Gram matrix on ``M`` landmarks.

    Landmarks are drawn i.i.d. from ``measure`` in proportion to its weights
    (with replacement) unless given explicitly. ``method="randomized"`` uses a
    randomised eigensolver, intended for ``M > 1000``.
    """
    if landmarks is None:
        if M > len(measure):
            raise ValueError(f"M={M} exceeds the measure size {len(measure)}")
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(measure), size=M, replace=True, p=measure.weights)
        landmarks = measure.points[idx]
    landmarks = np.asarray(landmarks, dtype=float)
    M = landmarks.shape[0]
    if rank > M:
        raise ValueError(f"rank {rank} exceeds the number of landmarks {M}")
    G = np.asarray(kernel(landmarks, landmarks))
    if method == "dense":
        lam, U = _sym_eig(G)
    elif method == "randomized":
        lam, U = _randomized_eig(G, rank, np.random.default_rng(seed))
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    lam = np.maximum(lam, 0.0)
    positive = int(np.sum(lam > POSITIVE_TOL * lam[0])) if lam.size and lam[0] > 0 else 0
    r = min(rank, positive)
    return NystromBasis(landmarks, lam, U, r, kernel, rank)


def test_functions(basis, points):
    """``phi_j(x) = u_j^T k(X^M, x)`` for the active pairs, shape ``(P, rank)``."""
    points = np.asarray(points, dtype=float)
    if basis.rank == 0:
        return np.zeros((points.shape[0], 0))
    K = np.asarray(basis.kernel(points, basis.landmarks))
    return K @ basis.eigenvectors[:, : basis.rank]


def approx_diag(basis, points, phi=None):
    """``k~(x, x) = sum_j phi_j(x)^2 / lambda_j`` over the columns of ``phi``.

    Passing the first ``r`` test-function columns gives the rank-``r`` approximation.
    """
    if phi is None:
        phi = test_functions(basis, points)
    r = phi.shape[1]
    if r > basis.rank:
        raise ValueError(f"{r} test-function columns exceed the basis rank {basis.rank}")
    if r == 0:
        return np.zeros(phi.shape[0])
    return (phi**2) @ (1.0 / basis.eigenvalues[:r])


def residual_diagonal(basis, points, phi=None):
    """Pointwise ``sqrt((k - k~)(x, x))`` and its maximum ``eps_nys``."""
    points = np.asarray(points, dtype=float)
    res = kernel_diag(basis.kernel, points) - approx_diag(basis, points, phi)
    r = np.sqrt(np.maximum(res, 0.0))
    return r, float(r.max()) if r.size else 0.0
