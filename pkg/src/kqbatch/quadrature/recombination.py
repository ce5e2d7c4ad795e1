"""Carathéodory recombination: reduce a discrete measure while keeping its moments.

Points are grouped into about ``2n`` blocks; the blocks' barycentric moments
have a null space of dimension at least ``n``, and moving the block weights
along it removes blocks until at most ``rank + 1`` survive. The surviving
points are regrouped and the step repeats, so the cost is dominated by one
pass over the data plus ``O(n^3 log(N / n))`` for the small eliminations.
"""
import numpy as np

from kqbatch._accel import backend
from kqbatch.quadrature.rule import QuadratureRule

ELIM_TOL = 1e-13
RANK_TOL = 1e-12


def _null_space(A):
    """Orthonormal basis of the right null space of ``A`` (rows are moments)."""
    m, k = A.shape
    if k == 0:
        return np.zeros((0, 0))
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    tol = RANK_TOL * max(m, k) * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return np.ascontiguousarray(Vt[rank:].T)


def _reduce(W, A, g):
    """One Carathéodory sweep on columns of ``A`` with weights ``W``."""
    V = _null_space(A)
    if V.shape[1] == 0:
        return W
    W, _ = backend().eliminate(np.ascontiguousarray(W), V, np.ascontiguousarray(g), ELIM_TOL)
    return W


def caratheodory(weights, moments, objective=None, target_size=None):
    """Reduce ``weights`` so that ``moments.T @ weights`` and ``sum(weights)`` are kept.

    Parameters
    ----------
    weights : ndarray, shape (N,)
        Non-negative weights.
    moments : ndarray, shape (N, k)
        Moment functions evaluated at each point.
    objective : ndarray, shape (N,), optional
        Every elimination direction is oriented so that ``objective @ w``
        does not increase.
    target_size : int, optional
        Block size parameter: points are grouped into ``2 * target_size``
        blocks (default ``k + 1``).

    Returns
    -------
    ndarray, shape (N,)
        Reduced weights with at most ``rank(moments) + 1`` non-zeros.
    """
    w = np.asarray(weights, dtype=float).copy()
    N, k = moments.shape
    g = np.zeros(N) if objective is None else np.asarray(objective, dtype=float)
    n = k + 1 if target_size is None else max(int(target_size), 1)
    # constant row keeps total mass
    A = np.hstack([np.ones((N, 1)), moments])

    active = np.flatnonzero(w > 0)
    # continue below n until the null space is empty, so rank-deficient moments give rank + 1 points
    while active.size > 1:
        if active.size <= 2 * n:
            w[active] = _reduce(w[active], A[active].T, g[active])
            survivors = np.flatnonzero(w[active] > 0)
            if survivors.size == active.size:
                break
            active = active[survivors]
            continue
        blocks = np.array_split(active, 2 * n)
        Wb = np.array([w[b].sum() for b in blocks])
        Ab = np.stack([w[b] @ A[b] / Wb[i] for i, b in enumerate(blocks)], axis=1)
        gb = np.array([w[b] @ g[b] / Wb[i] for i, b in enumerate(blocks)])
        Wnew = _reduce(Wb, Ab, gb)
        if np.count_nonzero(Wnew) == len(blocks):
            # moments have full column rank over the blocks; fall back to points
            w[active] = _reduce(w[active], A[active].T, g[active])
            active = active[w[active] > 0]
            break
        keep = []
        for i, b in enumerate(blocks):
            if Wnew[i] > 0:
                w[b] *= Wnew[i] / Wb[i]
                keep.append(b)
            else:
                w[b] = 0.0
        active = np.concatenate(keep)
        active = active[w[active] > 0]
    return w


def _polish(w, A, target):
    """Least-squares refit of the surviving weights; kept only if non-negative and better."""
    support = np.flatnonzero(w > 0)
    sol, *_ = np.linalg.lstsq(A[support].T, target, rcond=None)
    if np.any(sol <= 0):
        return w
    before = np.linalg.norm(A[support].T @ w[support] - target)
    after = np.linalg.norm(A[support].T @ sol - target)
    if after <= before:
        w = w.copy()
        w[support] = sol
    return w


def column_scale(moments):
    return np.maximum(np.max(np.abs(moments), axis=0), np.finfo(float).tiny) if moments.size else np.ones(0)


def recombination(measure, moments, n, objective=None):
    """Convex ``n``-point rule matching the measure's ``n - 1`` moments.

    Parameters
    ----------
    measure : EmpiricalMeasure
    moments : ndarray, shape (N, n - 1)
        Test-function values at the measure's points. Extra columns beyond
        ``n - 1`` are ignored.
    n : int
        Maximal support size.
    objective : ndarray, shape (N,), optional
        Tie-breaking objective that each elimination step does not increase.

    Returns
    -------
    QuadratureRule
        At most ``n`` points; fewer when the moment matrix is rank deficient.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    moments = np.asarray(moments, dtype=float)
    if moments.ndim == 1:
        moments = moments[:, None]
    if moments.shape[0] != len(measure):
        raise ValueError("moments must have one row per measure point")
    moments = moments[:, : max(n - 1, 0)]
    scale = column_scale(moments)
    Phi = moments / scale
    wN = measure.weights
    if np.count_nonzero(wN) <= n:
        rule = QuadratureRule.from_parent(measure, wN, {"solver": "identity"})
        return rule.merged()

    w = caratheodory(wN, Phi, objective=objective, target_size=n)
    A = np.hstack([np.ones((len(measure), 1)), Phi])
    target = A.T @ wN
    w = _polish(w, A, target)
    resid = np.max(np.abs(Phi.T @ w - Phi.T @ wN)) if Phi.shape[1] else 0.0
    w = w / w.sum()
    report = {"solver": "recombination", "moment_residual": float(resid), "rank": int(Phi.shape[1])}
    return QuadratureRule.from_parent(measure, w, report).merged()
