"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``KQBATCH_DISABLE_NUMBA`` is unset (or ``0``). Both paths are always
importable as ``numpy_impl`` / ``numba_impl`` so tests and the benchmark can
compare them directly.
"""
import os
import types

import numpy as np

ENV_FLAG = "KQBATCH_DISABLE_NUMBA"


def _flag_disabled():
    return os.environ.get(ENV_FLAG, "0").strip().lower() not in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _np_rbf_gram(A, B, lengthscales, outputscale):
    As = A / lengthscales
    Bs = B / lengthscales
    sq = (
        np.sum(As * As, axis=1)[:, None]
        + np.sum(Bs * Bs, axis=1)[None, :]
        - 2.0 * As @ Bs.T
    )
    np.maximum(sq, 0.0, out=sq)
    return outputscale * np.exp(-0.5 * sq)


def _np_rbf_quadform(A, wa, B, wb, lengthscales, outputscale, block=2048):
    total = 0.0
    for start in range(0, A.shape[0], block):
        stop = min(start + block, A.shape[0])
        G = _np_rbf_gram(A[start:stop], B, lengthscales, outputscale)
        total += float(wa[start:stop] @ (G @ wb))
    return total


def _np_eliminate(w, V, g, tol):
    """Carathéodory elimination along the columns of a null-space basis.

    Each column of ``V`` is used in turn: weights move along it until one
    hits zero, and the remaining columns are updated so that eliminated
    entries stay eliminated. The sign of every direction is chosen so that
    ``g @ w`` does not increase. Returns the number of directions used.
    """
    w = w.copy()
    V = V.copy()
    k = V.shape[1]
    used = 0
    for i in range(k):
        v = V[:, i].copy()
        scale = np.max(np.abs(v))
        if scale <= tol:
            continue
        v /= scale
        if g @ v < 0.0:
            v = -v
        pos = v > tol
        if not np.any(pos):
            v = -v
            pos = v > tol
            if not np.any(pos):
                continue
        ratios = np.full(w.shape[0], np.inf)
        ratios[pos] = w[pos] / v[pos]
        j = int(np.argmin(ratios))
        alpha = ratios[j]
        w -= alpha * v
        w[j] = 0.0
        w[w < 0.0] = 0.0
        if i + 1 < k:
            coef = V[j, i + 1:] / v[j]
            V[:, i + 1:] -= np.outer(v, coef)
            V[j, i + 1:] = 0.0
        used += 1
    return w, used


def _np_pivot(T, row, col):
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba():
    import numba as nb

    @nb.njit(cache=True, fastmath=False)
    def rbf_gram(A, B, lengthscales, outputscale):
        n, d = A.shape
        m = B.shape[0]
        out = np.empty((n, m))
        inv = 1.0 / lengthscales
        for i in range(n):
            for j in range(m):
                s = 0.0
                for k in range(d):
                    diff = (A[i, k] - B[j, k]) * inv[k]
                    s += diff * diff
                out[i, j] = outputscale * np.exp(-0.5 * s)
        return out

    @nb.njit(cache=True)
    def rbf_quadform(A, wa, B, wb, lengthscales, outputscale):
        n, d = A.shape
        m = B.shape[0]
        inv = 1.0 / lengthscales
        total = 0.0
        for i in range(n):
            if wa[i] == 0.0:
                continue
            row = 0.0
            for j in range(m):
                if wb[j] == 0.0:
                    continue
                s = 0.0
                for k in range(d):
                    diff = (A[i, k] - B[j, k]) * inv[k]
                    s += diff * diff
                row += wb[j] * np.exp(-0.5 * s)
            total += wa[i] * row
        return outputscale * total

    @nb.njit(cache=True)
    def eliminate(w, V, g, tol):
        w = w.copy()
        V = V.copy()
        n, k = V.shape
        used = 0
        v = np.empty(n)
        for i in range(k):
            scale = 0.0
            for a in range(n):
                if abs(V[a, i]) > scale:
                    scale = abs(V[a, i])
            if scale <= tol:
                continue
            gv = 0.0
            for a in range(n):
                v[a] = V[a, i] / scale
                gv += g[a] * v[a]
            if gv < 0.0:
                for a in range(n):
                    v[a] = -v[a]
            best = np.inf
            j = -1
            for a in range(n):
                if v[a] > tol:
                    r = w[a] / v[a]
                    if r < best:
                        best = r
                        j = a
            if j < 0:
                for a in range(n):
                    v[a] = -v[a]
                for a in range(n):
                    if v[a] > tol:
                        r = w[a] / v[a]
                        if r < best:
                            best = r
                            j = a
                if j < 0:
                    continue
            for a in range(n):
                w[a] -= best * v[a]
                if w[a] < 0.0:
                    w[a] = 0.0
            w[j] = 0.0
            vj = v[j]
            for l in range(i + 1, k):
                c = V[j, l] / vj
                if c != 0.0:
                    for a in range(n):
                        V[a, l] -= c * v[a]
                V[j, l] = 0.0
            used += 1
        return w, used

    @nb.njit(cache=True)
    def pivot(T, row, col):
        m, n = T.shape
        p = T[row, col]
        for b in range(n):
            T[row, b] /= p
        for a in range(m):
            if a == row:
                continue
            f = T[a, col]
            if f != 0.0:
                for b in range(n):
                    T[a, b] -= f * T[row, b]

    return types.SimpleNamespace(
        name="numba",
        rbf_gram=rbf_gram,
        rbf_quadform=rbf_quadform,
        eliminate=eliminate,
        pivot=pivot,
    )


numpy_impl = types.SimpleNamespace(
    name="numpy",
    rbf_gram=_np_rbf_gram,
    rbf_quadform=_np_rbf_quadform,
    eliminate=_np_eliminate,
    pivot=_np_pivot,
)

try:
    numba_impl = _build_numba()
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    numba_impl = None

HAVE_NUMBA = numba_impl is not None


def backend():
    """Return the active kernel namespace, honouring the env flag at call time."""
    if HAVE_NUMBA and not _flag_disabled():
        return numba_impl
    return numpy_impl
