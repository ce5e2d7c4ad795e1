"""Exact Gaussian process regression with an ARD squared-exponential kernel."""
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from kqbatch._accel import backend

LOG_2PI = np.log(2.0 * np.pi)
JITTER_START = 1e-8
JITTER_MAX = 1e-4
VARIANCE_CLAMP = 1e-8


class FactorizationError(np.linalg.LinAlgError):
    """Gram matrix could not be Cholesky-factorised even with maximal jitter."""


class VarianceError(ValueError):
    """Posterior variance came out more negative than round-off allows."""


def _as_points(X, d=None):
    X = np.ascontiguousarray(np.asarray(X, dtype=float))
    if X.ndim == 1:
        X = X[None, :] if d is not None and X.shape[0] == d else X[:, None]
    if d is not None and X.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got {X.shape[1]}")
    return X


@dataclass(frozen=True)
class Kernel:
    """ARD RBF kernel ``s * exp(-0.5 * sum_k ((x_k - y_k) / l_k)^2)``."""

    lengthscales: np.ndarray
    outputscale: float = 1.0
    family: str = "rbf-ard"

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "outputscale", float(self.outputscale))
        if self.family != "rbf-ard":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError("lengthscales must be positive and finite")
        if not self.outputscale > 0:
            raise ValueError("outputscale must be positive")

    @property
    def dim(self):
        return self.lengthscales.shape[0]

    def __call__(self, A, B=None):
        A = _as_points(A, self.dim)
        B = A if B is None else _as_points(B, self.dim)
        return backend().rbf_gram(A, B, np.ascontiguousarray(self.lengthscales), self.outputscale)

    def diag(self, A):
        A = _as_points(A, self.dim)
        return np.full(A.shape[0], self.outputscale)

    def quadform(self, A, wa, B=None, wb=None):
        """``wa @ K(A, B) @ wb`` without materialising the Gram matrix."""
        A = _as_points(A, self.dim)
        if B is None:
            B, wb = A, wa
        B = _as_points(B, self.dim)
        return float(
            backend().rbf_quadform(
                A, np.ascontiguousarray(wa, dtype=float),
                B, np.ascontiguousarray(wb, dtype=float),
                np.ascontiguousarray(self.lengthscales), self.outputscale,
            )
        )

    def with_params(self, lengthscales=None, outputscale=None):
        return Kernel(
            self.lengthscales if lengthscales is None else lengthscales,
            self.outputscale if outputscale is None else outputscale,
        )

    def to_dict(self):
        return {
            "family": self.family,
            "lengthscales": self.lengthscales.tolist(),
            "outputscale": self.outputscale,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(np.asarray(doc["lengthscales"]), doc.get("outputscale", 1.0), doc.get("family", "rbf-ard"))


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.asarray(self.Y, dtype=float).ravel()
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]} entries")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be non-negative")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))

    def __len__(self):
        return self.Y.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    def append(self, X, Y):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return Dataset(np.vstack([self.X, X]), np.concatenate([self.Y, np.ravel(Y)]), self.noise_variance)

    @classmethod
    def empty(cls, dim, noise_variance=0.0):
        return cls(np.empty((0, dim)), np.empty(0), noise_variance)

    def to_dict(self):
        return {"X": self.X.tolist(), "Y": self.Y.tolist(), "noise_variance": self.noise_variance}

    @classmethod
    def from_dict(cls, doc):
        X = np.asarray(doc["X"], dtype=float)
        return cls(X.reshape(len(doc["Y"]), -1), np.asarray(doc["Y"]), doc.get("noise_variance", 0.0))


def dumps(kernel, data):
    """Serialise a kernel and dataset into one JSON document."""
    return json.dumps({"kernel": kernel.to_dict(), "data": data.to_dict()})


def loads(text):
    doc = json.loads(text)
    return Kernel.from_dict(doc["kernel"]), Dataset.from_dict(doc["data"])


def stable_cholesky(S):
    """Cholesky with the escalating diagonal jitter policy.

    Returns ``(L, jitter)``. Plain factorisation is tried first; on failure
    ``1e-8 * trace / t`` is added and multiplied by ten up to ``1e-4 * trace / t``.
    """
    t = S.shape[0]
    try:
        return np.linalg.cholesky(S), 0.0
    except np.linalg.LinAlgError:
        pass
    base = max(np.trace(S) / t, np.finfo(float).tiny)
    level = JITTER_START
    while level <= JITTER_MAX * (1 + 1e-9):
        jitter = level * base
        try:
            return np.linalg.cholesky(S + jitter * np.eye(t)), jitter
        except np.linalg.LinAlgError:
            level *= 10.0
    raise FactorizationError(f"{t}x{t} Gram matrix is not positive definite after maximal jitter")


class GPPosterior:
    """Conditioned GP; immutable after construction.

    Parameters
    ----------
    kernel : Kernel
    data : Dataset
    prior_mean : float
        Constant prior mean ``m``.
    """

    def __init__(self, kernel, data, prior_mean=0.0):
        if len(data) and data.dim != kernel.dim:
            raise ValueError(f"data dimension {data.dim} does not match kernel dimension {kernel.dim}")
        self.kernel = kernel
        self.data = data
        self.prior_mean = float(prior_mean)
        t = len(data)
        if t:
            S = kernel(data.X) + data.noise_variance * np.eye(t)
            self._L, self.jitter = stable_cholesky(S)
            self._alpha = sla.cho_solve((self._L, True), data.Y - self.prior_mean)
        else:
            self._L = np.empty((0, 0))
            self.jitter = 0.0
            self._alpha = np.empty(0)

    @property
    def dim(self):
        return self.kernel.dim

    @property
    def noise_variance(self):
        return self.data.noise_variance

    def _check(self, A):
        return _as_points(A, self.dim)

    def _whitened(self, A):
        # L^{-1} K(X, A)
        if not len(self.data):
            return np.empty((0, A.shape[0]))
        return sla.solve_triangular(self._L, self.kernel(self.data.X, A), lower=True)

    def mean(self, A):
        A = self._check(A)
        if not len(self.data):
            return np.full(A.shape[0], self.prior_mean)
        return self.prior_mean + self.kernel(A, self.data.X) @ self._alpha

    def cov(self, A, B=None):
        A = self._check(A)
        same = B is None
        B = A if same else self._check(B)
        VA = self._whitened(A)
        VB = VA if same else self._whitened(B)
        C = self.kernel(A, B) - VA.T @ VB
        if same:
            C = 0.5 * (C + C.T)
            np.fill_diagonal(C, _clamp(np.diag(C).copy(), self.kernel.outputscale))
        return C

    def var(self, A):
        """Pointwise posterior variance ``C_t(x, x)``, clamped at zero."""
        A = self._check(A)
        V = self._whitened(A)
        v = self.kernel.diag(A) - np.einsum("ij,ij->j", V, V)
        return _clamp(v, self.kernel.outputscale)

    def mean_var(self, A):
        A = self._check(A)
        if not len(self.data):
            return np.full(A.shape[0], self.prior_mean), self.kernel.diag(A)
        Kx = self.kernel(self.data.X, A)
        m = self.prior_mean + Kx.T @ self._alpha
        V = sla.solve_triangular(self._L, Kx, lower=True)
        v = self.kernel.diag(A) - np.einsum("ij,ij->j", V, V)
        return m, _clamp(v, self.kernel.outputscale)

    def quadform(self, A, wa, B=None, wb=None):
        """``wa @ C_t(A, B) @ wb`` in O(|A||B|) time and O(|A| + |B|) memory."""
        A = self._check(A)
        if B is None:
            B, wb = A, wa
        B = self._check(B)
        prior = self.kernel.quadform(A, wa, B, wb)
        if not len(self.data):
            return prior
        ka = sla.solve_triangular(self._L, self.kernel(self.data.X, A) @ wa, lower=True)
        kb = ka if B is A and wb is wa else sla.solve_triangular(self._L, self.kernel(self.data.X, B) @ wb, lower=True)
        return prior - float(ka @ kb)

    def condition(self, X, Y):
        """New posterior with ``(X, Y)`` appended; hyperparameters unchanged."""
        return GPPosterior(self.kernel, self.data.append(X, Y), self.prior_mean)


def _clamp(v, outputscale):
    floor = -VARIANCE_CLAMP * outputscale
    if np.any(v < floor):
        raise VarianceError(f"posterior variance {v.min():.3e} below clamp floor {floor:.3e}")
    return np.maximum(v, 0.0)


def fit_posterior(data, kernel, prior_mean=0.0):
    return GPPosterior(kernel, data, prior_mean)


def posterior_mean_cov(gp, A, B=None):
    """Posterior mean over ``A`` and covariance matrix ``C_t(A, B)``."""
    A = np.asarray(A, dtype=float)
    B = None if B is None or B is A else np.asarray(B, dtype=float)
    if B is not None and B.shape == A.shape and np.array_equal(A, B):
        B = None
    return gp.mean(A), gp.cov(A, B)


# ---------------------------------------------------------------------------
# type-II maximum likelihood
# ---------------------------------------------------------------------------

def log_marginal_likelihood(data, kernel, prior_mean=0.0):
    t = len(data)
    S = kernel(data.X) + data.noise_variance * np.eye(t)
    L, _ = stable_cholesky(S)
    r = data.Y - prior_mean
    a = sla.solve_triangular(L, r, lower=True)
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * t * LOG_2PI)


def _lml_and_grad(theta, X, Y, fit_noise, fixed_noise, fit_mean, fixed_mean):
    # theta = [log l_1..l_d, log s, (log noise), (mean)]
    d = X.shape[1]
    ls = np.exp(theta[:d])
    s = np.exp(theta[d])
    i = d + 1
    if fit_noise:
        noise = np.exp(theta[i])
        i += 1
    else:
        noise = fixed_noise
    m = theta[i] if fit_mean else fixed_mean
    t = X.shape[0]
    K = Kernel(ls, s)(X)
    S = K + noise * np.eye(t)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        L, _ = stable_cholesky(S)
    r = Y - m
    alpha = sla.cho_solve((L, True), r)
    lml = -0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * t * LOG_2PI
    Sinv = sla.cho_solve((L, True), np.eye(t))
    W = np.outer(alpha, alpha) - Sinv
    grad = np.empty_like(theta)
    for k in range(d):
        D = (X[:, k, None] - X[None, :, k]) ** 2 / ls[k] ** 2
        grad[k] = 0.5 * np.sum(W * K * D)
    grad[d] = 0.5 * np.sum(W * K)
    i = d + 1
    if fit_noise:
        grad[i] = 0.5 * noise * np.trace(W)
        i += 1
    if fit_mean:
        grad[i] = np.sum(alpha)
    return float(lml), grad


@dataclass
class HyperparameterFit:
    kernel: Kernel
    noise_variance: float
    prior_mean: float
    lml: float
    init_lml: float
    degenerate: bool = False
    history: list = field(default_factory=list)


def fit_hyperparameters(
    data,
    init,
    restarts=8,
    *,
    fit_noise=False,
    fit_mean=False,
    prior_mean=0.0,
    domain_width=None,
    noise_bounds=None,
    seed=0,
):
    """Multi-start L-BFGS-B ascent of the log marginal likelihood.

    Lengthscales are boxed to ``[1e-3, 1e3] * domain_width`` (per dimension;
    the data range when ``domain_width`` is None). The returned fit never has
    lower LML than ``init``.
    """
    X, Y = data.X, data.Y
    t, d = X.shape
    if t < 2:
        raise ValueError("hyperparameter fitting needs at least 2 data points")
    init_lml = log_marginal_likelihood(data, init, prior_mean)
    if np.all(np.ptp(X, axis=0) == 0):
        warnings.warn("all inputs identical; returning initial hyperparameters", RuntimeWarning, stacklevel=2)
        return HyperparameterFit(init, data.noise_variance, prior_mean, init_lml, init_lml, degenerate=True)

    width = np.ptp(X, axis=0) if domain_width is None else np.broadcast_to(np.asarray(domain_width, float), (d,))
    width = np.where(width > 0, width, 1.0)
    yvar = float(np.var(Y)) if np.var(Y) > 0 else 1.0
    bounds = [(np.log(1e-3 * w), np.log(1e3 * w)) for w in width]
    bounds.append((np.log(1e-4 * yvar), np.log(1e4 * yvar)))
    x0 = list(np.log(init.lengthscales)) + [np.log(init.outputscale)]
    if fit_noise:
        lo, hi = noise_bounds if noise_bounds is not None else (1e-6 * yvar, yvar)
        bounds.append((np.log(lo), np.log(hi)))
        x0.append(np.log(np.clip(max(data.noise_variance, lo), lo, hi)))
    if fit_mean:
        spread = np.ptp(Y) + 1.0
        bounds.append((Y.min() - spread, Y.max() + spread))
        x0.append(prior_mean)
    x0 = np.clip(np.asarray(x0), [b[0] for b in bounds], [b[1] for b in bounds])
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    def neg(theta):
        try:
            v, g = _lml_and_grad(theta, X, Y, fit_noise, data.noise_variance, fit_mean, prior_mean)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros_like(theta)
        return -v, -g

    rng = np.random.default_rng(seed)
    starts = [x0]
    for _ in range(max(restarts, 1) - 1):
        jitter = rng.normal(scale=1.0, size=x0.shape)
        starts.append(np.clip(x0 + jitter, lo, hi))

    best_theta, best_val = None, -np.inf
    history = []
    for s0 in starts:
        res = minimize(neg, s0, jac=True, method="L-BFGS-B", bounds=bounds)
        val = -float(res.fun)
        history.append(val)
        if np.isfinite(val) and val > best_val:
            best_theta, best_val = res.x, val

    if best_theta is None or best_val < init_lml:
        return HyperparameterFit(init, data.noise_variance, prior_mean, init_lml, init_lml, history=history)
    kernel = Kernel(np.exp(best_theta[:d]), np.exp(best_theta[d]))
    i = d + 1
    noise = data.noise_variance
    if fit_noise:
        noise = float(np.exp(best_theta[i]))
        i += 1
    mean = float(best_theta[i]) if fit_mean else prior_mean
    lml = log_marginal_likelihood(Dataset(X, Y, noise), kernel, mean)
    if lml < init_lml:
        return HyperparameterFit(init, data.noise_variance, prior_mean, init_lml, init_lml, history=history)
    return HyperparameterFit(kernel, noise, mean, lml, init_lml, history=history)


def optimize_hyperparameters(data, init, restarts=8, **kwargs):
    """Kernel maximising the LML (never worse than ``init``)."""
    return fit_hyperparameters(data, init, restarts, **kwargs).kernel


class PosteriorKernel:
    """The posterior covariance ``C_t`` used as a kernel on domain points.

    ``embed`` maps raw domain points (e.g. categorical codes) to the real
    coordinates the GP was trained on.
    """

    def __init__(self, gp, embed=None):
        self.gp = gp
        self.embed = embed

    def _e(self, A):
        A = np.asarray(A, dtype=float)
        return self.embed(A) if self.embed is not None else A

    @property
    def outputscale(self):
        return self.gp.kernel.outputscale

    def __call__(self, A, B=None):
        return self.gp.cov(self._e(A), None if B is None else self._e(B))

    def diag(self, A):
        return self.gp.var(self._e(A))

    def quadform(self, A, wa, B=None, wb=None):
        return self.gp.quadform(self._e(A), wa, None if B is None else self._e(B), wb)


def kernel_diag(kernel, A):
    """Diagonal of a kernel evaluator, falling back to pointwise calls."""
    if hasattr(kernel, "diag"):
        return np.asarray(kernel.diag(A), dtype=float)
    A = np.asarray(A, dtype=float)
    return np.array([float(np.asarray(kernel(a[None], a[None])).ravel()[0]) for a in A])


def kernel_quadform(kernel, A, wa, B=None, wb=None, block=2048):
    """``wa @ k(A, B) @ wb``, blockwise when the evaluator has no fast path."""
    if hasattr(kernel, "quadform"):
        return float(kernel.quadform(A, wa, B, wb))
    if B is None:
        B, wb = A, wa
    total = 0.0
    for s in range(0, len(A), block):
        total += float(wa[s:s + block] @ (np.asarray(kernel(A[s:s + block], B)) @ wb))
    return total
