"""Domain priors, weighted refitting and sequential importance resampling."""
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

SIMPLEX_TOL = 1e-12
GMM_MAX_ITER = 50
GMM_TOL = 1e-6
GMM_COV_FLOOR = 1e-6
REJECTION_ATTEMPTS = 100


class ImportanceWeightError(RuntimeError):
    """All importance weights vanished; the effective sample size is zero."""


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _check_simplex(p, what):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > SIMPLEX_TOL * max(1, p.size):
        raise ValueError(f"{what} must lie on the probability simplex")
    return p


def _normalise_weights(w):
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or not np.isfinite(w).all():
        raise ValueError("weights must be finite and non-negative")
    s = w.sum()
    if s <= 0:
        raise ValueError("weights sum to zero")
    return w / s


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud ``sum_i w_i delta_{x_i}``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.points, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if X.shape[0] != w.shape[0] or w.shape[0] < 1:
            raise ValueError("measure needs N >= 1 points with one weight each")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("measure weights must be non-negative and sum to 1")
        object.__setattr__(self, "points", X)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def ess(self):
        return float(1.0 / np.sum(self.weights**2))

    @classmethod
    def uniform(cls, points):
        points = np.asarray(points, dtype=float)
        n = points.shape[0]
        return cls(points, np.full(n, 1.0 / n))

    @classmethod
    def from_log_weights(cls, points, logw):
        logw = np.asarray(logw, dtype=float)
        finite = np.isfinite(logw)
        if not finite.any():
            raise ImportanceWeightError("all importance weights are zero or NaN (ESS = 0)")
        w = np.zeros_like(logw)
        w[finite] = np.exp(logw[finite] - logw[finite].max())
        return cls(points, w / w.sum())

    def barycentre(self):
        return self.weights @ self.points

    def merged(self):
        """Copy with identical rows merged (weights summed); also returns row map."""
        uniq, inv = np.unique(self.points, axis=0, return_inverse=True)
        inv = np.ravel(inv)
        w = np.bincount(inv, weights=self.weights, minlength=uniq.shape[0])
        return EmpiricalMeasure(uniq, w / w.sum()), inv


# ---------------------------------------------------------------------------
# prior families
# ---------------------------------------------------------------------------

class DomainPrior:
    """Base class: samplable distribution with a log-density and weighted MLE refit."""

    dim: int

    def sample(self, n, seed=None):
        raise NotImplementedError

    def log_density(self, X):
        raise NotImplementedError

    def fit(self, points, weights, seed=None):
        raise NotImplementedError

    def embed(self, X):
        """Real embedding used by the kernel (identity for continuous families)."""
        return np.asarray(X, dtype=float)

    @property
    def is_discrete(self):
        return False

    def support(self):
        """All atoms for discrete families (``None`` when not enumerable)."""
        return None

    def n_atoms(self):
        return np.inf


@dataclass(frozen=True, eq=False)
class ContinuousUniform(DomainPrior):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("uniform prior needs lower < upper elementwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def width(self):
        return self.upper - self.lower

    def sample(self, n, seed=None):
        return _rng(seed).uniform(self.lower, self.upper, size=(n, self.dim))

    def log_density(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        inside = np.all((X >= self.lower) & (X <= self.upper), axis=1)
        return np.where(inside, -np.sum(np.log(self.width)), -np.inf)

    def fit(self, points, weights, seed=None):
        X = np.asarray(points, dtype=float).reshape(-1, self.dim)
        w = _normalise_weights(weights)
        X = X[w > 0]
        lo, hi = X.min(axis=0), X.max(axis=0)
        pad = 0.01 * np.where(hi > lo, hi - lo, self.width)
        return ContinuousUniform(lo - pad, hi + pad)


@dataclass(frozen=True, eq=False)
class Gaussian(DomainPrior):
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mu.size, mu.size):
            raise ValueError("covariance shape does not match mean")
        if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -1e-12 * max(1.0, np.trace(cov)):
            raise ValueError("covariance must be positive semi-definite")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self):
        return self.mean.shape[0]

    def sample(self, n, seed=None):
        return _rng(seed).multivariate_normal(self.mean, self.covariance, size=n, method="eigh")

    def log_density(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return _gauss_logpdf(X, self.mean, self.covariance)

    def fit(self, points, weights, seed=None):
        X = np.asarray(points, dtype=float).reshape(-1, self.dim)
        w = _normalise_weights(weights)
        mu = w @ X
        D = X - mu
        cov = (D * w[:, None]).T @ D
        floor = GMM_COV_FLOOR * max(np.max(np.diag(cov)), 1.0)
        if np.linalg.eigvalsh(cov).min() < floor * 1e-3:
            cov = cov + floor * np.eye(self.dim)
        return Gaussian(mu, cov)


def _gauss_logpdf(X, mu, cov):
    d = mu.shape[0]
    L = np.linalg.cholesky(cov)
    z = np.linalg.solve(L, (X - mu).T)
    return -0.5 * np.sum(z * z, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * d * np.log(2 * np.pi)


@dataclass(frozen=True, eq=False)
class GMM(DomainPrior):
    """Gaussian mixture, optionally truncated to a box for sampling.

    Samples outside ``[lower, upper]`` are redrawn up to 100 times and then
    clamped. ``log_density`` is the untruncated mixture density.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        pi = _check_simplex(np.atleast_1d(self.weights), "GMM weights")
        mus = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covariances, dtype=float)
        if covs.ndim == 1:
            covs = covs[:, None, None]
        elif covs.ndim == 2:
            covs = covs[None] if mus.shape[0] == 1 else np.stack([np.diag(c) for c in covs])
        if mus.shape[0] != pi.size or covs.shape != (pi.size, mus.shape[1], mus.shape[1]):
            raise ValueError("GMM parameter shapes are inconsistent")
        object.__setattr__(self, "weights", pi)
        object.__setattr__(self, "means", mus)
        object.__setattr__(self, "covariances", covs)
        if self.lower is not None:
            object.__setattr__(self, "lower", np.atleast_1d(np.asarray(self.lower, dtype=float)))
            object.__setattr__(self, "upper", np.atleast_1d(np.asarray(self.upper, dtype=float)))

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.weights.shape[0]

    @classmethod
    def initial(cls, n_components, lower, upper):
        """Broad mixture covering a box (used as an un-fitted proposal family)."""
        lower = np.asarray(lower, float)
        upper = np.asarray(upper, float)
        d = lower.size
        mid = 0.5 * (lower + upper)
        cov = np.diag((upper - lower) ** 2 / 12.0)
        return cls(
            np.full(n_components, 1.0 / n_components),
            np.repeat(mid[None], n_components, axis=0),
            np.repeat(cov[None], n_components, axis=0),
            lower,
            upper,
        )

    def _draw(self, n, rng):
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k in range(self.n_components):
            idx = np.flatnonzero(comp == k)
            if idx.size:
                out[idx] = rng.multivariate_normal(self.means[k], self.covariances[k], size=idx.size, method="eigh")
        return out

    def sample(self, n, seed=None):
        rng = _rng(seed)
        X = self._draw(n, rng)
        if self.lower is None:
            return X
        bad = np.flatnonzero(np.any((X < self.lower) | (X > self.upper), axis=1))
        for _ in range(REJECTION_ATTEMPTS):
            if not bad.size:
                break
            X[bad] = self._draw(bad.size, rng)
            bad = bad[np.any((X[bad] < self.lower) | (X[bad] > self.upper), axis=1)]
        if bad.size:
            X[bad] = np.clip(X[bad], self.lower, self.upper)
        return X

    def log_density(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        comps = np.stack(
            [np.log(self.weights[k]) + _gauss_logpdf(X, self.means[k], self.covariances[k])
             for k in range(self.n_components) if self.weights[k] > 0],
            axis=1,
        )
        return logsumexp(comps, axis=1)

    def _floor(self, X):
        if self.lower is not None:
            width = self.upper - self.lower
        else:
            width = np.ptp(X, axis=0)
            width = np.where(width > 0, width, 1.0)
        return GMM_COV_FLOOR * width**2

    def fit(self, points, weights, seed=None):
        """Weighted EM, warm-started by weighted k-means++ seeding."""
        X = np.asarray(points, dtype=float).reshape(-1, self.dim)
        w = _normalise_weights(weights)
        keep = w > 0
        X, w = X[keep], w[keep] / w[keep].sum()
        floor = self._floor(X)
        K = min(self.n_components, np.unique(X, axis=0).shape[0])
        rng = _rng(seed)
        means = _weighted_kmeanspp(X, w, K, rng)
        d2 = ((X[:, None, :] - means[None]) ** 2).sum(-1)
        resp = np.zeros((X.shape[0], K))
        resp[np.arange(X.shape[0]), d2.argmin(1)] = 1.0
        pi, means, covs = _m_step(X, w, resp, floor)
        prev = -np.inf
        for _ in range(GMM_MAX_ITER):
            with np.errstate(divide="ignore"):
                # an emptied component has log weight -inf and drops out
                logp = np.stack([np.log(pi[k]) + _gauss_logpdf(X, means[k], covs[k]) for k in range(K)], axis=1)
            norm = logsumexp(logp, axis=1)
            ll = float(w @ norm)
            resp = np.exp(logp - norm[:, None])
            pi, means, covs = _m_step(X, w, resp, floor)
            if np.isfinite(prev) and abs(ll - prev) <= GMM_TOL * abs(prev):
                break
            prev = ll
        alive = pi > 0
        pi = pi[alive] / pi[alive].sum()
        return GMM(pi, means[alive], covs[alive], self.lower, self.upper)


def _weighted_kmeanspp(X, w, K, rng):
    centres = [X[rng.choice(X.shape[0], p=w)]]
    d2 = ((X - centres[0]) ** 2).sum(1)
    for _ in range(1, K):
        p = w * d2
        if p.sum() <= 0:
            break
        centres.append(X[rng.choice(X.shape[0], p=p / p.sum())])
        d2 = np.minimum(d2, ((X - centres[-1]) ** 2).sum(1))
    return np.array(centres)


def _m_step(X, w, resp, floor):
    R = resp * w[:, None]
    Nk = R.sum(0)
    live = Nk > 1e-300
    K, d = resp.shape[1], X.shape[1]
    pi = np.where(live, Nk, 0.0)
    pi = pi / pi.sum()
    means = np.zeros((K, d))
    covs = np.repeat(np.diag(floor)[None], K, axis=0)
    for k in np.flatnonzero(live):
        means[k] = R[:, k] @ X / Nk[k]
        D = X - means[k]
        covs[k] = (D * R[:, k, None]).T @ D / Nk[k] + np.diag(floor)
    return pi, means, covs


@dataclass(frozen=True, eq=False)
class Bernoulli(DomainPrior):
    p: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if np.any((p < 0) | (p > 1)):
            raise ValueError("Bernoulli probabilities must lie in [0, 1]")
        object.__setattr__(self, "p", p)

    @property
    def dim(self):
        return self.p.shape[0]

    @property
    def is_discrete(self):
        return True

    def n_atoms(self):
        return 2**self.dim

    def support(self):
        return np.array(list(itertools.product((0.0, 1.0), repeat=self.dim)))

    def sample(self, n, seed=None):
        return (_rng(seed).random((n, self.dim)) < self.p).astype(float)

    def log_density(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        valid = np.all((X == 0) | (X == 1), axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(X == 1, np.log(self.p), np.log1p(-self.p))
        out = terms.sum(axis=1)
        return np.where(valid, out, -np.inf)

    def fit(self, points, weights, seed=None):
        X = np.asarray(points, dtype=float).reshape(-1, self.dim)
        return Bernoulli(np.clip(_normalise_weights(weights) @ X, 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class Categorical(DomainPrior):
    """Independent categorical coordinates with integer codes ``0..K_k-1``."""

    tables: tuple

    def __post_init__(self):
        tables = tuple(_check_simplex(np.atleast_1d(t), "category table") for t in self.tables)
        object.__setattr__(self, "tables", tables)

    @property
    def dim(self):
        return len(self.tables)

    @property
    def arities(self):
        return np.array([t.size for t in self.tables])

    @property
    def is_discrete(self):
        return True

    def n_atoms(self):
        return float(np.prod(self.arities.astype(float)))

    def support(self):
        return np.array(list(itertools.product(*[range(k) for k in self.arities])), dtype=float)

    @classmethod
    def uniform(cls, arities):
        return cls(tuple(np.full(k, 1.0 / k) for k in arities))

    def sample(self, n, seed=None):
        rng = _rng(seed)
        return np.stack([rng.choice(t.size, size=n, p=t) for t in self.tables], axis=1).astype(float)

    def log_density(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        out = np.zeros(X.shape[0])
        for k, t in enumerate(self.tables):
            code = X[:, k]
            ok = (code >= 0) & (code < t.size) & (code == np.round(code))
            with np.errstate(divide="ignore"):
                lp = np.log(t)[np.clip(code, 0, t.size - 1).astype(int)]
            out += np.where(ok, lp, -np.inf)
        return out

    def fit(self, points, weights, seed=None):
        X = np.asarray(points, dtype=float).reshape(-1, self.dim)
        w = _normalise_weights(weights)
        tables = []
        for k, t in enumerate(self.tables):
            freq = np.bincount(X[:, k].astype(int), weights=w, minlength=t.size)[: t.size]
            tables.append(freq / freq.sum())
        return Categorical(tuple(tables))

    def embed(self, X):
        X = np.asarray(X, dtype=float)
        denom = np.maximum(self.arities - 1, 1)
        return X / denom


@dataclass(frozen=True, eq=False)
class MixedProduct(DomainPrior):
    """Independent product: ``continuous_part`` on the first k dims, ``discrete_part`` on the rest."""

    continuous_part: DomainPrior
    discrete_part: DomainPrior

    @property
    def split(self):
        return self.continuous_part.dim

    @property
    def dim(self):
        return self.continuous_part.dim + self.discrete_part.dim

    def sample(self, n, seed=None):
        rng = _rng(seed)
        a = self.continuous_part.sample(n, rng)
        b = self.discrete_part.sample(n, rng)
        return np.hstack([a, b])

    def log_density(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        k = self.split
        return self.continuous_part.log_density(X[:, :k]) + self.discrete_part.log_density(X[:, k:])

    def fit(self, points, weights, seed=None):
        X = np.asarray(points, dtype=float).reshape(-1, self.dim)
        rng = _rng(seed)
        k = self.split
        return MixedProduct(self.continuous_part.fit(X[:, :k], weights, rng), self.discrete_part.fit(X[:, k:], weights, rng))

    def embed(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        k = self.split
        return np.hstack([self.continuous_part.embed(X[:, :k]), self.discrete_part.embed(X[:, k:])])


def sample(prior, count, seed=None):
    if count < 1:
        raise ValueError("count must be >= 1")
    return prior.sample(count, seed)


def log_density(prior, x):
    return prior.log_density(x)


def weighted_mle_fit(family, points, weights, seed=None):
    return family.fit(points, weights, seed)


# ---------------------------------------------------------------------------
# SIR
# ---------------------------------------------------------------------------

def _importance(points, target_log_density, proposal):
    logq = proposal.log_density(points)
    logp = np.asarray(target_log_density(points), dtype=float)
    with np.errstate(invalid="ignore"):
        logw = np.where(np.isfinite(logq), logp - logq, -np.inf)
    logw[np.isnan(logw)] = -np.inf
    return EmpiricalMeasure.from_log_weights(points, logw)


def sir(prior, target_log_density, N, seed=None, *, refit_family=None, enumerate_small=True):
    """Sequential importance resampling of an unnormalised log-target.

    Parameters
    ----------
    prior : DomainPrior
        Initial proposal ``pi_0``.
    target_log_density : callable
        Maps an (n, d) array to log target values, up to an additive constant.
    N : int
        Number of particles.
    refit_family : DomainPrior, optional
        Family refitted by weighted MLE in the middle step (defaults to the
        prior itself, e.g. a GMM for a box domain).
    enumerate_small : bool
        When the prior is discrete with at most ``N`` atoms, weigh every atom
        exactly instead of sampling.

    Returns
    -------
    measure : EmpiricalMeasure
    refitted : DomainPrior
    """
    rng = _rng(seed)
    family = prior if refit_family is None else refit_family
    if enumerate_small and prior.is_discrete and prior.n_atoms() <= N:
        atoms = prior.support()
        logp = np.asarray(target_log_density(atoms), dtype=float)
        logp[np.isnan(logp)] = -np.inf
        measure = EmpiricalMeasure.from_log_weights(atoms, logp)
        return measure, family.fit(measure.points, measure.weights, rng)

    X0 = prior.sample(N, rng)
    first = _importance(X0, target_log_density, prior)
    if np.allclose(first.weights * N, 1.0, rtol=0, atol=1e-12):
        # target already proportional to the proposal; a refit only adds noise
        return first, prior
    refitted = family.fit(X0, first.weights, rng)
    X1 = refitted.sample(N, rng)
    return _importance(X1, target_log_density, refitted), refitted


def pool_measure(pool, target_log_density=None, exclude=None):
    """Empirical measure over an explicit finite pool, minus already queried rows."""
    pool = np.asarray(pool, dtype=float)
    keep = np.ones(pool.shape[0], dtype=bool)
    if exclude is not None and len(exclude):
        ex = {tuple(r) for r in np.asarray(exclude, dtype=float)}
        keep = np.array([tuple(r) not in ex for r in pool])
    X = pool[keep]
    if target_log_density is None:
        return EmpiricalMeasure.uniform(X)
    logp = np.asarray(target_log_density(X), dtype=float)
    logp[np.isnan(logp)] = -np.inf
    return EmpiricalMeasure.from_log_weights(X, logp)
