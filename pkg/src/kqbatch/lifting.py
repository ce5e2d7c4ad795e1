"""Lifted target measures over the location of the maximiser."""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr as _log_ndtr_body
from scipy.special import ndtr

from kqbatch.domain import EmpiricalMeasure
from kqbatch.gp import FactorizationError, stable_cholesky

VARIANCE_FLOOR = 1e-12
TAIL_SWITCH = -8.0
DENSE_LIMIT = 4096
MODES = ("LFI", "TS", "AL-uniform", "BQ-prior")


def log_ndtr(z):
    """``log Phi(z)``; asymptotic series below z = -8 where Phi underflows in log."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    tail = z < TAIL_SWITCH
    body = ~tail
    out[body] = _log_ndtr_body(z[body])
    zt = z[tail]
    if zt.size:
        r = 1.0 / (zt * zt)
        # 1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8 - 945/z^10
        series = 1.0 + r * (-1.0 + r * (3.0 + r * (-15.0 + r * (105.0 - 945.0 * r))))
        out[tail] = -0.5 * zt * zt - np.log(-zt) - 0.5 * np.log(2.0 * np.pi) + np.log(series)
    return out


def incumbent(gp):
    """Best posterior mean over the queried inputs (robust to observation noise)."""
    if not len(gp.data):
        raise ValueError("incumbent needs at least one observation")
    return float(np.max(gp.mean(gp.data.X)))


def lfi_log_pi(gp, y_best, embed=None):
    """Evaluator of ``log Phi((m_t(x) - y_best) / sqrt(C_t(x, x)))``."""
    embed = embed or (lambda X: X)

    def log_pi(X):
        m, v = gp.mean_var(embed(np.asarray(X, dtype=float)))
        z = (m - y_best) / np.sqrt(np.maximum(v, VARIANCE_FLOOR))
        return log_ndtr(z)

    return log_pi


def ts_empirical(gp, candidates, draws, seed=None, *, chunked=False, embed=None):
    """Argmax frequencies of joint posterior draws over a finite candidate set.

    With ``chunked=True`` candidate blocks of at most 4096 are sampled
    independently (each conditioned on the same data) and the per-draw argmax
    is taken over the concatenation, which ignores cross-block correlation.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    X = np.asarray(candidates, dtype=float)
    N = X.shape[0]
    if N > DENSE_LIMIT and not chunked:
        raise ValueError(f"{N} candidates exceed the dense limit {DENSE_LIMIT}; pass chunked=True")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    Z = embed(X) if embed else X
    best_val = np.full(draws, -np.inf)
    best_idx = np.zeros(draws, dtype=int)
    for start in range(0, N, DENSE_LIMIT):
        idx = slice(start, min(start + DENSE_LIMIT, N))
        F = joint_sample(gp, Z[idx], draws, rng)
        loc = F.argmax(axis=0)
        val = F[loc, np.arange(draws)]
        better = val > best_val
        best_val[better] = val[better]
        best_idx[better] = loc[better] + start
    counts = np.bincount(best_idx, minlength=N)
    return EmpiricalMeasure(X, counts / draws)


def joint_sample(gp, X, draws, rng):
    """``(len(X), draws)`` matrix of joint posterior function values."""
    m = gp.mean(X)
    C = gp.cov(X)
    scale = max(float(np.max(np.diag(C))), 0.0)
    if scale <= VARIANCE_FLOOR * gp.kernel.outputscale:
        return np.repeat(m[:, None], draws, axis=1)
    try:
        L, _ = stable_cholesky(C + 1e-10 * scale * np.eye(C.shape[0]))
    except FactorizationError:
        # numerically rank-deficient: symmetric square root with clipped spectrum
        lam, U = np.linalg.eigh(C)
        L = U * np.sqrt(np.maximum(lam, 0.0))
    return m[:, None] + L @ rng.standard_normal((X.shape[0], draws))


@dataclass
class ConstraintModel:
    """One GP per black-box constraint ``g_l(x) >= 0``."""

    gps: list = field(default_factory=list)

    def __len__(self):
        return len(self.gps)


def feasibility(models, points, embed=None):
    """Joint probability of feasibility ``prod_l Phi(m_l / sqrt(C_l + noise_l))``."""
    X = np.asarray(points, dtype=float)
    X = embed(X) if embed else X
    q = np.ones(X.shape[0])
    for gp in models.gps:
        m, v = gp.mean_var(X)
        q *= ndtr(m / np.sqrt(np.maximum(v + gp.noise_variance, VARIANCE_FLOOR)))
    return q


def log_feasibility(models, points, embed=None):
    X = np.asarray(points, dtype=float)
    X = embed(X) if embed else X
    out = np.zeros(X.shape[0])
    for gp in models.gps:
        m, v = gp.mean_var(X)
        out += log_ndtr(m / np.sqrt(np.maximum(v + gp.noise_variance, VARIANCE_FLOOR)))
    return out


@dataclass
class LiftedTarget:
    """Target measure ``pi_t`` built from the surrogate.

    ``base_log_density`` (typically the domain prior) multiplies the lifted
    term; ``None`` means Lebesgue/counting base measure.
    """

    mode: str
    gp: object = None
    y_best: float = None
    constraints: ConstraintModel = None
    base_log_density: object = None
    embed: object = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "LFI" and self.y_best is None and self.gp is not None:
            self.y_best = incumbent(self.gp)

    def log_pi(self, X):
        X = np.asarray(X, dtype=float)
        if self.mode == "TS":
            raise ValueError("the TS target has no closed-form density; use ts_empirical")
        out = np.zeros(X.shape[0])
        if self.base_log_density is not None:
            out += self.base_log_density(X)
        if self.mode == "LFI":
            finite = np.isfinite(out)
            if finite.any():
                out[finite] += lfi_log_pi(self.gp, self.y_best, self.embed)(X[finite])
        if self.constraints is not None and len(self.constraints):
            finite = np.isfinite(out)
            if finite.any():
                out[finite] += log_feasibility(self.constraints, X[finite], self.embed)
        return out

    __call__ = log_pi


def constrained_log_pi(base, models):
    """Tilt an LFI target by the joint feasibility: ``log pi_t + log q_t``."""
    if base.mode != "LFI":
        raise ValueError("constrained targets are built on the LFI mode")
    embed = base.embed

    def log_pi(X):
        X = np.asarray(X, dtype=float)
        out = base.log_pi(X)
        if len(models):
            with np.errstate(divide="ignore"):
                out = out + np.log(feasibility(models, X, embed))
        return out

    return log_pi
