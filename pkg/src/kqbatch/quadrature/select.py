"""Batch selection: reward, tolerance LP and the select-batch orchestration."""
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from kqbatch.gp import PosteriorKernel, kernel_quadform
from kqbatch.lifting import feasibility, incumbent
from kqbatch.nystrom import build_basis, residual_diagonal, test_functions
from kqbatch.quadrature.lp import simplex
from kqbatch.quadrature.recombination import column_scale, recombination
from kqbatch.quadrature.rule import QuadratureRule, mmd_squared

NUMERICAL_SLACK = 1e-8
REWARDS = ("zero", "ucb", "ei")
MODES = ("exact-recombination", "tolerance-LP")


@dataclass(frozen=True)
class AcquisitionConfig:
    """Reward added to the quadrature objective.

    ``kind`` is ``"zero"``, ``"ucb"`` (``m + sqrt(beta) * sd``) or ``"ei"``.
    """

    kind: str = "zero"
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in REWARDS:
            raise ValueError(f"unknown reward {self.kind!r}; expected one of {REWARDS}")
        if self.kind == "ucb" and not self.beta > 0:
            raise ValueError("UCB needs beta > 0")


@dataclass(frozen=True)
class LPSettings:
    """Quadrature precision and batch-size cap.

    ``eps_lp=None`` means adaptive: the expected violation rate when
    constraints are present, the numerical slack otherwise.
    """

    eps_lp: float = None
    n_max: int = 10
    mode: str = "exact-recombination"
    pivot_rule: str = "auto"

    def __post_init__(self):
        if self.eps_lp is not None and not self.eps_lp >= 0:
            raise ValueError("eps_lp must be non-negative")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"unknown LP mode {self.mode!r}; expected one of {MODES}")


def _embedded(points, embed):
    points = np.asarray(points, dtype=float)
    return embed(points) if embed is not None else points


def reward(gp, config, points, embed=None):
    """Reward values ``alpha_t`` at ``points``."""
    Z = _embedded(points, embed)
    if config.kind == "zero":
        return np.zeros(Z.shape[0])
    m, v = gp.mean_var(Z)
    sd = np.sqrt(v)
    if config.kind == "ucb":
        return m + np.sqrt(config.beta) * sd
    y_best = incumbent(gp)
    gap = m - y_best
    out = np.maximum(gap, 0.0)
    pos = sd > 0
    z = gap[pos] / sd[pos]
    out[pos] = gap[pos] * ndtr(z) + sd[pos] * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    return out


def expected_violation(measure, q):
    """``1 - w^T q``, clamped to [0, 1]."""
    q = np.asarray(q, dtype=float)
    if q.shape[0] != len(measure):
        raise ValueError("feasibility vector length must match the measure")
    return float(np.clip(1.0 - measure.weights @ q, 0.0, 1.0))


def solve_lp(measure, moments, eigenvalues, reward_vec, feasibility_vec, settings):
    """Reward-maximising convex rule within a moment tolerance.

    Maximises ``w @ (reward * q)`` subject to
    ``|(w - wN) @ phi_j| <= eps * sqrt(lambda_j / r)`` for the ``r`` moment
    columns, ``(w - wN) @ q >= 0`` when ``feasibility_vec`` is given,
    ``sum(w) = 1`` and ``w >= 0``.

    The solution is a simplex vertex, so its support is at most the number
    of rows ``r + 1`` (``r + 2`` with the feasibility row).
    """
    phi = np.asarray(moments, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    N, r = phi.shape
    wN = measure.weights
    lam = np.asarray(eigenvalues, dtype=float)[:r]
    eps = NUMERICAL_SLACK if settings.eps_lp is None else max(settings.eps_lp, NUMERICAL_SLACK)
    scale = column_scale(phi)
    Phi = phi / scale
    half_width = eps * np.sqrt(np.maximum(lam, 0.0) / max(r, 1)) / scale
    # keep every range row at least numerically wide
    half_width = np.maximum(half_width, NUMERICAL_SLACK * np.finfo(float).eps ** 0.25)
    alpha = np.zeros(N) if reward_vec is None else np.asarray(reward_vec, dtype=float)
    q = None if feasibility_vec is None else np.asarray(feasibility_vec, dtype=float)
    c = alpha * (q if q is not None else 1.0)
    cmax = np.abs(c).max(initial=0.0)
    cost = -c / cmax if cmax > 0 else np.zeros(N)

    rows, rhs, slack_cols, slack_lb, slack_ub = [], [], [], [], []
    for j in range(r):
        rows.append(Phi[:, j])
        rhs.append(Phi[:, j] @ wN)
        slack_cols.append((len(rows) - 1, 1.0))
        slack_lb.append(-half_width[j])
        slack_ub.append(half_width[j])
    if q is not None:
        qs = max(q.max(initial=0.0), np.finfo(float).tiny)
        rows.append(q / qs)
        rhs.append(q @ wN / qs)
        slack_cols.append((len(rows) - 1, -1.0))
        slack_lb.append(0.0)
        slack_ub.append(np.inf)
    rows.append(np.ones(N))
    rhs.append(1.0)
    m, ns = len(rows), len(slack_cols)
    A = np.zeros((m, N + ns))
    A[:, :N] = np.vstack(rows)
    for k, (i, sgn) in enumerate(slack_cols):
        A[i, N + k] = sgn
    lb = np.concatenate([np.zeros(N), slack_lb])
    ub = np.concatenate([np.full(N, np.inf), slack_ub])
    cost_full = np.concatenate([cost, np.zeros(ns)])

    x, info = simplex(cost_full, A, np.asarray(rhs), lb, ub, rule=settings.pivot_rule)
    w = np.maximum(x[:N], 0.0)
    w[w < 1e-14] = 0.0
    w /= w.sum()
    slacks = np.abs(phi.T @ (w - wN)) if r else np.zeros(0)
    report = {
        "solver": "simplex",
        "objective": float(w @ c),
        "baseline_objective": float(wN @ c),
        "eps_lp": float(eps),
        "rank": int(r),
        "moment_slack": slacks.tolist(),
        "moment_bound": (eps * np.sqrt(np.maximum(lam, 0.0) / max(r, 1))).tolist(),
        "feasibility_gap": float((w - wN) @ q) if q is not None else None,
        "iterations": info["iterations"],
    }
    return QuadratureRule.from_parent(measure, w, report).merged()


def select_batch(
    gp,
    measure,
    basis=None,
    acquisition=None,
    constraints=None,
    settings=None,
    *,
    embed=None,
    n_landmarks=500,
    seed=None,
    self_term=None,
):
    """Pick a weighted batch from ``measure`` for the next round of queries.

    Parameters
    ----------
    gp : GPPosterior
        Objective surrogate; its posterior covariance is the quadrature kernel.
    measure : EmpiricalMeasure
        Candidate points and target weights.
    basis : NystromBasis, optional
        Built from ``measure`` with ``n_landmarks`` landmarks when omitted.
    acquisition : AcquisitionConfig, optional
    constraints : ConstraintModel, optional
        Switches on the constrained LP.
    settings : LPSettings, optional
    embed : callable, optional
        Domain-to-kernel coordinate map for discrete variables.
    self_term : float, optional
        Cached ``wN^T C wN``; computed when omitted.

    Returns
    -------
    QuadratureRule
        ``report`` holds ``mmd2``, ``batch_size``, ``eps_vio``, ``eps_nys``,
        ``eps_lp`` and ``nystrom_term``.
    """
    acquisition = acquisition or AcquisitionConfig()
    settings = settings or LPSettings()
    constrained = constraints is not None and len(constraints) > 0
    n = settings.n_max
    if constrained and n < 3:
        raise ValueError("the constrained LP needs n_max >= 3")
    kernel = PosteriorKernel(gp, embed)
    n_tests = n - 2 if constrained else n - 1
    if basis is None:
        M = min(max(n_landmarks, n_tests), len(measure))
        basis = build_basis(kernel, measure, M, min(n_tests, M), seed)
    kernel = basis.kernel
    r = min(basis.rank, n_tests)
    phi = test_functions(basis, measure.points)[:, :r]
    # residual of the rank actually constrained, so the error bounds use the same approximation
    resid, eps_nys = residual_diagonal(basis, measure.points, phi)

    alpha = reward(gp, acquisition, measure.points, embed)
    q = feasibility(constraints, measure.points, embed) if constrained else None
    eps_vio = expected_violation(measure, q) if constrained else 0.0

    if constrained:
        eps_lp = eps_vio if settings.eps_lp is None else settings.eps_lp
        lp = LPSettings(eps_lp, n, "tolerance-LP", settings.pivot_rule)
        rule = solve_lp(measure, phi, basis.eigenvalues, alpha, q, lp)
    elif settings.mode == "tolerance-LP":
        rule = solve_lp(measure, phi, basis.eigenvalues, alpha, None, settings)
        eps_lp = rule.report["eps_lp"]
    else:
        # orient eliminations towards higher reward, or lower Nyström residual
        g = -alpha if np.any(alpha != 0) else resid
        rule = recombination(measure, phi, n, objective=g)
        eps_lp = 0.0

    if self_term is None:
        self_term = kernel_quadform(kernel, measure.points, measure.weights)
    mmd2 = mmd_squared(rule, measure, kernel, self_term)
    rule.report.update(
        mmd2=float(mmd2),
        batch_size=len(rule),
        eps_vio=float(eps_vio),
        eps_nys=float(eps_nys),
        eps_lp=float(rule.report.get("eps_lp", eps_lp)),
        nystrom_term=float(measure.weights @ resid),
        rank=int(r),
        rank_reduced=bool(r < n_tests),
    )
    if constrained:
        rule.report["feasibility"] = q[rule.indices].tolist()
    rule.report["reward"] = alpha[rule.indices].tolist()
    return rule
