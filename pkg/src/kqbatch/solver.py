"""Outer loop: fit the surrogate, lift it to a measure, quantise, query, repeat."""
import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from kqbatch.domain import (
    GMM,
    ContinuousUniform,
    EmpiricalMeasure,
    MixedProduct,
    pool_measure,
    sir,
)
from kqbatch.gp import Dataset, GPPosterior, Kernel, PosteriorKernel, fit_hyperparameters, kernel_quadform
from kqbatch.lifting import ConstraintModel, LiftedTarget, feasibility, ts_empirical
from kqbatch.nystrom import build_basis
from kqbatch.quadrature import AcquisitionConfig, LPSettings, expected_violation, mmd_squared, select_batch

MODES = ("BO-LFI", "BO-TS", "AL", "BQ")
CSV_FIELDS = (
    "iteration", "batch_size", "eps_lp", "eps_vio", "mmd2", "mv", "md",
    "simple_regret", "z_mean", "z_var", "wall_ms",
)
NOISE_VARIANCE = 1e-6

__all__ = [
    "CSV_FIELDS",
    "History",
    "IterationRecord",
    "Problem",
    "SolverConfig",
    "expected_violation",
    "initial_design",
    "integral_estimates",
    "load_config",
    "measure_stats",
    "run",
]


@dataclass
class SolverConfig:
    """Run settings.

    ``eps_lp`` is a fixed tolerance, or ``None`` / ``"adaptive"`` for the
    expected-violation policy. ``lp_mode`` chooses the unconstrained solver.
    ``hyper_noise`` multiplies each fitted hyperparameter by
    ``1 + hyper_noise * U(-0.5, 0.5)``.
    """

    N: int = 20000
    M: int = 500
    n_max: int = 10
    eps_lp: object = None
    lp_mode: str = "exact-recombination"
    delta: float = 0.0
    T: int = 10
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    mode: str = "BO-LFI"
    seed: int = 0
    n_init: int = None
    fit_hyperparameters: bool = True
    restarts: int = 4
    lengthscale: float = 0.25
    hyper_noise: float = 0.0
    ts_candidates: int = 2048
    ts_draws: int = 1024
    gmm_components: int = 10

    def __post_init__(self):
        if isinstance(self.acquisition, dict):
            self.acquisition = AcquisitionConfig(**self.acquisition)
        if self.eps_lp == "adaptive":
            self.eps_lp = None
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not (self.N >= self.n_max >= 1):
            raise ValueError("need N >= n_max >= 1")
        if self.M > self.N:
            raise ValueError("need M <= N")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")

    def to_dict(self):
        doc = asdict(self)
        doc["eps_lp"] = "adaptive" if self.eps_lp is None else self.eps_lp
        return doc


@dataclass
class Problem:
    """Black-box objective (maximised) with optional constraints ``g_l(x) >= 0``."""

    objective: object
    prior: object
    constraints: list = field(default_factory=list)
    x_star: np.ndarray = None
    y_star: float = None
    pool: np.ndarray = None
    name: str = "problem"

    @classmethod
    def minimise(cls, objective, prior, **kwargs):
        """Wrap a minimisation objective by negation."""
        return cls(lambda X: -np.asarray(objective(X), dtype=float), prior, **kwargs)

    def evaluate(self, X):
        Y = np.asarray(self.objective(X), dtype=float).ravel()
        if Y.shape[0] != X.shape[0]:
            raise ValueError("oracle returned the wrong number of values")
        return Y

    def evaluate_constraints(self, X):
        if not self.constraints:
            return np.zeros((X.shape[0], 0))
        return np.stack([np.asarray(g(X), dtype=float).ravel() for g in self.constraints], axis=1)


@dataclass
class IterationRecord:
    iteration: int
    batch_size: int
    eps_lp: float
    eps_vio: float
    mmd2: float
    mv: float
    md: float
    simple_regret: float
    z_mean: float
    z_var: float
    wall_ms: float
    weights: np.ndarray = None
    X: np.ndarray = None
    Y: np.ndarray = None
    G: np.ndarray = None
    violation_rate: float = float("nan")

    def row(self):
        return [getattr(self, k) for k in CSV_FIELDS]


@dataclass
class History:
    records: list = field(default_factory=list)
    X: np.ndarray = None
    Y: np.ndarray = None
    G: np.ndarray = None
    n_init: int = 0
    incumbent: float = float("-inf")
    incumbent_x: np.ndarray = None
    failed: bool = False
    error: str = None

    def __len__(self):
        return len(self.records)

    def to_csv(self, fh=None, include_wall=True):
        """Write the per-iteration CSV; returns the text when ``fh`` is None."""
        out = io.StringIO() if fh is None else fh
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for rec in self.records:
            row = [_fmt(v) for v in rec.row()]
            if not include_wall:
                row[-1] = ""
            writer.writerow(row)
        return out.getvalue() if fh is None else None

    def summary(self):
        return {
            "iterations": len(self.records),
            "n_init": self.n_init,
            "n_queries": 0 if self.Y is None else int(self.Y.shape[0]),
            "incumbent": _num(self.incumbent),
            "incumbent_x": None if self.incumbent_x is None else np.asarray(self.incumbent_x).tolist(),
            "final_simple_regret": _num(self.records[-1].simple_regret) if self.records else None,
            "batch_sizes": [r.batch_size for r in self.records],
            "violation_rates": [_num(r.violation_rate) for r in self.records],
            "failed": self.failed,
            "error": self.error,
        }

    def write(self, directory, stem="history"):
        from pathlib import Path

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / f"{stem}.csv", "w", newline="") as fh:
            self.to_csv(fh)
        (d / f"{stem}.json").write_text(json.dumps(self.summary(), indent=2))


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return repr(v) if np.isfinite(v) else "nan"


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def measure_stats(measure, x_star=None):
    """``(MD, MV)``: distance of the barycentre to ``x_star`` and the mean variance."""
    bary = measure.barycentre()
    mv = float(measure.weights @ np.sum((measure.points - bary) ** 2, axis=1))
    md = None if x_star is None else float(np.linalg.norm(bary - np.asarray(x_star, dtype=float)))
    return md, mv


def integral_estimates(gp, measure, rule=None, embed=None):
    """Mean and variance of ``Z = int f dpi`` under the posterior.

    With a ``rule`` the mean is the rule's weighted posterior mean and the
    variance is its squared discrepancy to ``measure`` under ``C_t``. Without
    one the full measure is used, so the variance is ``wN^T C_t wN``.
    """
    kern = PosteriorKernel(gp, embed)
    Z = measure.points if embed is None else embed(measure.points)
    if rule is None:
        mean = float(measure.weights @ gp.mean(Z))
        var = kernel_quadform(kern, measure.points, measure.weights)
        return mean, max(var, 0.0)
    Zn = rule.points if embed is None else embed(rule.points)
    return float(rule.weights @ gp.mean(Zn)), mmd_squared(rule, measure, kern)


# ---------------------------------------------------------------------------
# loop pieces shared with the baseline policies
# ---------------------------------------------------------------------------

def seeds_for(seed):
    """Independent generators for the initial design and the loop."""
    ss = np.random.SeedSequence(seed)
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def initial_design(problem, config, rng=None):
    """``n0 = max(10, d + 2)`` prior draws (or pool rows), identical across policies per seed."""
    rng = rng if rng is not None else seeds_for(config.seed)[0]
    d = problem.prior.dim
    n0 = config.n_init if config.n_init is not None else max(10, d + 2)
    if problem.pool is not None:
        pool = np.asarray(problem.pool, dtype=float)
        return pool[rng.choice(pool.shape[0], size=min(n0, pool.shape[0]), replace=False)]
    return problem.prior.sample(n0, rng)


class Surrogate:
    """Objective and constraint GPs with frozen output standardisation."""

    def __init__(self, problem, config, X0, Y0, G0):
        self.embed = problem.prior.embed
        self.config = config
        Z = self.embed(X0)
        probe = self.embed(problem.prior.sample(512, np.random.default_rng(0)))
        width = np.ptp(probe, axis=0)
        self.width = np.where(width > 0, width, 1.0)
        self.y_shift, self.y_scale = _standardiser(Y0)
        self.g_std = [_standardiser(G0[:, l]) for l in range(G0.shape[1])]
        self.kernel = Kernel(config.lengthscale * self.width, 1.0)
        self.g_kernels = [Kernel(config.lengthscale * self.width, 1.0) for _ in self.g_std]
        self.Z, self.Y, self.G = Z, Y0, G0

    def append(self, X, Y, G):
        self.Z = np.vstack([self.Z, self.embed(X)])
        self.Y = np.concatenate([self.Y, Y])
        self.G = np.vstack([self.G, G])

    def _fit(self, kernel, y, rng, prior_mean=0.0):
        data = Dataset(self.Z, y, NOISE_VARIANCE)
        if self.config.fit_hyperparameters:
            fit = fit_hyperparameters(
                data, kernel, self.config.restarts, prior_mean=prior_mean,
                domain_width=self.width, seed=int(rng.integers(2**31)),
            )
            kernel = fit.kernel
        return kernel, data

    def fit(self, rng):
        self.kernel, data = self._fit(self.kernel, (self.Y - self.y_shift) / self.y_scale, rng)
        kernel = self.kernel
        if self.config.hyper_noise > 0:
            kernel = perturb_kernel(kernel, self.config.hyper_noise, rng)
        gp = GPPosterior(kernel, data)
        cgps = []
        for l, (shift, scale) in enumerate(self.g_std):
            # scale only: the feasibility threshold g = 0 must stay at zero
            self.g_kernels[l], gdata = self._fit(self.g_kernels[l], self.G[:, l] / scale, rng, shift / scale)
            cgps.append(GPPosterior(self.g_kernels[l], gdata, shift / scale))
        return gp, ConstraintModel(cgps)

    def to_output(self, values):
        return self.y_shift + self.y_scale * np.asarray(values)


def _standardiser(y):
    y = np.asarray(y, dtype=float)
    sd = float(np.std(y))
    return float(np.mean(y)), (sd if sd > 0 else 1.0)


def perturb_kernel(kernel, sigma, rng):
    """``theta <- theta * (1 + sigma * U(-0.5, 0.5))`` for every hyperparameter."""
    f = 1.0 + sigma * rng.uniform(-0.5, 0.5, size=kernel.dim + 1)
    return Kernel(kernel.lengthscales * f[:-1], kernel.outputscale * f[-1])


def proposal_family(prior, components):
    """Refit family for SIR: a box-truncated GMM in place of uniform continuous parts."""
    if isinstance(prior, ContinuousUniform):
        return GMM.initial(components, prior.lower, prior.upper)
    if isinstance(prior, MixedProduct) and isinstance(prior.continuous_part, ContinuousUniform):
        c = prior.continuous_part
        return MixedProduct(GMM.initial(components, c.lower, c.upper), prior.discrete_part)
    return prior


def best_observed(Y, G):
    """Best objective value among feasible rows (all rows when unconstrained)."""
    ok = np.all(G >= 0, axis=1) if G.shape[1] else np.ones(Y.shape[0], dtype=bool)
    if not ok.any():
        return float("-inf"), None
    i = np.flatnonzero(ok)[np.argmax(Y[ok])]
    return float(Y[i]), i


def simple_regret(problem, Y, G):
    best, _ = best_observed(Y, G)
    if problem.y_star is None or not np.isfinite(best):
        return float("nan")
    return float(problem.y_star - best)


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

def _target_measure(problem, config, gp, cmodel, rng, embed, queried, fixed):
    """Empirical target measure for the iteration's mode."""
    prior = problem.prior
    if config.mode == "BQ":
        return fixed
    if config.mode == "BO-TS":
        if problem.pool is not None:
            cand = pool_measure(problem.pool, None, queried).points
        else:
            cand = prior.sample(config.ts_candidates, rng)
        if cand.shape[0] > config.ts_candidates:
            cand = cand[rng.choice(cand.shape[0], config.ts_candidates, replace=False)]
        measure = ts_empirical(gp, cand, config.ts_draws, rng, embed=embed)
        return _reweight_feasible(measure, cmodel, embed)
    mode = "LFI" if config.mode == "BO-LFI" else "AL-uniform"
    target = LiftedTarget(
        mode, gp=gp, constraints=cmodel if len(cmodel) else None,
        base_log_density=prior.log_density, embed=embed,
    )
    if problem.pool is not None:
        return pool_measure(problem.pool, target.log_pi, queried)
    measure, _ = sir(prior, target.log_pi, config.N, rng, refit_family=proposal_family(prior, config.gmm_components))
    return measure


def _reweight_feasible(measure, cmodel, embed):
    if not len(cmodel):
        return measure
    w = measure.weights * feasibility(cmodel, measure.points, embed)
    return measure if w.sum() <= 0 else EmpiricalMeasure(measure.points, w / w.sum())


def run(problem, config):
    """Run the batch loop until the measure's mean variance drops to ``delta`` or ``T`` rounds pass.

    Returns
    -------
    History
        Partial (``failed=True``) when an oracle raises.
    """
    init_rng, rng = seeds_for(config.seed)
    hist = History()
    X = initial_design(problem, config, init_rng)
    try:
        Y = problem.evaluate(X)
        G = problem.evaluate_constraints(X)
    except Exception as exc:  # noqa: BLE001 - oracle failures are reported, not raised
        hist.failed, hist.error = True, f"{type(exc).__name__}: {exc}"
        return hist
    hist.n_init = X.shape[0]
    sur = Surrogate(problem, config, X, Y, G)
    embed = problem.prior.embed
    fixed = None
    if config.mode == "BQ":
        fixed = EmpiricalMeasure.uniform(problem.prior.sample(config.N, rng)) if problem.pool is None \
            else EmpiricalMeasure.uniform(np.asarray(problem.pool, dtype=float))
    settings_kind = "tolerance-LP" if config.lp_mode == "tolerance-LP" else "exact-recombination"
    acquisition = AcquisitionConfig() if config.mode == "BQ" else config.acquisition

    for t in range(1, config.T + 1):
        tic = time.perf_counter()
        gp, cmodel = sur.fit(rng)
        measure = _target_measure(problem, config, gp, cmodel, rng, embed, X, fixed)
        n = min(config.n_max, len(measure))
        constrained = len(cmodel) > 0
        n_tests = max(n - 2 if constrained else n - 1, 1)
        kern = PosteriorKernel(gp, embed)
        M = min(max(config.M, n_tests), len(measure))
        basis = build_basis(kern, measure, M, min(n_tests, M), rng)
        settings = LPSettings(config.eps_lp, max(n, 3) if constrained else n, settings_kind)
        rule = select_batch(gp, measure, basis, acquisition, cmodel if constrained else None, settings, embed=embed)

        Xb = rule.points
        try:
            Yb = problem.evaluate(Xb)
            Gb = problem.evaluate_constraints(Xb)
        except Exception as exc:  # noqa: BLE001
            hist.failed, hist.error = True, f"{type(exc).__name__}: {exc}"
            break
        X = np.vstack([X, Xb])
        Y = np.concatenate([Y, Yb])
        G = np.vstack([G, Gb])
        sur.append(Xb, Yb, Gb)

        # estimates after conditioning on the new batch with the same hyperparameters
        post = GPPosterior(gp.kernel, Dataset(sur.Z, (sur.Y - sur.y_shift) / sur.y_scale, NOISE_VARIANCE))
        z_mean, z_var = integral_estimates(post, measure, None, embed)
        z_mean = float(sur.to_output(z_mean))
        z_var = float(z_var * sur.y_scale**2)
        md, mv = measure_stats(measure, problem.x_star)
        viol = float(np.mean(np.any(Gb < 0, axis=1))) if Gb.shape[1] else 0.0
        rec = IterationRecord(
            iteration=t,
            batch_size=len(rule),
            eps_lp=rule.report["eps_lp"],
            eps_vio=rule.report["eps_vio"],
            mmd2=rule.report["mmd2"] * sur.y_scale**2,
            mv=mv,
            md=float("nan") if md is None else md,
            simple_regret=simple_regret(problem, Y, G),
            z_mean=z_mean,
            z_var=z_var,
            wall_ms=1e3 * (time.perf_counter() - tic),
            weights=rule.weights,
            X=Xb,
            Y=Yb,
            G=Gb,
            violation_rate=viol,
        )
        hist.records.append(rec)
        if mv <= config.delta:
            break

    hist.X, hist.Y, hist.G = X, Y, G
    best, i = best_observed(Y, G)
    hist.incumbent = best
    hist.incumbent_x = None if i is None else X[i]
    return hist


# ---------------------------------------------------------------------------
# JSON configuration
# ---------------------------------------------------------------------------

def load_config(doc):
    """``(Problem, SolverConfig)`` from a JSON document, path or dict.

    The ``function`` key names a registered test function; every other key
    is a :class:`SolverConfig` field.
    """
    if isinstance(doc, (str, bytes)) and not str(doc).lstrip().startswith("{"):
        with open(doc) as fh:
            doc = json.load(fh)
    elif isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    doc = dict(doc)
    from kqbatch.bench.functions import make_problem

    problem = make_problem(doc.pop("function"))
    return problem, SolverConfig(**doc)
