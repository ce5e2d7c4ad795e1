import numpy as np
import pytest

from kqbatch import _accel
from kqbatch.gp import Dataset, GPPosterior, Kernel

BACKENDS = ["numba", "numpy"] if _accel.HAVE_NUMBA else ["numpy"]


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per kernel backend; the flag is read at call time."""
    monkeypatch.setenv(_accel.ENV_FLAG, "1" if request.param == "numpy" else "0")
    assert _accel.backend() is (_accel.numpy_impl if request.param == "numpy" else _accel.numba_impl)
    return request.param


def toy_gp(seed=0, t=8, d=2, lengthscale=0.3, noise=1e-6, lower=0.0, upper=1.0):
    """Posterior of a smooth function conditioned on ``t`` uniform points."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(lower, upper, size=(t, d))
    Y = np.sin(3.0 * X).sum(axis=1)
    return GPPosterior(Kernel(np.full(d, lengthscale), 1.0), Dataset(X, Y, noise))


def weighted_measure(seed, N=300, d=2, lower=0.0, upper=1.0):
    from kqbatch.domain import EmpiricalMeasure

    rng = np.random.default_rng(seed)
    w = rng.random(N)
    return EmpiricalMeasure(rng.uniform(lower, upper, (N, d)), w / w.sum())


def constraint_model(seed, count=1, t=8):
    """Constraint GPs whose feasible region covers part of the unit square."""
    from kqbatch.lifting import ConstraintModel

    gps = []
    for l in range(count):
        rng = np.random.default_rng(1000 * seed + l)
        X = rng.random((t, 2))
        c = rng.random(2)
        G = 0.3 - np.sum((X - c) ** 2, axis=1)
        gps.append(GPPosterior(Kernel([0.3, 0.3], 0.2), Dataset(X, G, 1e-4)))
    return ConstraintModel(gps)


def survival_check(seed, n_funcs=20, draws=10_000, n_max=10, N=300):
    """Monte-Carlo reward and RKHS-error checks of a constrained batch under Bernoulli survival.

    Returns (reward gap in standard errors, reward floor holds, worst ratio of the
    mean absolute error to its bound over ``n_funcs`` random kernel combinations).
    """
    from kqbatch.gp import PosteriorKernel, kernel_diag
    from kqbatch.quadrature import AcquisitionConfig, LPSettings, select_batch
    from kqbatch.quadrature.select import reward
    from kqbatch.lifting import feasibility

    gp, m, cm = toy_gp(seed), weighted_measure(seed, N=N), constraint_model(seed)
    acq = AcquisitionConfig("ucb")
    rule = select_batch(gp, m, acquisition=acq, constraints=cm, settings=LPSettings(n_max=n_max),
                        n_landmarks=N // 2, seed=seed)
    rep = rule.report
    q = np.asarray(rep["feasibility"])
    alpha = np.asarray(rep["reward"])
    rng = np.random.default_rng(seed + 12345)
    Wt = (rng.random((draws, len(rule))) < q) * rule.weights  # unnormalised surviving weights

    r = Wt @ alpha
    # exact standard error of the Monte-Carlo mean; the sample estimate collapses when q is near 1
    se = np.sqrt(np.sum((rule.weights * alpha) ** 2 * q * (1 - q)) / draws)
    target = rule.weights @ (alpha * q)
    gap = abs(r.mean() - target) / se if se > 0 else abs(r.mean() - target) / (1e-12 * max(1.0, abs(target)))
    full = reward(gp, acq, m.points) * feasibility(cm, m.points)
    floor_ok = r.mean() >= m.weights @ full - 3 * se

    kern = PosteriorKernel(gp)
    k_max = np.sqrt(kernel_diag(kern, m.points).max())
    coef = rep["eps_vio"] * k_max + 2 * rep["eps_nys"] + rep["eps_lp"]
    worst = -np.inf
    for _ in range(n_funcs):
        centres = m.points[rng.choice(len(m), 5, replace=False)]
        a = rng.standard_normal(5)
        norm = np.sqrt(max(a @ kern(centres, centres) @ a, 0.0))
        f_rule = kern(rule.points, centres) @ a
        f_full = m.weights @ (kern(m.points, centres) @ a)
        err = np.abs(Wt @ f_rule - f_full)
        worst = max(worst, err.mean() / (coef * norm))
    return gap, floor_ok, worst


ACCEPTANCE = []


def record_criterion(number, title, ok, detail, seconds):
    ACCEPTANCE.append((number, title, bool(ok), detail, seconds))
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail, seconds in sorted(ACCEPTANCE):
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}  {title}: {detail} ({seconds:.1f} s)")
