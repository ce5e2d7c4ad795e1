"""Synthetic benchmark objectives in maximisation convention."""
from dataclasses import dataclass, field

import numpy as np

from kqbatch.domain import Bernoulli, Categorical, ContinuousUniform, MixedProduct

BRANIN_DOMAIN = np.array([[-5.0, 10.0], [0.0, 15.0]])
BRANIN_BOX = (-3.0, 2.0)
ROSENBROCK_LEVELS = np.array([-4.0, 1.0, 6.0, 11.0])

HARTMANN_A = np.array([
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
])
HARTMANN_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])
HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN_XSTAR = np.array([
    0.20168951162729706, 0.15001068824735317, 0.4768739686826099,
    0.27533242897420984, 0.3116516125650092, 0.6573005311304188,
])
HARTMANN_YSTAR = 3.3223680114155134
SHEKEL_XSTAR = np.array([4.000746860776147, 3.9995094722305615, 4.000746860776147, 3.9995094722305615])
SHEKEL_YSTAR = 10.536443153483505

SHEKEL_C = np.array([
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
    [4.0, 1.0, 8.0, 6.0, 3.0, 2.0, 5.0, 8.0, 6.0, 7.0],
    [4.0, 1.0, 8.0, 6.0, 7.0, 9.0, 3.0, 1.0, 2.0, 3.6],
])
SHEKEL_BETA = 0.1 * np.array([1, 2, 2, 4, 4, 6, 3, 7, 5, 5], dtype=float)


def _pts(X, d):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None]
    if X.shape[1] != d:
        raise ValueError(f"expected {d} columns, got {X.shape[1]}")
    return X


# ---------------------------------------------------------------------------
# raw objectives (standard minimisation forms unless noted)
# ---------------------------------------------------------------------------

def branin_raw(x1, x2):
    a, b, c = 1.0, 5.1 / (4 * np.pi**2), 5.0 / np.pi
    r, s, t = 6.0, 10.0, 1.0 / (8 * np.pi)
    return a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1 - t) * np.cos(x1) + s


def branin_unscale(U):
    """Map ``[-3, 2]^2`` affinely onto the classical Branin box."""
    lo, hi = BRANIN_BOX
    s = (np.asarray(U, dtype=float) - lo) / (hi - lo)
    return BRANIN_DOMAIN[:, 0] + s * (BRANIN_DOMAIN[:, 1] - BRANIN_DOMAIN[:, 0])


def branin_rescale(X):
    lo, hi = BRANIN_BOX
    s = (np.asarray(X, dtype=float) - BRANIN_DOMAIN[:, 0]) / (BRANIN_DOMAIN[:, 1] - BRANIN_DOMAIN[:, 0])
    return lo + s * (hi - lo)


def branin(U):
    X = branin_unscale(_pts(U, 2))
    return -branin_raw(X[:, 0], X[:, 1])


def ackley_raw(X, a=20.0, b=0.2, c=2 * np.pi):
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    r = np.sqrt(np.sum(X**2, axis=1) / d)
    return -a * np.exp(-b * r) - np.exp(np.sum(np.cos(c * X), axis=1) / d) + a + np.e


def ackley(X, d):
    return -ackley_raw(_pts(X, d))


def ackley_mixed(X, n_cont=3, n_bin=20):
    X = _pts(X, n_cont + n_bin)
    B = X[:, n_cont:]
    if np.any((B != 0) & (B != 1)):
        raise ValueError("binary coordinates must be 0 or 1")
    return -ackley_raw(X)


def rosenbrock_raw(X):
    return np.sum(100.0 * (X[:, 1:] - X[:, :-1] ** 2) ** 2 + (1.0 - X[:, :-1]) ** 2, axis=1)


def rosenbrock_mixed(X, n_cont=1, n_cat=6):
    X = _pts(X, n_cont + n_cat)
    codes = X[:, n_cont:]
    if np.any((codes < 0) | (codes >= ROSENBROCK_LEVELS.size) | (codes != np.round(codes))):
        raise ValueError(f"categorical codes must be integers in [0, {ROSENBROCK_LEVELS.size - 1}]")
    Z = np.hstack([X[:, :n_cont], ROSENBROCK_LEVELS[codes.astype(int)]])
    return -rosenbrock_raw(Z)


def hartmann6(X):
    X = _pts(X, 6)
    inner = np.einsum("ij,nij->ni", HARTMANN_A, (X[:, None, :] - HARTMANN_P[None]) ** 2)
    return np.exp(-inner) @ HARTMANN_ALPHA


def shekel(X):
    X = _pts(X, 4)
    d2 = ((X[:, :, None] - SHEKEL_C[None]) ** 2).sum(axis=1)
    return np.sum(1.0 / (d2 + SHEKEL_BETA), axis=1)


# ---------------------------------------------------------------------------
# constraints g(x) >= 0 for the constrained variants
# ---------------------------------------------------------------------------

def branin_disk(U):
    U = _pts(U, 2)
    return 2.25 - (U[:, 0] + 0.5) ** 2 - (U[:, 1] + 1.0) ** 2


def branin_halfplane(U):
    U = _pts(U, 2)
    return 1.0 + U[:, 0] - 0.5 * U[:, 1]


def ackley_ball(X, n_cont=3):
    X = np.asarray(X, dtype=float)
    return 1.5 - np.sum(X[:, :n_cont] ** 2, axis=1)


def ackley_budget(X, n_cont=3):
    X = np.asarray(X, dtype=float)
    return 10.0 - np.sum(X[:, n_cont:], axis=1)


def hartmann_sum(X):
    return 2.5 - np.sum(_pts(X, 6), axis=1)


def hartmann_ball(X):
    return 0.5 - np.sum((_pts(X, 6) - 0.3) ** 2, axis=1)


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TestFunction:
    """Objective with its domain prior, variable types and known optimum."""

    name: str
    evaluator: object
    prior: object
    types: tuple
    x_star: np.ndarray = None
    y_star: float = None
    constraints: tuple = field(default_factory=tuple)
    description: str = ""

    __test__ = False  # not a pytest class

    @property
    def dim(self):
        return len(self.types)

    def __call__(self, X):
        return self.evaluator(X)

    def problem(self):
        from kqbatch.solver import Problem

        return Problem(
            self.evaluator, self.prior, list(self.constraints),
            None if self.x_star is None else np.asarray(self.x_star), self.y_star, name=self.name,
        )


_BRANIN_X = branin_rescale(np.array([np.pi, 2.275]))
_BRANIN_Y = -0.39788735772973816


def _registry():
    cont = lambda lo, hi, d: ContinuousUniform(np.full(d, lo), np.full(d, hi))  # noqa: E731
    branin_prior = cont(-3.0, 2.0, 2)
    ackley_prior = MixedProduct(cont(-1.0, 1.0, 3), Bernoulli(np.full(20, 0.5)))
    ackley_types = ("cont",) * 3 + ("bin",) * 20
    fns = [
        TestFunction("branin", branin, branin_prior, ("cont", "cont"), _BRANIN_X, _BRANIN_Y,
                     description="Branin-Hoo rescaled to [-3, 2]^2, negated"),
        TestFunction("ackley", ackley_mixed, ackley_prior, ackley_types, np.zeros(23), 0.0,
                     description="Ackley, 3 continuous in [-1, 1] + 20 binary, negated"),
        TestFunction("ackley2", lambda X: ackley(X, 2), cont(-1.0, 1.0, 2), ("cont", "cont"), np.zeros(2), 0.0,
                     description="Ackley 2-d continuous on [-1, 1]^2, negated"),
        TestFunction("rosenbrock", rosenbrock_mixed,
                     MixedProduct(cont(-4.0, 11.0, 1), Categorical.uniform([4] * 6)),
                     ("cont",) + ("cat4",) * 6, np.array([1.0] + [1.0] * 6), 0.0,
                     description="Rosenbrock, 1 continuous in [-4, 11] + 6 categorical over {-4, 1, 6, 11}, negated"),
        TestFunction("hartmann6", hartmann6, cont(0.0, 1.0, 6), ("cont",) * 6, HARTMANN_XSTAR, HARTMANN_YSTAR,
                     description="Hartmann-6 on [0, 1]^6"),
        TestFunction("shekel", shekel, cont(0.0, 10.0, 4), ("cont",) * 4, SHEKEL_XSTAR, SHEKEL_YSTAR,
                     description="Shekel (m = 10) on [0, 10]^4"),
        TestFunction("branin-c", branin, branin_prior, ("cont", "cont"), _BRANIN_X, _BRANIN_Y,
                     (branin_disk, branin_halfplane), "Branin with a disk and a half-plane constraint"),
        TestFunction("ackley-c", ackley_mixed, ackley_prior, ackley_types, np.zeros(23), 0.0,
                     (ackley_ball, ackley_budget), "mixed Ackley with a ball and a binary-budget constraint"),
        TestFunction("hartmann6-c", hartmann6, cont(0.0, 1.0, 6), ("cont",) * 6, HARTMANN_XSTAR, HARTMANN_YSTAR,
                     (hartmann_sum, hartmann_ball), "Hartmann-6 with a sum and a ball constraint"),
    ]
    return {f.name: f for f in fns}


REGISTRY = _registry()


def get(name):
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown test function {name!r}; known: {sorted(REGISTRY)}") from None


def eval_testfn(name, points):
    """Evaluate a registered function (maximisation convention)."""
    return np.asarray(get(name)(points), dtype=float)


def make_problem(name):
    return get(name).problem()
