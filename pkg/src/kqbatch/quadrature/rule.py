"""Quadrature rules and their discrepancy against a parent measure."""
from dataclasses import dataclass, field

import numpy as np

from kqbatch.gp import kernel_quadform


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Convex weights on a subset of the rows of a parent measure.

    Attributes
    ----------
    points : ndarray, shape (n, d)
    weights : ndarray, shape (n,)
        Strictly positive, summing to one.
    indices : ndarray of int, shape (n,)
        Row indices into the parent measure.
    report : dict
        Solver diagnostics (achieved tolerances, objective, slacks, ...).
    """

    points: np.ndarray
    weights: np.ndarray
    indices: np.ndarray
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.size == 0 or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise ValueError("rule weights must be positive and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=int))

    def __len__(self):
        return self.weights.shape[0]

    @classmethod
    def from_parent(cls, measure, w, report=None, prune=0.0):
        """Build from a full-length weight vector, dropping entries ``<= prune``."""
        w = np.asarray(w, dtype=float)
        keep = np.flatnonzero(w > prune)
        wk = w[keep] / w[keep].sum()
        return cls(measure.points[keep], wk, keep, dict(report or {}))

    def merged(self):
        """Identical rows merged, keeping the lowest parent index of each group."""
        uniq, first, inv = np.unique(self.points, axis=0, return_index=True, return_inverse=True)
        if uniq.shape[0] == len(self):
            return self
        inv = np.ravel(inv)
        w = np.bincount(inv, weights=self.weights, minlength=uniq.shape[0])
        idx = np.array([self.indices[inv == g].min() for g in range(uniq.shape[0])])
        order = np.argsort(idx)
        return QuadratureRule(uniq[order], w[order] / w.sum(), idx[order], dict(self.report))

    def integrate(self, values):
        return float(self.weights @ np.asarray(values, dtype=float))


def mmd_squared_raw(rule, measure, kernel, self_term=None):
    """Unclamped quadratic form; ``self_term`` caches ``wN^T K wN``."""
    Xn, wn = rule.points, rule.weights
    XN, wN = measure.points, measure.weights
    a = kernel_quadform(kernel, Xn, wn)
    b = kernel_quadform(kernel, Xn, wn, XN, wN)
    c = kernel_quadform(kernel, XN, wN) if self_term is None else float(self_term)
    return a - 2.0 * b + c


def mmd_squared(rule, measure, kernel, self_term=None):
    """Squared maximum mean discrepancy between ``rule`` and ``measure``, clamped at 0."""
    return max(mmd_squared_raw(rule, measure, kernel, self_term), 0.0)


def wce(rule, measure, kernel, self_term=None):
    """Worst-case integration error over the unit ball, ``sqrt(mmd_squared)``."""
    return float(np.sqrt(mmd_squared(rule, measure, kernel, self_term)))
