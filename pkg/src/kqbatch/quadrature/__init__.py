"""Kernel quadrature solvers used for batch selection."""
from kqbatch.quadrature.lp import LPError, simplex
from kqbatch.quadrature.recombination import caratheodory, recombination
from kqbatch.quadrature.rule import QuadratureRule, mmd_squared, mmd_squared_raw, wce
from kqbatch.quadrature.select import (
    AcquisitionConfig,
    LPSettings,
    expected_violation,
    reward,
    select_batch,
    solve_lp,
)

__all__ = [
    "AcquisitionConfig",
    "LPError",
    "LPSettings",
    "QuadratureRule",
    "caratheodory",
    "expected_violation",
    "mmd_squared",
    "mmd_squared_raw",
    "recombination",
    "reward",
    "select_batch",
    "simplex",
    "solve_lp",
    "wce",
]
