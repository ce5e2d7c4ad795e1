"""Batch Bayesian optimisation and active learning via kernel quadrature."""
from kqbatch.domain import EmpiricalMeasure, sir
from kqbatch.gp import Dataset, GPPosterior, Kernel, fit_hyperparameters
from kqbatch.nystrom import build_basis, residual_diagonal, test_functions
from kqbatch.quadrature import (
    AcquisitionConfig,
    LPSettings,
    QuadratureRule,
    mmd_squared,
    recombination,
    select_batch,
    solve_lp,
)

__version__ = "0.1.0"
