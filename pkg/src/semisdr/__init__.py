"""Semiparametric efficient estimation of the central subspace."""

from .baselines import dr_estimate, sir_estimate
from .estimators import fit, fit_working
from .params import (
    BasisMatrix,
    Standardizer,
    align_standardized,
    align_to_reference,
    backtransform_basis,
    standardize,
    subspace_distance,
    unvecl,
    vecl,
)
from .simulation import get_scenario, make_example1, make_example2, make_example3, run_monte_carlo
from .solver import FitResult, solve_score

__version__ = "0.1.0"
