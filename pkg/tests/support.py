"""Shared fixtures for building data at a scenario's true basis."""

import numpy as np

from semisdr.params import BasisMatrix, normalize_upper, standardize
from semisdr.simulation import get_scenario


def at_truth(name, n, seed):
    """Standardized sample and the true basis on the working scale."""
    sc = get_scenario(name)
    X, Y = sc.sample(n, np.random.default_rng(seed))
    Z, S = standardize(X)
    B = BasisMatrix.from_matrix(normalize_upper(S.dewhitener @ sc.beta_true))
    return sc, Y, Z, S, B


def z_scores(R):
    """Column means of ``R`` divided by their standard errors."""
    R = np.asarray(R, dtype=float)
    return R.mean(axis=0) / (R.std(axis=0, ddof=1) / np.sqrt(R.shape[0]))
