"""Asymptotic covariance, confidence intervals and the cubic-fit r-squared."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .errors import SingularMatrixError
from .params import BasisMatrix
from .scores import _project
from .smoothing import ConditionalDensityFit, NWRegressor

__all__ = [
    "InferenceReport",
    "sandwich_vcov",
    "efficient_vcov",
    "kronecker_information",
    "confidence_intervals",
    "wald_pvalues",
    "cubic_r2",
]

_COND_LIMIT = 1e10


def _sym(V):
    return (V + V.T) / 2


def _second_moment(S):
    S = np.asarray(S, dtype=float)
    return S.T @ S / S.shape[0]


def sandwich_vcov(score_matrix, jacobian) -> NDArray[np.float64]:
    """``A^{-1} B A^{-T}`` with ``A`` the mean-score Jacobian and ``B`` the mean outer power."""
    A = np.atleast_2d(np.asarray(jacobian, dtype=float))
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularMatrixError(f"score Jacobian is singular (condition number {cond:.3e})", cond)
    B = _second_moment(np.asarray(score_matrix, dtype=float).reshape(-1, A.shape[0]))
    Ainv = np.linalg.inv(A)
    return _sym(Ainv @ B @ Ainv.T)


def efficient_vcov(score_matrix) -> NDArray[np.float64]:
    """Inverse of the mean outer power of the efficient score rows."""
    S = np.asarray(score_matrix, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    M = _second_moment(S)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularMatrixError(
            f"score second moment is singular (condition number {cond:.3e})", cond
        )
    return _sym(np.linalg.inv(M))


def kronecker_information(Y, Z, B: BasisMatrix, fit, Ex: NWRegressor, h=None) -> NDArray[np.float64]:
    """Information as the average Kronecker product of two conditional second moments.

    For each observation, ``E[g g' | u] (x) E[r_l r_l' | u]`` is estimated by
    Nadaraya-Watson regression of the per-observation outer products on
    ``u``; ``g`` is the log-density gradient and ``r_l`` the lower block of
    the covariate residual ``x - E(x|u)``.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    Z = np.asarray(Z, dtype=float)
    U = _project(Z, B)
    n, d = U.shape
    Ez, trimmed = Ex.evaluate(U)
    if isinstance(fit, ConditionalDensityFit):
        dens, grad, _ = fit.evaluate(Y, U)
        g = grad / dens[:, None]
    else:
        g = np.asarray(fit.log_gradient(Y, U), dtype=float).reshape(n, d)
    r = (Z - Ez)[:, d:]
    q = r.shape[1]
    keep = ~trimmed
    G2 = np.einsum("nk,nl->nkl", g, g).reshape(n, -1)
    R2 = np.einsum("nk,nl->nkl", r, r).reshape(n, -1)
    h = Ex.h if h is None else h
    both = np.hstack([G2, R2])
    reg = NWRegressor(U[keep], both[keep], h, Ex.kernel, Ex.trim)
    cond = reg(U[keep])
    EG = cond[:, : d * d].reshape(-1, d, d)
    ER = cond[:, d * d :].reshape(-1, q, q)
    info = np.einsum("nab,ncd->nacbd", EG, ER).reshape(-1, d * q, d * q)
    return _sym(info.sum(axis=0) / n)


@dataclass
class InferenceReport:
    estimate: NDArray[np.float64]
    vcov: NDArray[np.float64]
    se: NDArray[np.float64]
    ci_lower: NDArray[np.float64]
    ci_upper: NDArray[np.float64]
    level: float
    method: str = "sandwich"

    @property
    def pvalues(self) -> NDArray[np.float64]:
        return wald_pvalues(self.estimate, self.se)


def confidence_intervals(beta_hat, vcov, n: int, level: float = 0.95, method: str = "sandwich") -> InferenceReport:
    """Normal-theory intervals ``beta_j +- z sqrt(vcov_jj / n)``."""
    if not 0.0 <= level < 1.0:
        raise ValueError("level must lie in [0, 1)")
    beta_hat = np.asarray(beta_hat, dtype=float).ravel()
    vcov = np.atleast_2d(np.asarray(vcov, dtype=float))
    se = np.sqrt(np.clip(np.diag(vcov), 0.0, None) / n)
    z = stats.norm.ppf(0.5 + level / 2)
    return InferenceReport(beta_hat, vcov, se, beta_hat - z * se, beta_hat + z * se, level, method)


def wald_pvalues(estimate, se) -> NDArray[np.float64]:
    """Two-sided normal p-values for zero coefficients."""
    estimate = np.asarray(estimate, dtype=float)
    se = np.asarray(se, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.abs(estimate / se)
    return 2.0 * stats.norm.sf(z)


def cubic_r2(Y, index) -> float:
    """Adjusted r-squared of the least squares fit of Y on 1, t, t^2, t^3."""
    Y = np.asarray(Y, dtype=float).ravel()
    t = np.asarray(index, dtype=float).ravel()
    n = Y.size
    if n < 5:
        raise ValueError("need at least 5 observations")
    ts = (t - t.mean()) / (t.std() or 1.0)
    D = np.column_stack([np.ones(n), ts, ts**2, ts**3])
    if np.linalg.matrix_rank(D) < 4:
        raise ValueError("index takes too few distinct values for a cubic fit")
    coef, *_ = np.linalg.lstsq(D, Y, rcond=None)
    rss = float(np.sum((Y - D @ coef) ** 2))
    tss = float(np.sum((Y - Y.mean()) ** 2))
    if tss == 0:
        return 1.0
    r2 = 1.0 - rss / tss
    return 1.0 - (1.0 - r2) * (n - 1) / (n - 4)
