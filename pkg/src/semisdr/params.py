"""Basis parameterization of the central subspace and covariate standardization.

A subspace of dimension ``d`` in ``R^p`` is represented by the unique basis
whose upper ``d x d`` block is the identity.  The free parameters are the
lower ``(p - d) x d`` block, flattened column-major (``vecl``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import DegenerateDesignError, DimensionError, PivotError, RankError

__all__ = [
    "BasisMatrix",
    "Standardizer",
    "vecl",
    "unvecl",
    "standardize",
    "backtransform_basis",
    "align_to_reference",
    "align_standardized",
    "align_by_length",
    "subspace_distance",
    "projector",
    "normalize_upper",
]

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class BasisMatrix:
    """Basis ``(I_d; lower)`` of a ``d``-dimensional subspace of ``R^p``."""

    p: int
    d: int
    lower: NDArray[np.float64]

    def __post_init__(self) -> None:
        if not (1 <= self.d < self.p):
            raise DimensionError(f"need 1 <= d < p, got p={self.p}, d={self.d}")
        lower = np.array(self.lower, dtype=float).reshape(self.p - self.d, self.d)
        lower.setflags(write=False)
        object.__setattr__(self, "lower", lower)

    @property
    def n_params(self) -> int:
        return (self.p - self.d) * self.d

    @property
    def full(self) -> NDArray[np.float64]:
        return np.vstack([np.eye(self.d), self.lower])

    @classmethod
    def from_matrix(cls, B: NDArray[np.float64]) -> "BasisMatrix":
        """Renormalize an arbitrary ``p x d`` matrix to identity upper block."""
        B = normalize_upper(np.asarray(B, dtype=float))
        p, d = B.shape
        return cls(p, d, B[d:])


def vecl(B: BasisMatrix | NDArray[np.float64]) -> NDArray[np.float64]:
    """Column-major concatenation of the lower block."""
    if isinstance(B, BasisMatrix):
        lower = B.lower
    else:
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if B.shape[0] == 1 and B.shape[1] > 1:
            B = B.T
        d = B.shape[1]
        lower = B[d:]
    return np.asarray(lower).reshape(-1, order="F").copy()


def unvecl(v: NDArray[np.float64], p: int, d: int) -> BasisMatrix:
    v = np.asarray(v, dtype=float).ravel()
    if v.size != (p - d) * d:
        raise DimensionError(
            f"vecl vector has length {v.size}, expected (p-d)d = {(p - d) * d}"
        )
    return BasisMatrix(p, d, v.reshape(p - d, d, order="F"))


def normalize_upper(B: NDArray[np.float64]) -> NDArray[np.float64]:
    """Right-multiply by the inverse of the upper block so it becomes ``I_d``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d = B.shape[1]
    upper = B[:d]
    if np.linalg.cond(upper) > _COND_LIMIT:
        raise PivotError(
            "upper d x d block is singular; rotate the order of the covariates "
            "so that the leading d covariates enter the model"
        )
    out = np.linalg.solve(upper.T, B.T).T
    out[:d] = np.eye(d)
    return out


@dataclass(frozen=True)
class Standardizer:
    """Affine map ``z = (x - mean) @ whitener`` to zero mean, identity covariance."""

    mean: NDArray[np.float64]
    whitener: NDArray[np.float64]
    dewhitener: NDArray[np.float64]

    @classmethod
    def identity(cls, p: int) -> "Standardizer":
        return cls(np.zeros(p), np.eye(p), np.eye(p))

    def transform(self, X: NDArray[np.float64]) -> NDArray[np.float64]:
        return (np.asarray(X, dtype=float) - self.mean) @ self.whitener


def standardize(X: NDArray[np.float64]) -> tuple[NDArray[np.float64], Standardizer]:
    """Center and whiten with the symmetric inverse square root of the covariance.

    Raises
    ------
    DegenerateDesignError
        If the sample covariance is (numerically) singular.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n <= p:
        raise DegenerateDesignError(f"need more rows than columns, got n={n}, p={p}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    lo, hi = evals[0], evals[-1]
    if lo <= 0 or hi / lo > _COND_LIMIT:
        raise DegenerateDesignError(
            f"sample covariance is singular: smallest eigenvalue {lo:.3e} "
            f"(largest {hi:.3e})",
            eigenvalue=float(lo),
            direction=evecs[:, 0],
        )
    whitener = (evecs / np.sqrt(evals)) @ evecs.T
    dewhitener = (evecs * np.sqrt(evals)) @ evecs.T
    whitener = (whitener + whitener.T) / 2
    dewhitener = (dewhitener + dewhitener.T) / 2
    return Xc @ whitener, Standardizer(mean, whitener, dewhitener)


def backtransform_basis(
    B: BasisMatrix | NDArray[np.float64], S: Standardizer
) -> NDArray[np.float64]:
    """Map a standardized-scale basis to the original scale, identity upper block."""
    full = B.full if isinstance(B, BasisMatrix) else np.asarray(B, dtype=float)
    return normalize_upper(S.whitener @ full)


def align_to_reference(
    Bhat: NDArray[np.float64], Bref: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Rescale ``Bhat`` (identity upper block) onto the normalization of ``Bref``.

    Returns ``Bhat @ Bref[:d]``, which equals ``Bref`` whenever both span
    the same subspace.
    """
    Bhat = np.atleast_2d(np.asarray(Bhat, dtype=float))
    Bref = np.atleast_2d(np.asarray(Bref, dtype=float))
    if Bhat.shape[0] == 1:
        Bhat = Bhat.T
    if Bref.shape[0] == 1:
        Bref = Bref.T
    if Bhat.shape != Bref.shape:
        raise DimensionError(f"shape mismatch {Bhat.shape} vs {Bref.shape}")
    d = Bref.shape[1]
    upper = Bref[:d]
    if np.linalg.cond(upper) > _COND_LIMIT:
        raise PivotError("reference basis has a singular upper block")
    return Bhat @ upper


def align_standardized(
    gamma: BasisMatrix | NDArray[np.float64],
    S: Standardizer,
    Bref: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Express a standardized-scale estimate in the units of an original-scale reference.

    The reference is carried to the standardized scale (``dewhitener @ Bref``),
    the estimate is aligned there, and the result is mapped back with the
    whitener without renormalizing.  Unlike ``align_to_reference`` on the
    original scale, no coefficient is held fixed, so every entry of the
    returned ``p x d`` matrix varies with the estimate.
    """
    full = gamma.full if isinstance(gamma, BasisMatrix) else np.asarray(gamma, dtype=float)
    full = normalize_upper(full)
    ref_z = S.dewhitener @ np.asarray(Bref, dtype=float).reshape(full.shape)
    return S.whitener @ align_to_reference(full, ref_z)


def align_by_length(
    V: NDArray[np.float64],
    S: Standardizer,
    Bref: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Map standardized-scale directions back and match column lengths to a reference.

    Column ``k`` of ``whitener @ V`` is rescaled to the Euclidean length of
    ``Bref[:, k]``.  Signs are left as they come, so an eigenvector sign
    convention carries through to the result.
    """
    D = S.whitener @ np.asarray(V, dtype=float)
    Bref = np.asarray(Bref, dtype=float).reshape(D.shape)
    norms = np.linalg.norm(D, axis=0)
    if np.any(norms == 0):
        raise RankError("zero direction cannot be rescaled")
    return D * (np.linalg.norm(Bref, axis=0) / norms)


def projector(B: NDArray[np.float64]) -> NDArray[np.float64]:
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] < B.shape[1]:
        B = B.T
    Q, R = np.linalg.qr(B)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(diag.max(), 1.0):
        raise RankError("basis matrix is rank deficient")
    return Q @ Q.T


def subspace_distance(B1: NDArray[np.float64], B2: NDArray[np.float64]) -> float:
    """Frobenius norm of the difference of the orthogonal projectors."""
    return float(np.linalg.norm(projector(B1) - projector(B2)))
