"""Sliced inverse regression and directional regression.

Both work on standardized covariates, where the sample covariance is the
identity, and return a basis with identity upper block.  The public
``*_estimate`` functions take raw covariates and map the result back to the
original scale; the ``*_directions`` functions take standardized covariates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .params import normalize_upper, standardize

__all__ = [
    "slice_response",
    "sir_matrix",
    "dr_matrix",
    "sir_directions",
    "dr_directions",
    "sir_estimate",
    "dr_estimate",
    "EigenFit",
    "SCHEMES",
]


SCHEMES = ("quantile", "uniform")


def slice_response(Y, n_slices: int = 10, min_size: int = 2, scheme: str = "quantile") -> NDArray[np.int64]:
    """Assign each response to one of ``n_slices`` bins.

    Parameters
    ----------
    Y : array_like
        Responses.
    n_slices : int
        Number of bins before merging.
    min_size : int
        Slices with fewer members (ties, tiny samples, empty equal-width
        bins) are merged into a neighbour with a warning.
    scheme : {"quantile", "uniform"}
        ``"quantile"`` gives bins of (nearly) equal counts; ``"uniform"``
        splits the range of ``Y`` into bins of equal width.

    Returns
    -------
    ndarray of int
        Slice labels 0..H-1, ordered by response.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown slicing scheme {scheme!r}")
    Y = np.asarray(Y, dtype=float).ravel()
    n = Y.size
    if scheme == "uniform":
        edges = np.linspace(Y.min(), Y.max(), n_slices + 1)
        labels = np.clip(np.searchsorted(edges, Y, side="right") - 1, 0, n_slices - 1)
    else:
        order = np.argsort(Y, kind="stable")
        ranks = np.empty(n, dtype=np.int64)
        ranks[order] = np.arange(n)
        labels = np.minimum(ranks * n_slices // n, n_slices - 1)
        # Tied responses must share a slice.
        ys = Y[order]
        lab_sorted = labels[order]
        for i in range(1, n):
            if ys[i] == ys[i - 1]:
                lab_sorted[i] = lab_sorted[i - 1]
        labels[order] = lab_sorted
    _, labels = np.unique(labels, return_inverse=True)
    counts = np.bincount(labels)
    merged = False
    while counts.size > 1 and counts.min() < min_size:
        s = int(np.argmin(counts))
        if s == 0:
            t = 1
        elif s == counts.size - 1 or counts[s - 1] <= counts[s + 1]:
            t = s - 1
        else:
            t = s + 1
        labels[labels == s] = t
        _, labels = np.unique(labels, return_inverse=True)
        counts = np.bincount(labels)
        merged = True
    if merged:
        warnings.warn("sparse slices merged with neighbours", RuntimeWarning, stacklevel=2)
    return labels


def _slice_moments(Z, labels):
    H = labels.max() + 1
    n, p = Z.shape
    probs = np.bincount(labels, minlength=H) / n
    means = np.zeros((H, p))
    second = np.zeros((H, p, p))
    for s in range(H):
        Zs = Z[labels == s]
        means[s] = Zs.mean(axis=0)
        second[s] = Zs.T @ Zs / Zs.shape[0]
    return probs, means, second


def sir_matrix(Z, Y, n_slices: int = 10, scheme: str = "quantile") -> NDArray[np.float64]:
    """Between-slice covariance of slice means of standardized covariates."""
    labels = slice_response(Y, n_slices, scheme=scheme)
    probs, means, _ = _slice_moments(np.asarray(Z, dtype=float), labels)
    return (means * probs[:, None]).T @ means


def dr_matrix(Z, Y, n_slices: int = 10, scheme: str = "quantile") -> NDArray[np.float64]:
    """Directional regression kernel matrix ``E{2I - A(Y, Y~)}^2`` over slice pairs.

    With ``V_s = E(zz'|s)`` and ``m_s = E(z|s)``, the conditional second
    moment of ``z - z~`` for a slice pair is ``V_s + V_t - m_s m_t' - m_t m_s'``;
    the squared deviations from ``2I`` are averaged with slice-probability
    weights over all ordered pairs.
    """
    Z = np.asarray(Z, dtype=float)
    labels = slice_response(Y, n_slices, scheme=scheme)
    probs, means, second = _slice_moments(Z, labels)
    p = Z.shape[1]
    I2 = 2.0 * np.eye(p)
    F = np.zeros((p, p))
    H = probs.size
    for s in range(H):
        for t in range(H):
            A = second[s] + second[t] - np.outer(means[s], means[t]) - np.outer(means[t], means[s])
            D = I2 - A
            F += probs[s] * probs[t] * (D @ D)
    return (F + F.T) / 2


@dataclass
class EigenFit:
    basis: NDArray[np.float64]
    eigenvalues: NDArray[np.float64]
    directions: NDArray[np.float64]
    weak: bool = False


def _top_eigvecs(M, d):
    evals, evecs = np.linalg.eigh(M)
    idx = np.argsort(evals)[::-1]
    evals, evecs = evals[idx], evecs[:, idx]
    V = evecs[:, :d].copy()
    for k in range(d):
        j = np.argmax(np.abs(V[:, k]))
        if V[j, k] < 0:
            V[:, k] = -V[:, k]
    return evals, V


def _directions(M, d, n, H):
    evals, V = _top_eigvecs(M, d)
    p = M.shape[0]
    # Under independence the eigenvalues are of order p * H / n.
    weak = bool(evals[d - 1] < 5.0 * p * H / n) if n else False
    return EigenFit(normalize_upper(V), evals, V, weak)


def sir_directions(Z, Y, d: int, n_slices: int = 10, scheme: str = "quantile") -> EigenFit:
    M = sir_matrix(Z, Y, n_slices, scheme)
    return _directions(M, d, len(Y), n_slices)


def dr_directions(Z, Y, d: int, n_slices: int = 10, scheme: str = "quantile") -> EigenFit:
    M = dr_matrix(Z, Y, n_slices, scheme)
    fit = _directions(M, d, len(Y), n_slices)
    fit.weak = False
    return fit


def _check_slices(n_slices, d):
    if n_slices < d + 1:
        raise ValueError(f"need at least d + 1 = {d + 1} slices, got {n_slices}")


def sir_estimate(Y, X, d: int, n_slices: int = 10, scheme: str = "quantile") -> NDArray[np.float64]:
    """SIR basis on the original covariate scale, identity upper block."""
    _check_slices(n_slices, d)
    Z, S = standardize(X)
    fit = sir_directions(Z, Y, d, n_slices, scheme)
    return normalize_upper(S.whitener @ fit.directions)


def dr_estimate(Y, X, d: int, n_slices: int = 10, scheme: str = "quantile") -> NDArray[np.float64]:
    """Directional regression basis on the original covariate scale."""
    _check_slices(n_slices, d)
    Z, S = standardize(X)
    fit = dr_directions(Z, Y, d, n_slices, scheme)
    return normalize_upper(S.whitener @ fit.directions)
