"""Gauss-Newton root finding for a mean estimating equation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .params import BasisMatrix, unvecl, vecl

__all__ = ["FitResult", "numerical_jacobian", "solve_score"]

log = logging.getLogger(__name__)


@dataclass
class FitResult:
    """Outcome of solving ``mean_i S_i(beta) = 0``.

    ``beta`` is on the scale the score was evaluated on; ``beta_original``
    is filled in by callers that know the covariate standardization.
    ``se`` follows ``sqrt(diag(vcov) / n)``.
    """

    beta: BasisMatrix
    converged: bool
    iterations: list = field(default_factory=list)
    kind: str = ""
    n: int = 0
    score_norm: float = float("nan")
    jacobian: NDArray[np.float64] | None = None
    scores: NDArray[np.float64] | None = None
    vcov: NDArray[np.float64] | None = None
    se: NDArray[np.float64] | None = None
    beta_original: NDArray[np.float64] | None = None
    vcov_original: NDArray[np.float64] | None = None
    se_original: NDArray[np.float64] | None = None
    standardizer: object = None
    trimmed_fraction: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def theta(self) -> NDArray[np.float64]:
        return vecl(self.beta)


def numerical_jacobian(fun, theta, f0=None, rel_step: float = 1e-5) -> NDArray[np.float64]:
    """Forward-difference Jacobian of a vector function at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    f0 = fun(theta) if f0 is None else f0
    J = np.empty((f0.size, theta.size))
    for k in range(theta.size):
        step = rel_step * max(1.0, abs(theta[k]))
        t = theta.copy()
        t[k] += step
        J[:, k] = (fun(t) - f0) / step
    return J


def _newton_step(J, m):
    sv = np.linalg.svd(J, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        lam = 1e-4 * np.linalg.norm(J)
        A = J.T @ J + lam * np.eye(J.shape[1])
        return -np.linalg.solve(A, J.T @ m), True
    return -np.linalg.lstsq(J, m, rcond=None)[0], False


def _gauss_newton(mean_score, theta, max_iter, tol, rel_step, max_halvings, trace, trimmed_fraction):
    m = mean_score(theta)
    norm = float(np.linalg.norm(m))
    frac = trimmed_fraction()
    # A step that pushes observations out of the smoother's support shrinks
    # the score trivially; cap the trimmed fraction a step may reach.
    frac_cap = max(frac + 0.02, 0.05)
    trace.append({"theta": theta.copy(), "norm": norm})
    it = 0
    while norm > tol and it < max_iter:
        it += 1
        J = numerical_jacobian(mean_score, theta, m, rel_step)
        delta, damped = _newton_step(J, m)
        alpha = 1.0
        accepted = False
        for _ in range(max_halvings):
            cand = theta + alpha * delta
            mc = mean_score(cand)
            nc = float(np.linalg.norm(mc))
            if np.isfinite(nc) and nc < norm and trimmed_fraction() <= frac_cap:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            trace.append({"theta": theta.copy(), "norm": norm, "note": "line search failed"})
            break
        theta, m, norm = cand, mc, nc
        entry = {"theta": theta.copy(), "norm": norm, "step": alpha}
        if damped:
            entry["note"] = "levenberg damping"
        trace.append(entry)
    return theta, norm


def solve_score(
    model,
    init: BasisMatrix,
    max_iter: int = 50,
    tol: float = 1e-6,
    rel_step: float = 1e-5,
    max_halvings: int = 30,
    refits: int = 1,
) -> FitResult:
    """Solve the sample estimating equation of a score model by Gauss-Newton.

    The model's nonparametric pieces are built at ``init`` and held fixed
    while the parameter moves.  ``refits`` further passes re-anchor them at
    the current solution and solve again.  Non-convergence is reported in
    the result rather than raised.
    """
    n = model.n
    trace: list = []
    theta = vecl(init)

    def mean_score(t):
        return model(t).sum(axis=0) / n

    def trimmed_fraction():
        return float(np.mean(model.last_trimmed))

    basis = init
    for npass in range(refits + 1):
        model.anchor(basis)
        if npass:
            trace.append({"theta": theta.copy(), "note": f"re-anchored (pass {npass + 1})"})
        theta, norm = _gauss_newton(mean_score, theta, max_iter, tol, rel_step, max_halvings, trace, trimmed_fraction)
        basis = unvecl(theta, model.p, model.d)

    m0 = mean_score(theta)
    S = model(theta)
    trimmed = model.last_trimmed
    J = numerical_jacobian(mean_score, theta, m0, rel_step)
    converged = bool(np.linalg.norm(m0) <= tol and np.mean(trimmed) <= 0.5)
    res = FitResult(
        beta=basis,
        converged=converged,
        iterations=trace,
        kind=model.kind,
        n=n,
        score_norm=float(np.linalg.norm(m0)),
        jacobian=J,
        scores=S,
        trimmed_fraction=float(np.mean(trimmed)),
    )
    if res.trimmed_fraction > 0.05:
        log.warning("%.1f%% of observations trimmed", 100 * res.trimmed_fraction)
    return res
