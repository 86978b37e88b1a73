"""End-to-end fitting pipelines built from the score models and the solver.

All fitting happens on standardized covariates.  The efficient estimator
follows the four-step recipe: a root-n consistent pilot, nonparametric
density and conditional-mean estimates at the pilot, then the efficient
estimating equation solved with those pieces held fixed.
"""

from __future__ import annotations

import logging

import numpy as np
from numpy.typing import NDArray

from . import baselines
from .errors import SDRError, SingularMatrixError
from .inference import efficient_vcov, sandwich_vcov
from .params import (
    BasisMatrix,
    Standardizer,
    align_by_length,
    align_standardized,
    normalize_upper,
    standardize,
    unvecl,
    vecl,
)
from .scores import (
    EfficientScore,
    LinearityScore,
    LocalScore,
    NormalWorkingModel,
    OracleScore,
)
from .solver import FitResult, solve_score

__all__ = [
    "ESTIMATORS",
    "pilot_estimate",
    "fit_working",
    "fit",
    "original_scale_jacobian",
    "aligned_jacobian",
    "replicate_estimators",
]

log = logging.getLogger(__name__)

# Estimator names accepted by the Monte Carlo engine and the CLI.
ESTIMATORS = ("oracle", "eff", "local", "sir", "dr", "linearity")

_VCOV_METHOD = {"oracle": "sandwich", "local": "sandwich", "linearity": "sandwich", "efficient": "efficient"}


def pilot_estimate(Y, Z, d: int, bandwidths=None, max_iter: int = 50) -> tuple[BasisMatrix, FitResult | None]:
    """Root-n consistent starting value on the standardized scale.

    SIR provides a starting point for the locally efficient estimator with
    the linear-mean normal working model, whose root is the pilot.  If that
    solve fails to reduce the score the SIR basis is returned.
    """
    sir = baselines.sir_directions(Z, Y, d)
    start = BasisMatrix.from_matrix(sir.basis)
    model = LocalScore(Y, Z, d, bandwidths=bandwidths)
    try:
        res = solve_score(model, start, max_iter=max_iter, refits=0)
    except (SDRError, np.linalg.LinAlgError) as exc:
        log.debug("pilot solve failed: %s", exc)
        return start, None
    return res.beta, res


def _attach_vcov(res: FitResult, method: str) -> FitResult:
    try:
        if method == "efficient":
            V = efficient_vcov(res.scores)
        else:
            V = sandwich_vcov(res.scores, res.jacobian)
    except SingularMatrixError as exc:
        res.notes.append(str(exc))
        V = np.full((res.jacobian.shape[0],) * 2, np.nan)
    res.vcov = V
    res.se = np.sqrt(np.clip(np.diag(V), 0, None) / res.n)
    return res


def fit_working(
    Y,
    Z,
    d: int,
    method: str = "efficient",
    *,
    init: BasisMatrix | None = None,
    oracle=None,
    posited=None,
    bandwidths: dict | None = None,
    max_iter: int = 50,
    tol: float = 1e-6,
    refits: int = 1,
    vcov: str | None = None,
) -> FitResult:
    """Fit one score-based estimator on already standardized covariates."""
    kw = dict(bandwidths=bandwidths)
    if method == "efficient":
        model = EfficientScore(Y, Z, d, **kw)
    elif method == "oracle":
        if oracle is None:
            raise ValueError("the oracle estimator needs the true conditional density")
        model = OracleScore(Y, Z, d, oracle, **kw)
    elif method == "local":
        model = LocalScore(Y, Z, d, posited=posited, **kw)
    elif method == "linearity":
        model = LinearityScore(Y, Z, d)
    else:
        raise ValueError(f"unknown score method {method!r}")
    if init is None:
        init, _ = pilot_estimate(Y, Z, d, bandwidths)
    res = solve_score(model, init, max_iter=max_iter, tol=tol, refits=refits)
    return _attach_vcov(res, vcov or _VCOV_METHOD[method])


def original_scale_jacobian(theta, S: Standardizer, p: int, d: int) -> NDArray[np.float64]:
    """Jacobian of ``vecl(normalize_upper(W gamma(theta)))`` in ``theta``."""
    gamma = unvecl(theta, p, d).full
    B = S.whitener @ gamma
    Bu_inv = np.linalg.inv(B[:d])
    F = B @ Bu_inv
    cols = []
    for k in range((p - d) * d):
        E = np.zeros((p - d) * d)
        E[k] = 1.0
        dG = np.vstack([np.zeros((d, d)), E.reshape(p - d, d, order="F")])
        dB = S.whitener @ dG
        dF = dB @ Bu_inv - F @ dB[:d] @ Bu_inv
        cols.append(dF[d:].reshape(-1, order="F"))
    return np.column_stack(cols)


def aligned_jacobian(S: Standardizer, Bref, p: int, d: int) -> NDArray[np.float64]:
    """Jacobian of the (affine) map ``theta -> vec(align_standardized(theta))``."""
    C = (S.dewhitener @ np.asarray(Bref, dtype=float).reshape(p, d))[:d]
    cols = []
    for k in range((p - d) * d):
        E = np.zeros((p - d) * d)
        E[k] = 1.0
        dG = np.vstack([np.zeros((d, d)), E.reshape(p - d, d, order="F")])
        cols.append((S.whitener @ dG @ C).reshape(-1, order="F"))
    return np.column_stack(cols)


def fit(
    Y,
    X,
    d: int,
    method: str = "efficient",
    **kw,
) -> FitResult:
    """Standardize, fit on the standardized scale, and map back.

    ``beta_original`` has identity upper block on the original covariate
    scale; ``vcov_original`` / ``se_original`` are the delta-method
    counterparts for its free coefficients.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    Z, S = standardize(X)
    res = fit_working(Y, Z, d, method, **kw)
    p = Z.shape[1]
    res.beta_original = normalize_upper(S.whitener @ res.beta.full)
    J = original_scale_jacobian(res.theta, S, p, d)
    res.vcov_original = J @ res.vcov @ J.T
    res.se_original = np.sqrt(np.clip(np.diag(res.vcov_original), 0, None) / res.n)
    res.standardizer = S
    return res


def replicate_estimators(
    X,
    Y,
    scenario,
    estimators,
    level: float = 0.95,
    local_model: str = "tanh",
    bandwidths: dict | None = None,
    max_iter: int = 50,
    refits: int = 1,
    eff_vcov: str = "efficient",
    slicing: str = "uniform",
    pilot: str = "data",
    pilot_sd: float = 0.3,
    rng: np.random.Generator | None = None,
) -> dict:
    """Fit each requested estimator on one simulated data set.

    Returns, per estimator, the estimate aligned to the scenario's true
    basis (``p * d`` values, column-major), its standard errors on that
    scale (or ``None``) and a convergence flag.

    Score-based fits are aligned with ``align_standardized``.  SIR and DR
    use ``slicing`` bins; their eigenvectors keep the largest-entry-positive
    sign and are mapped back with ``align_by_length``, so a direction whose
    sign is poorly determined shows up as a shrunken average.  The local
    estimator posits ``NormalWorkingModel.<local_model>()``.

    ``pilot="data"`` starts the score-based fits from :func:`pilot_estimate`.
    ``pilot="perturbed"`` starts them from the true basis on the working
    scale plus independent ``N(0, pilot_sd**2)`` noise on each free
    coefficient, drawn from ``rng``; this stands in for a root-n consistent
    pilot in designs where no data-driven one is available.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    Z, S = standardize(X)
    p, d = scenario.p, scenario.d
    truth = scenario.beta_true
    out: dict = {}
    Jal = aligned_jacobian(S, truth, p, d)

    need_pilot = any(e in ("oracle", "eff", "local") for e in estimators)
    start = None
    if need_pilot and pilot == "perturbed":
        rng = np.random.default_rng() if rng is None else rng
        exact = BasisMatrix.from_matrix(normalize_upper(S.dewhitener @ truth))
        start = unvecl(vecl(exact) + pilot_sd * rng.standard_normal(exact.n_params), p, d)
    elif need_pilot and pilot == "data":
        start, _ = pilot_estimate(Y, Z, d, bandwidths, max_iter)
    elif pilot not in ("data", "perturbed"):
        raise ValueError(f"unknown pilot {pilot!r}")

    def pack(gamma, converged, vcov=None, n=len(Y)):
        try:
            aligned = align_standardized(gamma, S, truth).reshape(-1, order="F")
        except SDRError:
            return {"aligned": np.full(p * d, np.nan), "se": None, "converged": False}
        se = None
        if vcov is not None and np.all(np.isfinite(vcov)):
            Va = Jal @ vcov @ Jal.T
            se = np.sqrt(np.clip(np.diag(Va), 0, None) / n)
        return {"aligned": aligned, "se": se, "converged": bool(converged and np.all(np.isfinite(aligned)))}

    for est in estimators:
        if est in ("sir", "dr"):
            f = baselines.sir_directions if est == "sir" else baselines.dr_directions
            try:
                aligned = align_by_length(f(Z, Y, d, scheme=slicing).directions, S, truth)
                out[est] = {"aligned": aligned.reshape(-1, order="F"), "se": None, "converged": True}
            except SDRError:
                out[est] = {"aligned": np.full(p * d, np.nan), "se": None, "converged": False}
            continue
        method = {"eff": "efficient"}.get(est, est)
        kw = dict(init=start, bandwidths=bandwidths, max_iter=max_iter, refits=refits)
        if est == "oracle":
            kw["oracle"] = scenario.working_oracle(S)
        if est == "eff":
            kw["vcov"] = eff_vcov
        if est == "local":
            kw["posited"] = getattr(NormalWorkingModel, local_model)()
        if est == "linearity":
            kw["init"] = BasisMatrix.from_matrix(baselines.sir_directions(Z, Y, d).basis)
        try:
            res = fit_working(Y, Z, d, method, **kw)
            out[est] = pack(res.beta, res.converged, res.vcov)
        except (SDRError, np.linalg.LinAlgError) as exc:
            log.debug("%s failed: %s", est, exc)
            out[est] = {"aligned": np.full(p * d, np.nan), "se": None, "converged": False}
    return out
