"""Per-observation estimating functions for the central subspace.

Every score here has the form ``vecl[{x - E(x|u)} w(Y, u)']`` (or a sum of
such centered products) with ``u = B'x``, so it has mean zero at the true
basis whenever ``E(x|u)`` is right, whatever ``w`` is.  The score classes
build their nonparametric pieces once at an *anchor* basis and then treat
them as fixed functions of ``u`` while the basis moves inside the solver.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionError, ScoreEvaluationError, UnsupportedError
from .params import BasisMatrix, unvecl
from .smoothing import (
    ConditionalDensityFit,
    NWRegressor,
    SmootherSpec,
    default_bandwidths,
)

__all__ = [
    "outer_vecl",
    "NormalWorkingModel",
    "efficient_score",
    "local_score",
    "linearity_shortcut_score",
    "general_orthogonal_score",
    "ScoreModel",
    "OracleScore",
    "EfficientScore",
    "LocalScore",
    "LinearityScore",
    "GeneralScore",
    "SCORE_KINDS",
]


def outer_vecl(resid: NDArray[np.float64], g: NDArray[np.float64], d: int) -> NDArray[np.float64]:
    """Row-wise ``vecl(r_i g_i')`` for residuals ``r`` (n x p) and weights ``g`` (n x d)."""
    resid = np.asarray(resid, dtype=float)
    g = np.asarray(g, dtype=float).reshape(resid.shape[0], d)
    lower = resid[:, d:]
    n = resid.shape[0]
    return np.einsum("nj,nk->nkj", lower, g).reshape(n, -1)


def _project(Z: NDArray[np.float64], B: BasisMatrix) -> NDArray[np.float64]:
    return Z @ B.full


def _check_data(Y, Z, B: BasisMatrix):
    Y = np.asarray(Y, dtype=float).ravel()
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != Y.size:
        raise DimensionError(f"Y has {Y.size} rows, X has shape {Z.shape}")
    if Z.shape[1] != B.p:
        raise DimensionError(f"X has {Z.shape[1]} columns, basis has p={B.p}")
    return Y, Z


class NormalWorkingModel:
    """Posited normal model ``Y | u ~ N(mean(u), sigma2)``.

    Only the mean function and its gradient enter the locally efficient
    score; ``sigma2`` rescales the score and so never moves the root.
    """

    def __init__(self, mean: Callable, mean_gradient: Callable, sigma2: float = 1.0, name: str = "normal"):
        self.mean = mean
        self.mean_gradient = mean_gradient
        self.sigma2 = sigma2
        self.name = name

    @classmethod
    def linear(cls) -> "NormalWorkingModel":
        return cls(
            lambda u: np.asarray(u).sum(axis=1),
            lambda u: np.ones_like(np.asarray(u, dtype=float)),
            name="normal-linear",
        )

    @classmethod
    def cubic(cls) -> "NormalWorkingModel":
        return cls(
            lambda u: (np.asarray(u) ** 3).sum(axis=1),
            lambda u: 3.0 * np.asarray(u, dtype=float) ** 2,
            name="normal-cubic",
        )

    @classmethod
    def arctan(cls) -> "NormalWorkingModel":
        return cls(
            lambda u: np.arctan(np.asarray(u)).sum(axis=1),
            lambda u: 1.0 / (1.0 + np.asarray(u, dtype=float) ** 2),
            name="normal-arctan",
        )

    @classmethod
    def tanh(cls) -> "NormalWorkingModel":
        return cls(
            lambda u: np.tanh(np.asarray(u)).sum(axis=1),
            lambda u: 1.0 / np.cosh(np.asarray(u, dtype=float)) ** 2,
            name="normal-tanh",
        )

    def log_gradient(self, y, u) -> NDArray[np.float64]:
        u = np.asarray(u, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        return (y - self.mean(u))[:, None] * self.mean_gradient(u) / self.sigma2


def efficient_score(
    Y,
    Z,
    B: BasisMatrix,
    fit,
    Ex: NWRegressor,
    return_trimmed: bool = False,
):
    """Efficient score rows ``vecl[{x - E(x|u)} dlog eta_2(Y, u)/du']``.

    ``fit`` supplies the log-density gradient: a
    :class:`ConditionalDensityFit` or any object with a
    ``log_gradient(y, u)`` method (e.g. a known oracle density).
    Observations trimmed by ``Ex`` get zero rows.
    """
    Y, Z = _check_data(Y, Z, B)
    U = _project(Z, B)
    Ez, trimmed = Ex.evaluate(U)
    if Ez.shape[1] != B.p:
        raise DimensionError("E(x|u) estimator returns the wrong number of columns")
    g = _log_gradient(fit, Y, U)
    S = outer_vecl(Z - Ez, g, B.d)
    S[trimmed] = 0.0
    return (S, trimmed) if return_trimmed else S


def _log_gradient(fit, Y, U):
    if isinstance(fit, ConditionalDensityFit):
        dens, grad, _ = fit.evaluate(Y, U)
        return grad / dens[:, None]
    return np.asarray(fit.log_gradient(Y, U), dtype=float).reshape(U.shape)


def local_score(
    Y,
    Z,
    B: BasisMatrix,
    posited,
    Ex: NWRegressor,
    EY: NWRegressor | None = None,
    EdT: NWRegressor | None = None,
    return_trimmed: bool = False,
):
    """Locally efficient score under a posited conditional density.

    For a :class:`NormalWorkingModel` with ``EY`` given the rows are

        vecl[{x - E(x|u)} {Y - E(Y|u)} dE*(Y|u)/du']

    Otherwise the posited log-density gradient is centered by ``EdT``, a
    Nadaraya-Watson estimate of its conditional mean given ``u``.
    """
    Y, Z = _check_data(Y, Z, B)
    U = _project(Z, B)
    Ez, trimmed = Ex.evaluate(U)
    if isinstance(posited, NormalWorkingModel) and EY is not None:
        ey, t2 = EY.evaluate(U)
        slope = np.asarray(posited.mean_gradient(U), dtype=float).reshape(U.shape)
        w = (Y - ey[:, 0])[:, None] * slope / posited.sigma2
        trimmed = trimmed | t2
    else:
        if EdT is None:
            raise ValueError("a centering estimator EdT is required for a general posited model")
        gstar = np.asarray(posited.log_gradient(Y, U), dtype=float).reshape(U.shape)
        centre, t2 = EdT.evaluate(U)
        w = gstar - centre
        trimmed = trimmed | t2
    bad = ~np.all(np.isfinite(w), axis=1)
    if np.any(bad):
        idx = int(np.flatnonzero(bad)[0])
        raise ScoreEvaluationError(f"posited log-density gradient is not finite at observation {idx}")
    S = outer_vecl(Z - Ez, w, B.d)
    S[trimmed] = 0.0
    return (S, trimmed) if return_trimmed else S


def linearity_shortcut_score(Y, Z, B: BasisMatrix) -> NDArray[np.float64]:
    """Closed-form score assuming ``E(x|B'x)`` is the linear projection (d = 1)."""
    if B.d != 1:
        raise UnsupportedError("the linearity shortcut score is only defined for d = 1")
    Y, Z = _check_data(Y, Z, B)
    beta = B.full
    u = Z @ beta
    resid = Z - u @ beta.T / float(np.sum(beta**2))
    return outer_vecl(resid, (Y - u[:, 0])[:, None], 1)


def general_orthogonal_score(
    Y,
    Z,
    B: BasisMatrix,
    g_list: Sequence[Callable],
    a_list: Sequence[Callable],
    smoother: SmootherSpec,
    anchor: BasisMatrix | None = None,
    return_trimmed: bool = False,
):
    """Sum of centered products ``vecl[{a_k(x) - E(a_k|u)}{g_k(Y,u) - E(g_k|u)}']``.

    Each ``g_k(Y, U)`` returns an ``n x d`` (or length-``n`` when ``d = 1``)
    array and each ``a_k(X)`` an ``n x p`` array.  Conditional means are
    Nadaraya-Watson fits with bandwidth ``smoother.h`` built at ``anchor``
    (default: ``B`` itself).
    """
    if len(g_list) == 0 or len(g_list) != len(a_list):
        raise DimensionError("g_list and a_list must be nonempty and of equal length")
    Y, Z = _check_data(Y, Z, B)
    anchor = B if anchor is None else anchor
    Ua = _project(Z, anchor)
    U = _project(Z, B)
    n, d = U.shape
    total = np.zeros((n, B.n_params))
    trimmed = np.zeros(n, dtype=bool)
    for g, a in zip(g_list, a_list):
        A = np.asarray(a(Z), dtype=float)
        if A.shape != Z.shape:
            raise DimensionError(f"a(x) must return shape {Z.shape}, got {A.shape}")
        Ga = np.asarray(g(Y, Ua), dtype=float).reshape(n, d)
        G = np.asarray(g(Y, U), dtype=float).reshape(n, d)
        EA, ta = NWRegressor(Ua, A, smoother.h, smoother.kernel, smoother.trim).evaluate(U)
        EG, tg = NWRegressor(Ua, Ga, smoother.h, smoother.kernel, smoother.trim).evaluate(U)
        total += outer_vecl(A - EA, G - EG, d)
        trimmed |= ta | tg
    total[trimmed] = 0.0
    return (total, trimmed) if return_trimmed else total


# --------------------------------------------------------------------------
# Score models: nuisance pieces anchored at a pilot basis


# Multiplier on the density bandwidths of the efficient score (see EfficientScore).
DENSITY_SCALE = 1.3


class ScoreModel:
    """Maps a parameter vector ``vecl(B)`` to an ``n x p_t`` score matrix.

    Subclasses implement :meth:`_build` (nonparametric pieces at the anchor)
    and :meth:`_rows` (score rows at a basis).  ``bandwidths`` overrides
    entries of the default :class:`SmootherSpec`.
    """

    kind = "abstract"
    uses_smoothing = True

    def __init__(self, Y, Z, d: int, bandwidths: dict | None = None, kernel: str = "quartic",
                 trim: float = 1e-4, density_floor: float = 1e-4):
        self.Y = np.asarray(Y, dtype=float).ravel()
        self.Z = np.asarray(Z, dtype=float)
        if self.Z.shape[0] != self.Y.size:
            raise DimensionError("Y and X have different numbers of rows")
        self.n, self.p = self.Z.shape
        if not 1 <= d < self.p:
            raise DimensionError(f"need 1 <= d < p, got d={d}, p={self.p}")
        self.d = d
        self.bandwidths = dict(bandwidths or {})
        self.kernel = kernel
        self.trim = trim
        self.density_floor = density_floor
        self.spec: SmootherSpec | None = None
        self.anchor_basis: BasisMatrix | None = None
        self.last_trimmed = np.zeros(self.n, dtype=bool)

    @property
    def n_params(self) -> int:
        return (self.p - self.d) * self.d

    def smoother_at(self, B: BasisMatrix) -> SmootherSpec:
        U = _project(self.Z, B)
        scale = U.std(axis=0, ddof=1)
        scale = np.where(scale > 0, scale, 1.0)
        ysd = float(self.Y.std(ddof=1)) or 1.0
        spec = default_bandwidths(
            self.n, self.d, scale, y_scale=ysd,
            kernel=self.kernel, trim=self.trim, density_floor=self.density_floor,
        )
        return spec.with_overrides(**self.bandwidths)

    def anchor(self, B: BasisMatrix) -> None:
        self.anchor_basis = B
        if self.uses_smoothing:
            self.spec = self.smoother_at(B)
            self._Ua = _project(self.Z, B)
            self.Ex = NWRegressor(self._Ua, self.Z, self.spec.h_x, self.kernel, self.trim)
        self._build(B)

    def _build(self, B: BasisMatrix) -> None:
        pass

    def _rows(self, B: BasisMatrix):
        raise NotImplementedError

    def __call__(self, theta) -> NDArray[np.float64]:
        if self.anchor_basis is None:
            raise RuntimeError("score model has not been anchored; call anchor() first")
        B = unvecl(theta, self.p, self.d)
        S, trimmed = self._rows(B)
        self.last_trimmed = trimmed
        return S

    def scores_at(self, B: BasisMatrix) -> NDArray[np.float64]:
        return self(B.lower.reshape(-1, order="F"))


class OracleScore(ScoreModel):
    """Efficient score with a known conditional density (benchmark only)."""

    kind = "oracle"

    def __init__(self, Y, Z, d, oracle, **kw):
        super().__init__(Y, Z, d, **kw)
        if not hasattr(oracle, "log_gradient"):
            raise TypeError("oracle must provide log_gradient(y, u)")
        self.oracle = oracle

    def _rows(self, B):
        return efficient_score(self.Y, self.Z, B, self.oracle, self.Ex, return_trimmed=True)


class EfficientScore(ScoreModel):
    """Efficient score with the double-kernel conditional density estimate.

    ``density_scale`` multiplies the rate-based ``h_y`` and ``b`` before any
    explicit overrides.  The density gradient converges slowly, and at the
    bare rates its estimation noise inflates the plug-in information
    ``mean(S S')`` by half again, which makes inverse-information standard
    errors too small.  A factor of 1.3 removes most of that inflation while
    leaving the estimate itself essentially unchanged.

    The estimated gradient is centred by its Nadaraya-Watson regression on
    ``u`` (built at the anchor), which leaves the population score unchanged.
    """

    kind = "efficient"

    def __init__(self, Y, Z, d, density_scale: float = DENSITY_SCALE, **kw):
        if density_scale <= 0:
            raise ValueError("density_scale must be positive")
        self.density_scale = float(density_scale)
        super().__init__(Y, Z, d, **kw)

    def smoother_at(self, B):
        bw = self.bandwidths
        self.bandwidths = {}
        try:
            spec = super().smoother_at(B)
        finally:
            self.bandwidths = bw
        c = self.density_scale
        return spec.with_overrides(h_y=spec.h_y * c, b=spec.b * c).with_overrides(**bw)

    def _build(self, B):
        self.density = ConditionalDensityFit(self.Y, self._Ua, self.spec)
        self._bound = self.density.bind(self.Y)
        # The true log-density gradient has conditional mean zero given u;
        # the estimate does not, and its bias would otherwise multiply the
        # smoothing bias of E(x|u).
        dens, grad, _ = self._bound(self._Ua)
        self.Eg = NWRegressor(self._Ua, grad / dens[:, None], self.spec.h, self.kernel, self.trim)

    def _rows(self, B):
        U = _project(self.Z, B)
        Ez, trimmed = self.Ex.evaluate(U)
        dens, grad, flagged = self._bound(U)
        centre, t2 = self.Eg.evaluate(U)
        self.last_flagged = flagged
        trimmed = trimmed | t2
        S = outer_vecl(self.Z - Ez, grad / dens[:, None] - centre, self.d)
        S[trimmed] = 0.0
        return S, trimmed


class LocalScore(ScoreModel):
    """Locally efficient score under a posited model (default: linear-mean normal)."""

    kind = "local"

    def __init__(self, Y, Z, d, posited=None, **kw):
        super().__init__(Y, Z, d, **kw)
        self.posited = NormalWorkingModel.linear() if posited is None else posited

    def _build(self, B):
        spec = self.spec
        self.EY = self.EdT = None
        if isinstance(self.posited, NormalWorkingModel):
            self.EY = NWRegressor(self._Ua, self.Y, spec.h, self.kernel, self.trim)
        else:
            G = np.asarray(self.posited.log_gradient(self.Y, self._Ua), dtype=float)
            self.EdT = NWRegressor(self._Ua, G.reshape(self.n, self.d), spec.h, self.kernel, self.trim)

    def _rows(self, B):
        return local_score(self.Y, self.Z, B, self.posited, self.Ex, self.EY, self.EdT, return_trimmed=True)


class LinearityScore(ScoreModel):
    """Smoothing-free score valid under the linearity condition (d = 1)."""

    kind = "linearity"
    uses_smoothing = False

    def __init__(self, Y, Z, d, **kw):
        if d != 1:
            raise UnsupportedError("the linearity shortcut score is only defined for d = 1")
        super().__init__(Y, Z, d, **kw)

    def _rows(self, B):
        return linearity_shortcut_score(self.Y, self.Z, B), np.zeros(self.n, dtype=bool)


class GeneralScore(ScoreModel):
    """Sum of centered products from user-supplied response/covariate functions."""

    kind = "general"

    def __init__(self, Y, Z, d, g_list, a_list, **kw):
        super().__init__(Y, Z, d, **kw)
        self.g_list = list(g_list)
        self.a_list = list(a_list)

    def _rows(self, B):
        return general_orthogonal_score(
            self.Y, self.Z, B, self.g_list, self.a_list, self.spec,
            anchor=self.anchor_basis, return_trimmed=True,
        )


SCORE_KINDS = {
    "oracle": OracleScore,
    "efficient": EfficientScore,
    "local": LocalScore,
    "linearity": LinearityScore,
    "general": GeneralScore,
}
