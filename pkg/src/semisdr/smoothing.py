"""Product-kernel smoothers.

Two estimators live here: the Nadaraya-Watson conditional mean, and the
double-kernel local linear estimator of a conditional density together with
its gradient in the conditioning variable.  Both are written so that the
kernel matrices for a whole batch of query points are formed at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionError

__all__ = [
    "KERNELS",
    "SmootherSpec",
    "default_bandwidths",
    "kernel_weights",
    "NWRegressor",
    "nw_regress",
    "ConditionalDensityFit",
    "fit_conditional_density",
    "log_density_gradient",
]


def _quartic(t):
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) < 1.0, 0.9375 * (1.0 - t * t) ** 2, 0.0)


def _epanechnikov(t):
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) < 1.0, 0.75 * (1.0 - t * t), 0.0)


# Univariate kernels supported on [-1, 1].
KERNELS: dict[str, Callable[[NDArray], NDArray]] = {
    "quartic": _quartic,
    "epanechnikov": _epanechnikov,
}


def _as_bandwidth(h, d: int) -> NDArray[np.float64]:
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,)).copy()
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise ValueError(f"bandwidths must be strictly positive, got {h}")
    return h


@dataclass(frozen=True)
class SmootherSpec:
    """Kernel choice, bandwidths and trimming thresholds.

    ``h``, ``h_x`` and ``h_y`` are per-direction bandwidths (length ``d``) for
    generic conditional means, for ``E(x | u)`` and for the covariate
    direction of the conditional density; ``b`` is the response-direction
    bandwidth of the conditional density.
    """

    h: NDArray[np.float64]
    h_x: NDArray[np.float64]
    h_y: NDArray[np.float64]
    b: float
    kernel: str = "quartic"
    trim: float = 1e-4
    density_floor: float = 1e-4

    def __post_init__(self) -> None:
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; choose from {sorted(KERNELS)}")
        d = np.size(self.h)
        for name in ("h", "h_x", "h_y"):
            object.__setattr__(self, name, _as_bandwidth(getattr(self, name), d))
        if not (np.isfinite(self.b) and self.b > 0):
            raise ValueError(f"bandwidth b must be strictly positive, got {self.b}")
        if self.trim <= 0 or self.density_floor <= 0:
            raise ValueError("trim and density_floor must be positive")
        object.__setattr__(self, "b", float(self.b))

    @property
    def d(self) -> int:
        return int(np.size(self.h))

    @property
    def kernel_fn(self):
        return KERNELS[self.kernel]

    def with_overrides(self, **kw) -> "SmootherSpec":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def _rates(d: int) -> tuple[float, float, float, float]:
    # Exponents for (h, h_x, h_y, b); d = 1, 2 are the published choices and
    # larger d continues the same pattern.
    if d == 1:
        return 1 / 5, 1 / 5, 1 / 6, 1 / 7
    if d == 2:
        return 1 / 6, 1 / 6, 1 / 7, 1 / 8
    return 1 / (d + 4), 1 / (d + 4), 1 / (d + 5), 1 / (d + 6)


def default_bandwidths(
    n: int,
    d: int,
    scale,
    y_scale: float | None = None,
    **kw,
) -> SmootherSpec:
    """Rate-based bandwidths multiplied by the spread of each direction.

    Parameters
    ----------
    n : int
        Sample size.
    d : int
        Structural dimension.
    scale : array_like of length d
        Standard deviation of each projected covariate direction.
    y_scale : float, optional
        Spread of the response, used for ``b``.  Defaults to the geometric
        mean of ``scale``.
    **kw
        Passed on to :class:`SmootherSpec` (kernel, trim, density_floor).
    """
    if n < 2:
        raise ValueError("need n >= 2")
    scale = np.broadcast_to(np.asarray(scale, dtype=float), (d,))
    if np.any(scale <= 0):
        raise ValueError(f"scale entries must be positive, got {scale}")
    if y_scale is None:
        y_scale = float(np.exp(np.mean(np.log(scale))))
    elif y_scale <= 0:
        raise ValueError("y_scale must be positive")
    eh, ex, ey, eb = _rates(d)
    return SmootherSpec(
        h=n ** (-eh) * scale,
        h_x=n ** (-ex) * scale,
        h_y=n ** (-ey) * scale,
        b=n ** (-eb) * y_scale,
        **kw,
    )


def kernel_weights(U, u0, h, kernel: str = "quartic") -> NDArray[np.float64]:
    """Product-kernel matrix ``K_h(U_j - u_i)`` with shape ``(m, n)``.

    ``U`` holds the ``n`` source points and ``u0`` the ``m`` queries, both
    with ``d`` columns.
    """
    U = np.asarray(U, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    d = U.shape[1]
    if u0.shape[-1] != d and not (d == 1 and u0.ndim == 1):
        raise DimensionError(f"query has {u0.shape[-1]} columns, sources have {d}")
    u0 = u0.reshape(-1, d)
    h = _as_bandwidth(h, d)
    K = KERNELS[kernel]
    W = np.ones((u0.shape[0], U.shape[0]))
    for k in range(d):
        W *= K((U[None, :, k] - u0[:, None, k]) / h[k]) / h[k]
    return W


class NWRegressor:
    """Nadaraya-Watson estimate of ``E(targets | U = u)`` as a function of ``u``.

    The source sample is fixed at construction; calling the object evaluates
    the estimate at new query points.  Queries whose kernel density estimate
    ``mean_j K_h(U_j - u)`` falls below ``trim`` get a floored denominator
    and are flagged.
    """

    def __init__(self, U, targets, h, kernel: str = "quartic", trim: float = 1e-4):
        U = np.asarray(U, dtype=float)
        self.U = U[:, None] if U.ndim == 1 else U
        T = np.asarray(targets, dtype=float)
        self._vector = T.ndim == 1
        self.targets = T[:, None] if T.ndim == 1 else T
        if self.U.shape[0] == 0:
            raise ValueError("empty sample")
        if self.targets.shape[0] != self.U.shape[0]:
            raise DimensionError("targets and U have different numbers of rows")
        self.h = _as_bandwidth(h, self.U.shape[1])
        self.kernel = kernel
        self.trim = trim

    def evaluate(self, u) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
        """Return ``(estimates, trimmed)`` for a batch of query points."""
        u = np.asarray(u, dtype=float).reshape(-1, self.U.shape[1])
        W = kernel_weights(self.U, u, self.h, self.kernel)
        n = self.U.shape[0]
        dens = W.sum(axis=1) / n
        trimmed = dens < self.trim
        num = W @ self.targets / n
        est = num / np.maximum(dens, self.trim)[:, None]
        return est, trimmed

    def __call__(self, u) -> NDArray[np.float64]:
        return self.evaluate(u)[0]


def nw_regress(targets, U, u0, h, kernel: str = "quartic", trim: float = 1e-4):
    """Nadaraya-Watson estimate at a single point ``u0``.

    With a single observation the result is that observation's target row,
    whatever the distance to ``u0``.
    """
    T = np.asarray(targets, dtype=float)
    if T.shape[0] == 0:
        raise ValueError("empty sample")
    if T.shape[0] == 1:
        return T.reshape(1, -1)[0].copy()
    reg = NWRegressor(U, T, h, kernel, trim)
    return reg(np.atleast_1d(np.asarray(u0, dtype=float)))[0]


@dataclass
class ConditionalDensityFit:
    """Double-kernel local linear estimate of the density of Y given ``u``.

    At a query ``(y, u)`` the estimate solves the weighted least squares

        sum_i {K_b(Y_i - y) - a - c'(U_i - u)}^2 K_{h_y}(U_i - u)

    in closed form; ``a`` estimates the density and ``c`` its gradient in
    ``u``.  Where the local design is singular the local constant solution
    is used with zero gradient.
    """

    Y: NDArray[np.float64]
    U: NDArray[np.float64]
    spec: SmootherSpec
    _resp_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.Y = np.asarray(self.Y, dtype=float).ravel()
        U = np.asarray(self.U, dtype=float)
        self.U = U[:, None] if U.ndim == 1 else U
        n, d = self.U.shape
        if n != self.Y.size:
            raise DimensionError("Y and U have different numbers of rows")
        if n <= d + 1:
            raise ValueError(f"need n > d + 1 observations, got n={n}")

    @property
    def d(self) -> int:
        return self.U.shape[1]

    def response_kernel(self, y) -> NDArray[np.float64]:
        """``K_b(Y_j - y_i)`` with shape ``(m, n)``."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        b = self.spec.b
        return self.spec.kernel_fn((self.Y[None, :] - y[:, None]) / b) / b

    def bind(self, y, leave_one_out: bool = False) -> "BoundDensity":
        """Fix the response queries so that only ``u`` varies between calls.

        With ``leave_one_out`` the queries must be the fitted sample itself, in
        order, and query ``i`` ignores observation ``i``.
        """
        R = self.response_kernel(y)
        if leave_one_out and R.shape[0] != R.shape[1]:
            raise DimensionError("leave-one-out queries must be the fitted responses")
        return BoundDensity(self, R, leave_one_out)

    def evaluate(self, y, u):
        """Return ``(density, gradient, flagged)`` at paired queries ``(y_i, u_i)``.

        ``density`` is floored at ``spec.density_floor``; ``flagged`` marks
        queries that hit the floor or fell back to the local constant fit.
        """
        return self.bind(y)(u)

    def __call__(self, y, u):
        dens, grad, _ = self.evaluate(np.atleast_1d(y), np.atleast_2d(u))
        return float(dens[0]), grad[0]


class BoundDensity:
    def __init__(self, fit: ConditionalDensityFit, R: NDArray[np.float64], leave_one_out: bool = False):
        self.fit = fit
        self.R = R
        self.leave_one_out = leave_one_out

    def __call__(self, u):
        fit = self.fit
        spec = fit.spec
        d = fit.d
        u = np.asarray(u, dtype=float).reshape(-1, d)
        m = u.shape[0]
        if m != self.R.shape[0]:
            raise DimensionError("number of u queries does not match the bound y queries")
        hy = spec.h_y
        W = kernel_weights(fit.U, u, hy, spec.kernel)
        if self.leave_one_out:
            np.fill_diagonal(W, 0.0)
        # Regressors scaled by the bandwidth keep the local systems well conditioned.
        D = (fit.U[None, :, :] - u[:, None, :]) / hy
        WD = W[:, :, None] * D
        M = np.empty((m, d + 1, d + 1))
        M[:, 0, 0] = W.sum(axis=1)
        M[:, 0, 1:] = WD.sum(axis=1)
        M[:, 1:, 0] = M[:, 0, 1:]
        M[:, 1:, 1:] = np.einsum("mnk,mnl->mkl", WD, D)
        rhs = np.empty((m, d + 1))
        WR = W * self.R
        rhs[:, 0] = WR.sum(axis=1)
        rhs[:, 1:] = np.einsum("mnk,mn->mk", D, WR)

        s0 = M[:, 0, 0]
        dens = np.zeros(m)
        grad = np.zeros((m, d))
        flagged = np.zeros(m, dtype=bool)

        empty = s0 <= 0
        flagged |= empty
        # Rescale each system by its total weight before judging conditioning.
        scale = np.where(empty, 1.0, s0)
        Ms = M / scale[:, None, None]
        rs = rhs / scale[:, None]
        sv = np.linalg.svd(Ms, compute_uv=False)
        ok = ~empty & (sv[:, -1] > 1e-10 * sv[:, 0])
        if np.any(ok):
            sol = np.linalg.solve(Ms[ok], rs[ok][..., None])[..., 0]
            dens[ok] = sol[:, 0]
            grad[ok] = sol[:, 1:] / hy
        const = ~empty & ~ok
        if np.any(const):
            dens[const] = rs[const, 0]
            flagged |= const
        low = dens < spec.density_floor
        flagged |= low
        dens = np.maximum(dens, spec.density_floor)
        return dens, grad, flagged


def fit_conditional_density(Y, U, spec: SmootherSpec) -> ConditionalDensityFit:
    return ConditionalDensityFit(Y, U, spec)


def log_density_gradient(fit: ConditionalDensityFit, y, u) -> NDArray[np.float64]:
    """Estimated gradient of ``log eta_2(y, u)`` in ``u``: gradient / floored density."""
    dens, grad, _ = fit.evaluate(np.atleast_1d(y), np.atleast_2d(u))
    out = grad / dens[:, None]
    return out[0] if np.ndim(y) == 0 else out
