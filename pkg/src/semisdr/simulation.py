"""Data-generating scenarios and the Monte Carlo replication engine."""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .params import Standardizer

__all__ = [
    "Scenario",
    "WorkingOracle",
    "make_example1",
    "make_example2",
    "make_example3",
    "SCENARIOS",
    "get_scenario",
    "scenario_from_config",
    "MCReport",
    "run_monte_carlo",
    "coefficient_names",
]

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Scenario:
    """A heteroscedastic normal single- or multi-index model.

    ``Y | x ~ N(mean(t), variance(t))`` with ``t = x' beta_true`` (a row of
    length ``d``).  The gradient callables return ``n x d`` arrays and may be
    ``None``, in which case central differences are used.
    """

    name: str
    beta_true: NDArray[np.float64]
    covariate_sampler: Callable[[np.random.Generator, int], NDArray[np.float64]]
    mean_fn: Callable
    var_fn: Callable
    mean_grad: Callable | None = None
    var_grad: Callable | None = None

    @property
    def p(self) -> int:
        return self.beta_true.shape[0]

    @property
    def d(self) -> int:
        return self.beta_true.shape[1]

    def index(self, X) -> NDArray[np.float64]:
        return np.asarray(X, dtype=float) @ self.beta_true

    def response_sampler(self, X, rng: np.random.Generator) -> NDArray[np.float64]:
        t = self.index(X)
        e = rng.standard_normal(t.shape[0])
        return self.mean_fn(t) + np.sqrt(self.var_fn(t)) * e

    def sample(self, n: int, rng: np.random.Generator):
        X = self.covariate_sampler(rng, n)
        Y = self.response_sampler(X, rng)
        return X, Y

    def _grad(self, fn, analytic, t):
        if analytic is not None:
            return np.asarray(analytic(t), dtype=float).reshape(t.shape)
        out = np.empty_like(t)
        for k in range(t.shape[1]):
            eps = 1e-6 * np.maximum(1.0, np.abs(t[:, k]))
            tp, tm = t.copy(), t.copy()
            tp[:, k] += eps
            tm[:, k] -= eps
            out[:, k] = (fn(tp) - fn(tm)) / (2 * eps)
        return out

    def true_density(self, y, t) -> NDArray[np.float64]:
        t = np.asarray(t, dtype=float).reshape(-1, self.d)
        y = np.asarray(y, dtype=float).ravel()
        m, v = self.mean_fn(t), self.var_fn(t)
        return np.exp(-0.5 * (_LOG_2PI + np.log(v)) - 0.5 * (y - m) ** 2 / v)

    def true_logdensity_gradient(self, y, t) -> NDArray[np.float64]:
        """Gradient of ``log eta_2(y, t)`` in the index ``t``; shape ``n x d``."""
        t = np.asarray(t, dtype=float).reshape(-1, self.d)
        y = np.asarray(y, dtype=float).ravel()
        m, v = self.mean_fn(t), self.var_fn(t)
        dm = self._grad(self.mean_fn, self.mean_grad, t)
        dv = self._grad(self.var_fn, self.var_grad, t)
        r = y - m
        return (r / v)[:, None] * dm + (0.5 * (r * r / v - 1.0) / v)[:, None] * dv

    def working_oracle(self, S: Standardizer) -> "WorkingOracle":
        return WorkingOracle(self, S)


class WorkingOracle:
    """True conditional density expressed in the standardized-scale index.

    On the standardized scale the true basis with identity upper block is
    ``gamma = D beta C^{-1}`` with ``D`` the dewhitener and
    ``C = (D beta)_upper``, so ``t = mean' beta + u C`` where
    ``u = z' gamma``.
    """

    def __init__(self, scenario: Scenario, S: Standardizer):
        self.scenario = scenario
        beta = scenario.beta_true
        d = scenario.d
        self.offset = S.mean @ beta
        self.C = (S.dewhitener @ beta)[:d]

    def to_index(self, u) -> NDArray[np.float64]:
        u = np.asarray(u, dtype=float).reshape(-1, self.scenario.d)
        return self.offset + u @ self.C

    def density(self, y, u):
        return self.scenario.true_density(y, self.to_index(u))

    def log_gradient(self, y, u):
        g = self.scenario.true_logdensity_gradient(y, self.to_index(u))
        return g @ self.C.T


# --------------------------------------------------------------------------
# The three simulation designs


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def _covariates_12(rng: np.random.Generator, n: int) -> NDArray[np.float64]:
    x1, x2, e1, e2 = rng.standard_normal((4, n))
    x3 = 0.2 * x1 + 0.2 * (x2 + 2.0) ** 2 + 0.2 * e1
    x4 = 0.1 + 0.1 * (x1 + x2) + 0.3 * (x1 + 1.5) ** 2 + 0.2 * e2
    x5 = (rng.random(n) < _expit(x1)).astype(float)
    x6 = (rng.random(n) < _expit(x2)).astype(float)
    return np.column_stack([x1, x2, x3, x4, x5, x6])


def _covariates_3(rng: np.random.Generator, n: int) -> NDArray[np.float64]:
    u1 = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    u2 = np.where(rng.random(n) < 0.7, math.sqrt(3 / 7), -math.sqrt(7 / 3))
    r3 = math.sqrt(3.0)
    u3, u4, u5, u6 = rng.uniform(-r3, r3, size=(4, n))
    return np.column_stack([u1 - u2, u2 - u3 - u4, u3 + u4, 2.0 * u4, u5 + 0.5 * u6, u6])


BETA_12 = np.array([[1.3], [-1.3], [1.0], [-0.5], [0.5], [-0.5]])
BETA_3 = np.array(
    [
        [1.0, 0.8],
        [2 / 3, 0.8],
        [2 / 3, -0.3],
        [0.0, 0.3],
        [-1 / 3, 0.0],
        [2 / 3, 0.0],
    ]
)


def _example1() -> Scenario:
    return Scenario(
        "example1",
        BETA_12,
        _covariates_12,
        mean_fn=lambda t: t[:, 0],
        var_fn=lambda t: np.ones(t.shape[0]),
        mean_grad=lambda t: np.ones_like(t),
        var_grad=lambda t: np.zeros_like(t),
    )


def _example2() -> Scenario:
    return Scenario(
        "example2",
        BETA_12,
        _covariates_12,
        mean_fn=lambda t: np.sin(2 * t[:, 0]) + 2 * np.exp(2 + t[:, 0]),
        var_fn=lambda t: np.log(2 + t[:, 0] ** 2),
        mean_grad=lambda t: 2 * np.cos(2 * t) + 2 * np.exp(2 + t),
        var_grad=lambda t: 2 * t / (2 + t**2),
    )


def _example3() -> Scenario:
    return Scenario(
        "example3",
        BETA_3,
        _covariates_3,
        mean_fn=lambda t: 2 * t[:, 0] ** 2,
        var_fn=lambda t: 2 * np.exp(t[:, 1]),
        mean_grad=lambda t: np.column_stack([4 * t[:, 0], np.zeros(t.shape[0])]),
        var_grad=lambda t: np.column_stack([np.zeros(t.shape[0]), 2 * np.exp(t[:, 1])]),
    )


SCENARIOS: dict[str, Callable[[], Scenario]] = {
    "example1": _example1,
    "example2": _example2,
    "example3": _example3,
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]()
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; valid names: {', '.join(sorted(SCENARIOS))}") from None


def _make(name, n, seed):
    sc = get_scenario(name)
    X, Y = sc.sample(n, np.random.default_rng(seed))
    return X, Y, sc


def make_example1(n: int, seed):
    """Linear mean, unit variance; covariates violate the linearity condition."""
    return _make("example1", n, seed)


def make_example2(n: int, seed):
    """Nonlinear mean, heteroscedastic variance, same covariates as example 1."""
    return _make("example2", n, seed)


def make_example3(n: int, seed):
    """Two-index model with discrete and uniform latent covariates."""
    return _make("example3", n, seed)


_EXPR_NAMESPACE = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "arctan", "pi")
}


def _expr_fn(expr: str, d: int):
    code = compile(expr, "<scenario>", "eval")

    def fn(t):
        t = np.asarray(t, dtype=float).reshape(-1, d)
        env = dict(_EXPR_NAMESPACE)
        env.update({f"t{k + 1}": t[:, k] for k in range(d)})
        env["t"] = t[:, 0]
        out = eval(code, {"__builtins__": {}}, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (t.shape[0],)).copy()

    return fn


def scenario_from_config(cfg: dict) -> Scenario:
    """Build a custom normal-response scenario from flat key/value settings.

    Keys: ``name``, ``beta`` (comma-separated, column-major ``p x d``),
    ``d`` (default 1), ``covariates`` (``normal`` or ``uniform``), ``mean``
    and ``variance`` (numpy expressions in ``t1..td``).  Gradients of the
    oracle density are taken by central differences.
    """
    d = int(cfg.get("d", 1))
    beta = np.array([float(v) for v in str(cfg["beta"]).split(",")])
    if beta.size % d:
        raise ValueError("beta length is not a multiple of d")
    p = beta.size // d
    beta = beta.reshape(p, d, order="F")
    kind = cfg.get("covariates", "normal")
    if kind == "normal":
        sampler = lambda rng, n: rng.standard_normal((n, p))  # noqa: E731
    elif kind == "uniform":
        r3 = math.sqrt(3.0)
        sampler = lambda rng, n: rng.uniform(-r3, r3, size=(n, p))  # noqa: E731
    else:
        raise ValueError(f"unknown covariate law {kind!r}")
    return Scenario(
        str(cfg.get("name", "custom")),
        beta,
        sampler,
        mean_fn=_expr_fn(str(cfg.get("mean", "t1")), d),
        var_fn=_expr_fn(str(cfg.get("variance", "1")), d),
    )


# --------------------------------------------------------------------------
# Monte Carlo


def coefficient_names(p: int, d: int) -> list[str]:
    sub = str.maketrans("0123456789", "₀₁₂₃₄₅₆₇₈₉")
    if d == 1:
        return [f"β{str(j + 1).translate(sub)}" for j in range(p)]
    return [f"β{(str(j + 1) + str(k + 1)).translate(sub)}" for k in range(d) for j in range(p)]


STATISTICS = ("ave", "std", "std_hat", "std_hat_median", "coverage95")


@dataclass
class MCReport:
    """Per-estimator, per-coefficient Monte Carlo summaries.

    ``stats[estimator][statistic]`` is a list over coefficients (column-major
    over the aligned ``p x d`` basis).  Statistics that are undefined, such
    as a standard deviation from one replication or inference for the
    eigen-decomposition baselines, are ``nan``.
    """

    scenario: str
    n: int
    reps: int
    seed: int
    columns: list[str]
    truth: list[float]
    stats: dict[str, dict[str, list[float]]] = field(default_factory=dict)
    failures: dict[str, int] = field(default_factory=dict)
    estimators: list[str] = field(default_factory=list)

    def get(self, estimator: str, statistic: str) -> NDArray[np.float64]:
        return np.asarray(self.stats[estimator][statistic], dtype=float)


def _summarise(est, se, cover):
    k = est.shape[1] if est.ndim == 2 else 0
    nan = np.full(k, np.nan)
    if est.shape[0] == 0:
        return {s: nan.tolist() for s in STATISTICS}
    ave = est.mean(axis=0)
    std = est.std(axis=0, ddof=1) if est.shape[0] > 1 else nan
    if se is not None and np.all(np.isfinite(se)):
        shat, smed, cov = se.mean(axis=0), np.median(se, axis=0), cover.mean(axis=0)
    else:
        shat = smed = cov = nan
    return {
        "ave": ave.tolist(),
        "std": np.asarray(std).tolist(),
        "std_hat": np.asarray(shat).tolist(),
        "std_hat_median": np.asarray(smed).tolist(),
        "coverage95": np.asarray(cov).tolist(),
    }


def _one_rep(args):
    from .estimators import replicate_estimators

    scenario_name, custom, estimators, n, seed, rep, options = args
    scenario = scenario_from_config(custom) if custom else get_scenario(scenario_name)
    rng = np.random.default_rng([seed, rep])
    X, Y = scenario.sample(n, rng)
    return replicate_estimators(X, Y, scenario, estimators, rng=rng, **options)


def run_monte_carlo(
    scenario: Scenario | str,
    estimators: Sequence[str],
    n: int,
    reps: int,
    seed: int = 0,
    workers: int | None = None,
    custom: dict | None = None,
    level: float = 0.95,
    **options,
) -> MCReport:
    """Replicate data generation and estimation; summarise aligned estimates.

    Replication ``r`` draws from ``default_rng([seed, r])``, so results do not
    depend on the worker count.  Replications where an estimator fails to
    converge are excluded for that estimator and counted.  ``options`` are
    passed to :func:`semisdr.estimators.replicate_estimators` (for example
    ``pilot="perturbed"``).
    """
    from .estimators import ESTIMATORS

    if reps < 1:
        raise ValueError("reps must be at least 1")
    unknown = [e for e in estimators if e not in ESTIMATORS]
    if unknown:
        raise ValueError(f"unknown estimator(s) {unknown}; valid: {sorted(ESTIMATORS)}")
    if isinstance(scenario, Scenario):
        sc = scenario
        name = scenario.name
    else:
        name = scenario
        sc = scenario_from_config(custom) if custom else get_scenario(name)
    if custom is None and name not in SCENARIOS:
        raise ValueError(f"scenario {name!r} needs a custom configuration")
    workers = workers or int(os.environ.get("SDR_WORKERS", "1"))
    options = dict(options, level=level)
    jobs = [(name, custom, list(estimators), n, seed, r, options) for r in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_rep, jobs))
    else:
        results = [_one_rep(j) for j in jobs]

    truth = sc.beta_true.reshape(-1, order="F")
    report = MCReport(
        scenario=name, n=n, reps=reps, seed=seed,
        columns=coefficient_names(sc.p, sc.d), truth=truth.tolist(),
        estimators=list(estimators),
    )
    for est in estimators:
        rows = [r[est] for r in results]
        ok = [r for r in rows if r["converged"]]
        fails = len(rows) - len(ok)
        report.failures[est] = fails
        if fails > 0.02 * reps:
            warnings.warn(f"{est}: {fails} of {reps} replications failed", RuntimeWarning, stacklevel=2)
        values = np.array([r["aligned"] for r in ok]).reshape(len(ok), truth.size)
        se = cover = None
        if ok and all(r["se"] is not None for r in ok):
            se = np.array([r["se"] for r in ok])
            z = _normal_quantile(0.5 + level / 2)
            cover = np.abs(values - truth) <= z * se
        report.stats[est] = _summarise(values, se, cover)
    return report


def _normal_quantile(q: float) -> float:
    from scipy.stats import norm

    return float(norm.ppf(q))
