"""Command-line interface: ``semisdr {fit,simulate,mc,r2scan}``.

Exit codes: 0 success, 2 validation error, 3 convergence failure, 4 I/O error.
Settings may also come from a flat ``key=value`` file given by ``--config``;
flags on the command line win over the file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines
from .errors import DegenerateDesignError, PivotError, SDRError
from .estimators import ESTIMATORS, fit
from .inference import cubic_r2, wald_pvalues
from .params import normalize_upper, standardize
from .report import report_table
from .simulation import SCENARIOS, get_scenario, run_monte_carlo, scenario_from_config

__all__ = ["main", "load_csv", "RunConfig", "CLIError", "parse_config_file"]

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4
MISSING = {"", "na", "nan", "null", "none", "n/a"}


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    command: str
    data: str | None = None
    response: str | None = None
    covariates: list[str] | None = None
    scenario: str = "example1"
    estimators: list[str] = field(default_factory=lambda: ["eff"])
    d: int = 1
    pivot: str | None = None
    bandwidth: dict = field(default_factory=dict)
    seed: int = 0
    reps: int = 200
    n: int = 500
    workers: int = 1
    format: str = "text"
    out: str | None = None
    level: float = 0.95
    custom: dict | None = None
    slicing: str | None = None

    def validate(self, p: int | None = None) -> None:
        if self.d < 1:
            raise CLIError("d must be at least 1")
        if p is not None and self.d >= p:
            raise CLIError(f"d = {self.d} must be smaller than the number of covariates ({p})")
        if not 0 < self.level < 1:
            raise CLIError("level must lie in (0, 1)")
        if self.format not in ("text", "csv", "json"):
            raise CLIError(f"unknown format {self.format!r}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            raise CLIError(f"unknown estimator(s) {', '.join(bad)}; valid: {', '.join(ESTIMATORS)}")


# --------------------------------------------------------------------------
# Input


def parse_config_file(path: str) -> dict:
    """Read ``key=value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CLIError(f"cannot read config file {path}: {exc}", EXIT_IO) from exc
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CLIError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def load_csv(path, response_column: str, covariate_columns=None):
    """Read a numeric CSV with a header row.

    Returns ``(Y, X, covariate_names)``.  Missing or unparsable cells raise
    :class:`CLIError` naming the (1-based, header excluded) row and column.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    if not rows:
        raise CLIError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if response_column not in header:
        raise CLIError(f"response column {response_column!r} not found; columns: {', '.join(header)}")
    if covariate_columns is None:
        covariate_columns = [h for h in header if h != response_column]
    missing_cols = [c for c in covariate_columns if c not in header]
    if missing_cols:
        raise CLIError(f"covariate column(s) not found: {', '.join(missing_cols)}")
    cols = [response_column, *covariate_columns]
    idx = [header.index(c) for c in cols]
    data = np.empty((len(rows) - 1, len(cols)))
    missing = []
    for i, row in enumerate(rows[1:], 1):
        if len(row) != len(header):
            raise CLIError(f"row {i} has {len(row)} fields, header has {len(header)}")
        for j, (c, k) in enumerate(zip(cols, idx)):
            cell = row[k].strip()
            if cell.lower() in MISSING:
                missing.append((i, c))
                continue
            try:
                data[i - 1, j] = float(cell)
            except ValueError:
                raise CLIError(f"row {i}, column {c!r}: cannot parse {cell!r} as a number") from None
    if missing:
        listing = "; ".join(f"row {r} column {c!r}" for r, c in missing[:20])
        more = f" (and {len(missing) - 20} more)" if len(missing) > 20 else ""
        raise CLIError(f"missing values at {listing}{more}")
    X = data[:, 1:]
    for j, c in enumerate(covariate_columns):
        if X.shape[0] and np.all(X[:, j] == X[0, j]):
            raise CLIError(f"covariate column {c!r} is constant; it cannot be standardized")
    return data[:, 0], X, list(covariate_columns)


def _parse_bandwidth(text: str | None) -> dict:
    if not text:
        return {}
    names = {"h": "h", "hx": "h_x", "h_x": "h_x", "hy": "h_y", "h_y": "h_y", "b": "b"}
    out = {}
    for part in text.split(","):
        key, _, val = part.partition("=")
        key = key.strip()
        if key not in names:
            raise CLIError(f"unknown bandwidth {key!r}; use h, hx, hy, b")
        try:
            v = float(val)
        except ValueError:
            raise CLIError(f"bandwidth {key} must be a number, got {val!r}") from None
        if v <= 0:
            raise CLIError(f"bandwidth {key} must be positive")
        out[names[key]] = v
    return out


def _resolve_pivot(spec: str | None, Y, X, names: list[str], d: int) -> list[int]:
    if spec is None or spec == "":
        return list(range(d))
    if spec == "auto-corr":
        r = np.array([abs(np.corrcoef(X[:, j], Y)[0, 1]) for j in range(X.shape[1])])
        return [int(j) for j in np.argsort(-r, kind="stable")[:d]]
    picks = []
    for tok in spec.split(","):
        tok = tok.strip()
        if tok in names:
            picks.append(names.index(tok))
        elif tok.isdigit() and 1 <= int(tok) <= len(names):
            picks.append(int(tok) - 1)
        else:
            raise CLIError(f"pivot column {tok!r} not found")
    if len(picks) != d or len(set(picks)) != d:
        raise CLIError(f"pivot needs {d} distinct columns, got {spec!r}")
    return picks


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CLIError(f"cannot write {out}: {exc}", EXIT_IO) from exc


# --------------------------------------------------------------------------
# Commands


def _fit_one(est, Y, X, d, cfg):
    """Return (original-scale basis, se of free coefficients or None, FitResult or None)."""
    if est in ("sir", "dr"):
        f = baselines.sir_estimate if est == "sir" else baselines.dr_estimate
        return f(Y, X, d, scheme=cfg.slicing or "quantile"), None, None
    if est == "oracle":
        raise CLIError("the oracle estimator needs a known density; use it with the mc command")
    method = {"eff": "efficient"}.get(est, est)
    res = fit(Y, X, d, method, bandwidths=cfg.bandwidth or None)
    return res.beta_original, res.se_original, res


def _trace_path(cfg: RunConfig) -> str:
    base = cfg.out if cfg.out and cfg.out != "-" else "semisdr-fit"
    return base + ".trace.json"


def _dump_trace(res, path: str) -> None:
    trace = [
        {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in entry.items()}
        for entry in res.iterations
    ]
    try:
        Path(path).write_text(json.dumps(trace, indent=1), encoding="utf-8")
    except OSError:
        pass


def cmd_fit(cfg: RunConfig) -> int:
    if not cfg.data or not cfg.response:
        raise CLIError("fit needs --data and --response")
    Y, X, names = load_csv(cfg.data, cfg.response, cfg.covariates)
    cfg.validate(X.shape[1])
    pivot = _resolve_pivot(cfg.pivot, Y, X, names, cfg.d)
    order = pivot + [j for j in range(len(names)) if j not in pivot]
    X = X[:, order]
    names = [names[j] for j in order]
    try:
        standardize(X)
    except DegenerateDesignError as exc:
        raise CLIError(f"covariates cannot be standardized: {exc}") from exc
    est = cfg.estimators[0]
    try:
        B, se, res = _fit_one(est, Y, X, cfg.d, cfg)
    except PivotError as exc:
        raise CLIError(f"{exc} (choose a different --pivot)") from exc
    if res is not None and not res.converged:
        path = _trace_path(cfg)
        _dump_trace(res, path)
        sys.stderr.write(f"estimator {est} did not converge (|mean score| = {res.score_norm:.3e}); trace: {path}\n")
        return EXIT_CONVERGENCE
    d = cfg.d
    p = X.shape[1]
    coef = B[d:].reshape(-1, order="F")
    labels = [names[j] if d == 1 else f"{names[j]}[{k + 1}]" for k in range(d) for j in range(d, p)]
    pvals = wald_pvalues(coef, se) if se is not None else [math.nan] * coef.size
    se = se if se is not None else [math.nan] * coef.size
    rows = [
        {"coefficient": lab, "estimate": float(c), "se": float(s), "p_value": float(pv)}
        for lab, c, s, pv in zip(labels, coef, se, pvals)
    ]
    fixed = [names[j] for j in range(d)]
    _write(_coef_table(rows, est, fixed, cfg), cfg.out)
    return EXIT_OK


def _coef_table(rows, est, fixed, cfg) -> str:
    if cfg.format == "json":
        return json.dumps({"estimator": est, "pivot": fixed, "coefficients": rows}, indent=2) + "\n"
    if cfg.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["coefficient", "estimate", "se", "p_value"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()
    lines = [f"estimator: {est}   pivot (fixed to identity): {', '.join(fixed)}",
             f"{'':<16}{'coef.':>12}{'std.':>12}{'p-value':>12}"]
    for r in rows:
        pv = r["p_value"]
        ptxt = "NA" if math.isnan(pv) else ("<1e-4" if pv < 1e-4 else f"{pv:.3f}")
        se = "NA" if math.isnan(r["se"]) else f"{r['se']:.3f}"
        lines.append(f"{r['coefficient']:<16}{r['estimate']:>12.3f}{se:>12}{ptxt:>12}")
    return "\n".join(lines) + "\n"


def cmd_simulate(cfg: RunConfig) -> int:
    sc = _scenario(cfg)
    if cfg.n < 1:
        raise CLIError("n must be at least 1")
    X, Y = sc.sample(cfg.n, np.random.default_rng(cfg.seed))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Y", *(f"X{j + 1}" for j in range(sc.p))])
    for y, x in zip(Y, X):
        w.writerow([repr(float(y)), *(repr(float(v)) for v in x)])
    _write(buf.getvalue(), cfg.out)
    return EXIT_OK


def _scenario(cfg: RunConfig):
    if cfg.custom:
        try:
            return scenario_from_config(cfg.custom)
        except (KeyError, ValueError) as exc:
            raise CLIError(f"invalid custom scenario: {exc}") from exc
    if cfg.scenario not in SCENARIOS:
        raise CLIError(f"unknown scenario {cfg.scenario!r}; valid names: {', '.join(sorted(SCENARIOS))}")
    return get_scenario(cfg.scenario)


def cmd_mc(cfg: RunConfig) -> int:
    cfg.validate()
    if cfg.reps < 1:
        raise CLIError("reps must be at least 1")
    if cfg.n < 10:
        raise CLIError("n must be at least 10")
    sc = _scenario(cfg)
    sys.stderr.write(
        f"mc scenario={sc.name} estimators={','.join(cfg.estimators)} n={cfg.n} "
        f"reps={cfg.reps} seed={cfg.seed} workers={cfg.workers}\n"
    )
    extra = {"slicing": cfg.slicing} if cfg.slicing else {}
    report = run_monte_carlo(
        sc.name, cfg.estimators, cfg.n, cfg.reps, cfg.seed, cfg.workers,
        custom=cfg.custom, level=cfg.level, bandwidths=cfg.bandwidth or None, **extra,
    )
    _write(report_table(report, cfg.format), cfg.out)
    return EXIT_OK


def cmd_r2scan(cfg: RunConfig) -> int:
    if not cfg.data or not cfg.response:
        raise CLIError("r2scan needs --data and --response")
    Y, X, names = load_csv(cfg.data, cfg.response, cfg.covariates)
    if cfg.d != 1:
        raise CLIError("r2scan works with single-index (d = 1) fits")
    cfg.validate(X.shape[1])
    pivot = _resolve_pivot(cfg.pivot, Y, X, names, 1)
    order = pivot + [j for j in range(len(names)) if j not in pivot]
    X = X[:, order]
    rows = []
    code = EXIT_OK
    for est in cfg.estimators:
        B, _, res = _fit_one(est, Y, X, 1, cfg)
        if res is not None and not res.converged:
            code = EXIT_CONVERGENCE
        rows.append({"estimator": est, "adj_r2": cubic_r2(Y, X @ B[:, 0]),
                     "converged": True if res is None else bool(res.converged)})
    if cfg.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    elif cfg.format == "csv":
        text = "estimator,adj_r2,converged\n" + "".join(
            f"{r['estimator']},{r['adj_r2']!r},{r['converged']}\n" for r in rows)
    else:
        text = f"{'estimator':<12}{'adj. r2':>10}\n" + "".join(
            f"{r['estimator']:<12}{r['adj_r2']:>10.4f}{'' if r['converged'] else '  (not converged)'}\n" for r in rows)
    _write(text, cfg.out)
    return code


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "mc": cmd_mc, "r2scan": cmd_r2scan}


# --------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--scenario")
    common.add_argument("--data", help="CSV input with a header row")
    common.add_argument("--response", help="response column name")
    common.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    common.add_argument("--estimators", "--estimator", dest="estimators", help="comma-separated estimator names")
    common.add_argument("--n", type=int)
    common.add_argument("--reps", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--d", type=int)
    common.add_argument("--pivot", help="'auto-corr' or comma-separated column names/1-based indices")
    common.add_argument("--bandwidth", help="overrides, e.g. h=0.3,hx=0.3,hy=0.4,b=0.5")
    common.add_argument("--level", type=float)
    common.add_argument("--slicing", choices=list(baselines.SCHEMES),
                        help="SIR/DR slices (fit, r2scan default quantile; mc default uniform)")
    common.add_argument("--format", choices=["text", "csv", "json"])
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="semisdr", description="Efficient estimation of the central subspace.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="fit an estimator to CSV data")
    sub.add_parser("simulate", parents=[common], help="write a simulated data set as CSV")
    sub.add_parser("mc", parents=[common], help="Monte Carlo study of a scenario")
    sub.add_parser("r2scan", parents=[common], help="adjusted r-squared of cubic fits on each estimated index")
    return parser


def _config_from(ns: argparse.Namespace) -> RunConfig:
    file_cfg = parse_config_file(ns.config) if ns.config else {}
    custom = {k[len("scenario."):]: v for k, v in file_cfg.items() if k.startswith("scenario.")}

    def pick(name, conv=str, default=None):
        val = getattr(ns, name, None)
        if val is None and name in file_cfg:
            try:
                val = conv(file_cfg[name])
            except ValueError:
                raise CLIError(f"config value {name}={file_cfg[name]!r} is invalid") from None
        return default if val is None else val

    est_default = {"mc": "oracle,eff,local,sir,dr", "r2scan": "sir,dr,eff"}.get(ns.command, "eff")
    covs = pick("covariates")
    cfg = RunConfig(
        command=ns.command,
        data=pick("data"),
        response=pick("response"),
        covariates=[c.strip() for c in covs.split(",")] if covs else None,
        scenario=pick("scenario", default="example1"),
        estimators=[e.strip() for e in pick("estimators", default=est_default).split(",") if e.strip()],
        d=pick("d", int, 1),
        pivot=pick("pivot"),
        bandwidth=_parse_bandwidth(pick("bandwidth")),
        seed=pick("seed", int, 0),
        reps=pick("reps", int, 200),
        n=pick("n", int, 500),
        workers=pick("workers", int, int(os.environ.get("SDR_WORKERS", "1"))),
        format=pick("format", default="text"),
        out=pick("out"),
        level=pick("level", float, 0.95),
        custom=custom or None,
        slicing=pick("slicing"),
    )
    cfg.estimators = [{"efficient": "eff"}.get(e, e) for e in cfg.estimators]
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        ns = build_parser().parse_args(argv)
        if ns.verbose:
            logging.getLogger("semisdr").setLevel(logging.INFO)
        cfg = _config_from(ns)
        cfg.validate()
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[cfg.command](cfg)
    except CLIError as exc:
        sys.stderr.write(f"semisdr: error: {exc}\n")
        return exc.code
    except SDRError as exc:
        sys.stderr.write(f"semisdr: error: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
