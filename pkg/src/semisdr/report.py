"""Serialization of Monte Carlo reports as text, CSV or JSON tables.

Rows are (estimator, statistic) pairs and columns are the aligned
coefficients in column-major order.  CSV output carries the run settings in
leading ``#`` comment lines so that it reads back into the same report.
"""

from __future__ import annotations

import csv
import io
import json
import math

from .simulation import STATISTICS, MCReport

__all__ = ["report_table", "read_table", "STAT_LABELS"]

STAT_LABELS = {
    "ave": "ave",
    "std": "std",
    "std_hat": "std_hat",
    "std_hat_median": "std_hat_med",
    "coverage95": "95%",
}
_LABEL_TO_STAT = {v: k for k, v in STAT_LABELS.items()}


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def _to_json(report: MCReport) -> str:
    payload = {
        "scenario": report.scenario,
        "n": report.n,
        "reps": report.reps,
        "seed": report.seed,
        "columns": report.columns,
        "truth": report.truth,
        "estimators": report.estimators,
        "failures": report.failures,
        "stats": {
            est: {s: [None if math.isnan(v) else v for v in vals] for s, vals in st.items()}
            for est, st in report.stats.items()
        },
    }
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


def _to_csv(report: MCReport) -> str:
    buf = io.StringIO()
    buf.write(f"# scenario={report.scenario}\n# n={report.n}\n# reps={report.reps}\n# seed={report.seed}\n")
    for est in report.estimators:
        buf.write(f"# failures.{est}={report.failures.get(est, 0)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["estimator", "statistic", *report.columns])
    w.writerow(["truth", "value", *(_fmt(v) for v in report.truth)])
    for est in report.estimators:
        for s in STATISTICS:
            w.writerow([est, STAT_LABELS[s], *(_fmt(v) for v in report.stats[est][s])])
    return buf.getvalue()


def _to_text(report: MCReport) -> str:
    head = f"scenario={report.scenario} n={report.n} reps={report.reps} seed={report.seed}"
    width = 10
    lines = [head, f"{'':<10}{'':<12}" + "".join(f"{c:>{width}}" for c in report.columns)]
    lines.append(f"{'truth':<10}{'':<12}" + "".join(f"{v:>{width}.4f}" for v in report.truth))
    for est in report.estimators:
        for i, s in enumerate(STATISTICS):
            name = est if i == 0 else ""
            vals = "".join(
                f"{'NA':>{width}}" if math.isnan(v) else f"{v:>{width}.4f}" for v in report.stats[est][s]
            )
            lines.append(f"{name:<10}{STAT_LABELS[s]:<12}{vals}")
        fails = report.failures.get(est, 0)
        if fails:
            lines.append(f"{'':<10}failures: {fails}")
    return "\n".join(lines) + "\n"


def report_table(report: MCReport, format: str = "text") -> str:
    if format == "json":
        return _to_json(report)
    if format == "csv":
        return _to_csv(report)
    if format == "text":
        return _to_text(report)
    raise ValueError(f"unknown format {format!r}; use text, csv or json")


def read_table(text: str, format: str) -> MCReport:
    """Parse CSV or JSON output of :func:`report_table` back into a report."""
    if format == "json":
        d = json.loads(text)
        stats = {
            est: {s: [math.nan if v is None else float(v) for v in vals] for s, vals in st.items()}
            for est, st in d["stats"].items()
        }
        return MCReport(
            scenario=d["scenario"], n=d["n"], reps=d["reps"], seed=d["seed"],
            columns=list(d["columns"]), truth=[float(v) for v in d["truth"]],
            stats=stats, failures={k: int(v) for k, v in d["failures"].items()},
            estimators=list(d["estimators"]),
        )
    if format != "csv":
        raise ValueError(f"cannot read format {format!r}")
    meta: dict = {}
    failures: dict = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            if key.startswith("failures."):
                failures[key[len("failures."):]] = int(val)
            else:
                meta[key] = val
        elif line.strip():
            body.append(line)
    rows = list(csv.reader(body))
    columns = rows[0][2:]
    truth: list = []
    stats: dict = {}
    order: list = []
    for est, lab, *vals in rows[1:]:
        nums = [float(v) for v in vals]
        if est == "truth":
            truth = nums
            continue
        if est not in stats:
            stats[est] = {}
            order.append(est)
        stats[est][_LABEL_TO_STAT[lab]] = nums
    return MCReport(
        scenario=meta.get("scenario", ""), n=int(meta.get("n", 0)), reps=int(meta.get("reps", 0)),
        seed=int(meta.get("seed", 0)), columns=columns, truth=truth, stats=stats,
        failures=failures, estimators=order,
    )
