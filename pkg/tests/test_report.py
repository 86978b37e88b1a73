import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semisdr.report import STAT_LABELS, read_table, report_table
from semisdr.simulation import STATISTICS, MCReport, coefficient_names


def _report(values=None, estimators=("oracle", "eff")):
    rng = np.random.default_rng(0)
    stats = {}
    for est in estimators:
        stats[est] = {s: (rng.standard_normal(6) if values is None else values).tolist() for s in STATISTICS}
    if "eff" in stats:
        stats["eff"]["std_hat"] = [math.nan] * 6
    return MCReport(
        scenario="example1", n=500, reps=200, seed=7, columns=coefficient_names(6, 1),
        truth=[1.3, -1.3, 1.0, -0.5, 0.5, -0.5], stats=stats,
        failures={e: i for i, e in enumerate(estimators)}, estimators=list(estimators),
    )


def _same(a: MCReport, b: MCReport):
    assert (a.scenario, a.n, a.reps, a.seed) == (b.scenario, b.n, b.reps, b.seed)
    assert a.columns == b.columns and a.estimators == b.estimators
    assert a.failures == b.failures and a.truth == b.truth
    for est in a.estimators:
        for s in STATISTICS:
            assert np.array_equal(a.get(est, s), b.get(est, s), equal_nan=True)


def test_json_round_trip():
    rep = _report()
    _same(read_table(report_table(rep, "json"), "json"), rep)


def test_json_csv_json_round_trip_keeps_full_precision():
    rep = _report()
    via_csv = read_table(report_table(read_table(report_table(rep, "json"), "json"), "csv"), "csv")
    _same(via_csv, rep)
    assert report_table(via_csv, "json") == report_table(rep, "json")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=True, allow_infinity=False, width=64), min_size=6, max_size=6))
def test_csv_round_trip_any_values(vals):
    rep = _report(np.array(vals), estimators=("local",))
    _same(read_table(report_table(rep, "csv"), "csv"), rep)


def test_empty_estimator_list_gives_header_only():
    rep = _report(estimators=())
    rows = [r for r in report_table(rep, "csv").splitlines() if not r.startswith("#")]
    assert rows[0].split(",")[2:] == rep.columns
    assert rows[1].startswith("truth")
    assert len(rows) == 2
    text = report_table(rep, "text").splitlines()
    assert len(text) == 3
    assert json.loads(report_table(rep, "json"))["stats"] == {}


def test_text_layout():
    text = report_table(_report(), "text")
    lines = text.splitlines()
    assert lines[0] == "scenario=example1 n=500 reps=200 seed=7"
    assert lines[1].split() == ["β₁", "β₂", "β₃", "β₄", "β₅", "β₆"]
    labels = [ln.split()[0] for ln in lines[3:8]]
    assert labels[0] == "oracle" and labels[1:] == [STAT_LABELS[s] for s in STATISTICS[1:]]
    # Missing values print as NA and failures are listed.
    assert "NA" in text and "failures: 1" in text


def test_unknown_format():
    with pytest.raises(ValueError):
        report_table(_report(), "xml")
    with pytest.raises(ValueError):
        read_table("", "text")


def test_coverage_and_std_ranges_in_real_report():
    from semisdr.simulation import run_monte_carlo

    rep = run_monte_carlo("example1", ["oracle"], 300, 5, seed=1)
    cov = rep.get("oracle", "coverage95")
    assert np.all((cov >= 0) & (cov <= 1))
    assert np.all(rep.get("oracle", "std") >= 0)
    assert report_table(rep, "text").splitlines()[1].split() == coefficient_names(6, 1)
