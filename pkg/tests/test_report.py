import json

import numpy as np
import pytest

from popf_lab import popf, report, verify

from conftest import _model, ramp_forecast


@pytest.fixture(scope="module")
def run():
    model = _model("case14")
    f = ramp_forecast(model, ramp=0.03)
    ps = popf.run_period(model, f, popf.PopfConfig(build_intervals=False))
    return model, f, ps, verify.dense_check(ps, model, f, 5)


def test_schedule_round_trip_preserves_audit(run):
    model, f, ps, rep = run
    back = report.schedule_from_dict(json.loads(report.dumps(report.schedule_to_dict(ps))))
    assert back.mode == ps.mode and back.provenance == ps.provenance
    for a, b in zip(ps.intervals, back.intervals):
        assert np.array_equal(a.p_gen, b.p_gen) and np.array_equal(a.states[1].x, b.states[1].x)
        assert a.cost == b.cost and a.interval == b.interval
    again = verify.dense_check(back, model, f, 5)
    assert report.report_to_dict(again) == report.report_to_dict(rep)


def test_report_round_trip(run):
    *_, rep = run
    d = json.loads(report.dumps(report.report_to_dict(rep, with_trace=True)))
    back = report.report_from_dict(d)
    assert report.report_to_dict(back, with_trace=True) == d


def test_non_finite_values_become_null():
    text = report.dumps({"a": float("nan"), "b": np.float64(np.inf), "c": np.arange(2), "d": np.bool_(True)})
    assert json.loads(text) == {"a": None, "b": None, "c": [0, 1], "d": True}


def test_single_table_layout(run):
    _, _, ps, rep = run
    lines = report.single_table(rep, ps.costs).splitlines()
    assert lines[0].split()[:3] == ["Interval", "POPF", "power"]
    assert len(lines) == 2 + len(ps)
    assert lines[2].split()[1:3] == ["0/0", "0/0"]
    assert lines[2].split()[3] == f"{ps.costs[0]:.2f}"


def test_emit_report_files(run, tmp_path):
    _, _, ps, rep = run
    paths = report.emit_report(tmp_path, {"x": 1}, {"popf": ps}, {"popf": rep})
    assert [p.name for p in paths] == ["schedule.json", "table.txt", "plot_costs.csv", "plot_violations.csv"]


def test_emit_report_unwritable(tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("")
    with pytest.raises(report.ReportWriteError):
        report.emit_report(blocker / "x", {}, {}, {})
