"""Serialization of schedules and audit reports, plus plot-ready CSVs."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import acpf
from .freqresp import IntervalGains
from .intervals import LinearInterval
from .popf import IntervalSchedule, PeriodSchedule, Snapshot
from .verify import ComparisonSummary, IntervalViolations, ViolationReport, format_violation

SCHEDULE_FILE = "schedule.json"
TABLE_FILE = "table.txt"
COST_CSV = "plot_costs.csv"
VIOLATION_CSV = "plot_violations.csv"


class ReportWriteError(OSError):
    pass


def _clean(obj):
    """JSON-safe copy: numpy to builtins, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _floats(values) -> np.ndarray:
    return np.array([np.nan if v is None else v for v in values], dtype=float)


# ---------------------------------------------------------------- schedules

def interval_to_dict(s: IntervalSchedule) -> dict:
    iv = s.interval
    return {
        "t_start": iv.t_start, "t_end": iv.t_end, "parent": iv.parent, "depth": iv.depth, "warned": iv.warned,
        "t_ref": s.t_ref, "p_ref_mw": s.p_ref, "drift_mw_per_h": s.drift_mw, "v_src": s.v_src,
        "cost_per_h": s.cost, "iterations": s.iterations, "converged": s.converged,
        "warm_started": s.warm_started, "tightenings": s.tightenings, "balancing": s.balancing,
        "gains": {"k": s.gains.k, "values": s.gains.values, "direction": s.gains.direction},
        "energy_mwh": s.energy,
        "snapshots": [{"label": sn.label, "t": sn.t, "tau": sn.tau, "constrained": sn.constrained,
                       "p_gen_mw": pg, "x": st.x}
                      for sn, pg, st in zip(s.snapshots, s.p_gen, s.states)],
    }


def interval_from_dict(d: dict, mode: str) -> IntervalSchedule:
    iv = LinearInterval(d["t_start"], d["t_end"], d["parent"], d["depth"], warned=d["warned"])
    snaps = [Snapshot(sn["t"], sn["tau"], sn["constrained"], sn["label"]) for sn in d["snapshots"]]
    states = [acpf.VoltageState(x=np.array(sn["x"], float), t=sn["t"]) for sn in d["snapshots"]]
    g = d["gains"]
    energy = d.get("energy_mwh")
    return IntervalSchedule(
        interval=iv, mode=mode, snapshots=snaps, t_ref=d["t_ref"], p_ref=np.array(d["p_ref_mw"], float),
        drift_mw=np.array(d["drift_mw_per_h"], float), v_src=_floats(d["v_src"]), states=states,
        p_gen=np.array([sn["p_gen_mw"] for sn in d["snapshots"]], float), cost=d["cost_per_h"],
        iterations=d["iterations"], converged=d["converged"],
        gains=IntervalGains(g["k"], np.array(g["values"], float), g["direction"]),
        warm_started=d["warm_started"], energy=None if energy is None else np.array(energy, float),
        balancing=d["balancing"], tightenings=d.get("tightenings", 0))


def schedule_to_dict(ps: PeriodSchedule) -> dict:
    return {"mode": ps.mode, "iterations": ps.iterations, "provenance": ps.provenance,
            "intervals": [interval_to_dict(s) for s in ps.intervals]}


def schedule_from_dict(d: dict) -> PeriodSchedule:
    return PeriodSchedule(mode=d["mode"], intervals=[interval_from_dict(x, d["mode"]) for x in d["intervals"]],
                          provenance=list(d.get("provenance", [])))


# ---------------------------------------------------------------- reports

def report_to_dict(rep: ViolationReport, with_trace: bool = False) -> dict:
    rows = []
    for iv in rep.intervals:
        row = {"t_start": iv.t_start, "t_end": iv.t_end,
               "power_cvn": iv.power_cvn, "power_cva_mw": iv.power_cva,
               "voltage_cvn": iv.voltage_cvn, "voltage_cva_pu": iv.voltage_cva,
               "power_worst_t": iv.power_worst_t, "voltage_worst_t": iv.voltage_worst_t,
               "mean_cost_per_h": iv.mean_cost, "diagnostics": iv.diagnostics}
        if with_trace:
            row["trace"] = iv.trace
        rows.append(row)
    return {"mode": rep.mode, "samples": rep.samples, "tol_pu": rep.tol, "intervals": rows}


def report_from_dict(d: dict) -> ViolationReport:
    ivs = []
    for r in d["intervals"]:
        ivs.append(IntervalViolations(
            r["t_start"], r["t_end"], r["power_cvn"], r["power_cva_mw"], r["voltage_cvn"], r["voltage_cva_pu"],
            r.get("power_worst_t"), r.get("voltage_worst_t"),
            float("nan") if r.get("mean_cost_per_h") is None else r["mean_cost_per_h"],
            trace=r.get("trace", []), diagnostics=list(r.get("diagnostics", []))))
    return ViolationReport(mode=d["mode"], samples=d["samples"], tol=d["tol_pu"], intervals=ivs)


def single_table(rep: ViolationReport, costs) -> str:
    """Table for a one-mode run, same cell layout as the comparison table."""
    m = rep.mode.upper()
    head = ("Interval", f"{m} power n/MW", f"{m} voltage n/pu", f"{m} cost($/h)")
    body = [(iv.label, format_violation(iv.power_cvn, iv.power_cva),
             format_violation(iv.voltage_cvn, iv.voltage_cva), f"{c:.2f}")
            for iv, c in zip(rep.intervals, costs)]
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(head, widths)), "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines)


# ---------------------------------------------------------------- files

def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise ReportWriteError(f"cannot write {path}: {exc}") from exc


def dumps(document: dict) -> str:
    return json.dumps(_clean(document), indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_cost_csv(path: Path, schedules: dict[str, PeriodSchedule]) -> None:
    modes = sorted(schedules)
    first = schedules[modes[0]]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_start_h", "t_end_h"] + [f"{m}_cost_per_h" for m in modes])
            for k, s in enumerate(first.intervals):
                w.writerow([repr(s.interval.t_start), repr(s.interval.t_end)]
                           + [repr(float(schedules[m].intervals[k].cost)) for m in modes])
    except OSError as exc:
        raise ReportWriteError(f"cannot write {path}: {exc}") from exc


def write_violation_csv(path: Path, reports: dict[str, ViolationReport]) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "t_start_h", "t_end_h", "power_cvn", "power_cva_mw", "voltage_cvn", "voltage_cva_pu"])
            for m in sorted(reports):
                for iv in reports[m].intervals:
                    w.writerow([m, repr(iv.t_start), repr(iv.t_end), iv.power_cvn, repr(float(iv.power_cva)),
                                iv.voltage_cvn, repr(float(iv.voltage_cva))])
    except OSError as exc:
        raise ReportWriteError(f"cannot write {path}: {exc}") from exc


def emit_report(out_dir: str | Path, document: dict, schedules: dict[str, PeriodSchedule],
                reports: dict[str, ViolationReport], summary: ComparisonSummary | None = None) -> list[Path]:
    """Write the run document, the text table and the plot CSVs; return the paths written."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportWriteError(f"cannot create output directory {out}: {exc}") from exc
    paths = [out / SCHEDULE_FILE]
    _write(paths[0], dumps(document))
    if summary is not None:
        table = summary.table()
    elif reports:
        m = next(iter(reports))
        table = single_table(reports[m], schedules[m].costs)
    else:
        table = ""
    if table:
        paths.append(out / TABLE_FILE)
        _write(paths[-1], table + "\n")
    if schedules:
        paths.append(out / COST_CSV)
        write_cost_csv(paths[-1], schedules)
    if reports:
        paths.append(out / VIOLATION_CSV)
        write_violation_csv(paths[-1], reports)
    return paths
