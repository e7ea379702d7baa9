"""Dense-time audits of solved schedules.

Every sample is an independent power flow solve from a flat start, using
only the schedule's controls (never the optimizer's internal states).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import acpf
from .forecast import ForecastSeries, build_rhs
from .popf import IntervalSchedule, PeriodSchedule, generation_cost

log = logging.getLogger(__name__)

DEFAULT_SAMPLES = 101


def format_violation(count: int, amount: float) -> str:
    """Render a count/amount pair, e.g. ``(9, 2.3479) -> "9/2.3479"``."""
    if count == 0 and amount == 0:
        return "0/0"
    amt = f"{amount:.4f}".rstrip("0").rstrip(".")
    if amt in ("0", "-0", "") and amount != 0:
        amt = f"{amount:.2g}"  # keep tiny nonzero amounts visible
    return f"{count}/{amt}"


def interval_label(t_start: float, t_end: float) -> str:
    return f"{t_start:g}h-{t_end:g}h"


@dataclass
class IntervalViolations:
    t_start: float
    t_end: float
    power_cvn: int = 0
    power_cva: float = 0.0  # MW
    voltage_cvn: int = 0
    voltage_cva: float = 0.0  # p.u.
    power_worst_t: float | None = None
    voltage_worst_t: float | None = None
    mean_cost: float = float("nan")  # $/h averaged over the samples
    trace: list[dict] = field(default_factory=list, repr=False)
    diagnostics: list[str] = field(default_factory=list)

    @property
    def label(self) -> str:
        return interval_label(self.t_start, self.t_end)


@dataclass
class ViolationReport:
    mode: str
    samples: int
    tol: float
    intervals: list[IntervalViolations]

    @property
    def total_power_cvn(self) -> int:
        return sum(iv.power_cvn for iv in self.intervals)

    @property
    def total_voltage_cvn(self) -> int:
        return sum(iv.voltage_cvn for iv in self.intervals)

    @property
    def clean(self) -> bool:
        return all(iv.power_cvn == 0 and iv.voltage_cvn == 0 and not iv.diagnostics for iv in self.intervals)


def solve_at(model: acpf.PowerFlowModel, forecast: ForecastSeries, sched: IntervalSchedule,
             t: float) -> acpf.VoltageState:
    """Fresh power flow at time t under the schedule's drifting controls."""
    p, v = sched.controls_at(t)
    g = build_rhs(t, forecast, p, v, model, sched.interval.parent)
    st = acpf.solve_power_flow(model, g, acpf.flat_start(model, v))
    st.t = t
    return st


def _sample_times(sched: IntervalSchedule, samples: int) -> np.ndarray:
    if samples < 2:
        raise ValueError("samples_per_interval must be at least 2")
    iv = sched.interval
    return np.linspace(iv.t_start, iv.t_end, samples)


def _limits(model):
    case = model.case
    vmin = np.array([b.v_min for b in case.buses])
    vmax = np.array([b.v_max for b in case.buses])
    rate = np.array([br.p_line_max for br in case.branches])
    return vmin, vmax, rate


def _cost_at(model, forecast, sched, st, t):
    p, _ = sched.controls_at(t)
    p = p.copy()
    pinj, _ = acpf.injections(st.x, model.adm)
    pe, _ = forecast.aligned(model).sample(t, sched.interval.parent)
    slack = model.slack
    others = [i for i, b in enumerate(model.gen_bus) if b == slack and i != sched.balancing]
    p[sched.balancing] = pinj[slack] * model.base_mva + pe[slack] - p[others].sum()
    return generation_cost(p, model.case.cost_curves)


def dense_check(schedule: PeriodSchedule, model: acpf.PowerFlowModel, forecast: ForecastSeries,
                samples_per_interval: int = DEFAULT_SAMPLES, tol: float = 1e-6) -> ViolationReport:
    """Audit voltage and branch limits at equally spaced times in every interval.

    ``tol`` is in p.u. for both categories; branch amounts are reported in MW.
    Per interval, counts and amounts come from the sample with the largest
    summed violation of that category.
    """
    forecast = forecast.aligned(model)
    vmin, vmax, rate = _limits(model)
    base = model.base_mva
    lim = np.isfinite(rate)
    out = []
    for sched in schedule.intervals:
        iv = sched.interval
        rec = IntervalViolations(iv.t_start, iv.t_end)
        costs = []
        best_p = (-1.0, 0, None)
        best_v = (-1.0, 0, None)
        for t in _sample_times(sched, samples_per_interval):
            t = float(t)
            try:
                st = solve_at(model, forecast, sched, t)
            except (acpf.PowerFlowDivergence, acpf.SingularJacobian) as exc:
                rec.diagnostics.append(f"t = {t:g} h: {exc}")
                continue
            vm = acpf.voltage_magnitudes(st.x)
            over_v = np.maximum(vm - vmax, 0) + np.maximum(vmin - vm, 0)
            bad_v = over_v > tol
            pf, pt = acpf.branch_flows(st.x, model)
            excess = np.r_[np.abs(pf[lim]) - rate[lim], np.abs(pt[lim]) - rate[lim]]
            bad_p = excess > tol * base
            amt_p = float(excess[bad_p].sum())
            amt_v = float(over_v[bad_v].sum())
            rec.trace.append(dict(t=t, power_cvn=int(bad_p.sum()), power_cva=amt_p,
                                  voltage_cvn=int(bad_v.sum()), voltage_cva=amt_v))
            if (amt_p, int(bad_p.sum())) > best_p[:2]:
                best_p = (amt_p, int(bad_p.sum()), t)
            if (amt_v, int(bad_v.sum())) > best_v[:2]:
                best_v = (amt_v, int(bad_v.sum()), t)
            costs.append(_cost_at(model, forecast, sched, st, t))
        if best_p[1] > 0:
            rec.power_cva, rec.power_cvn, rec.power_worst_t = best_p
        if best_v[1] > 0:
            rec.voltage_cva, rec.voltage_cvn, rec.voltage_worst_t = best_v
        rec.mean_cost = float(np.mean(costs)) if costs else float("nan")
        out.append(rec)
    return ViolationReport(mode=schedule.mode, samples=samples_per_interval, tol=tol, intervals=out)


def _dense_states(schedule, model, forecast, samples):
    for sched in schedule.intervals:
        ts = _sample_times(sched, samples)
        yield sched, ts, [solve_at(model, forecast, sched, float(t)) for t in ts]


def _quantities(model, x) -> np.ndarray:
    vm = acpf.voltage_magnitudes(x)
    sf, st = acpf.branch_power(x, model.adm)
    return np.r_[vm, sf.real, st.real]


def extremality_check(schedule: PeriodSchedule, model: acpf.PowerFlowModel, forecast: ForecastSeries,
                      samples: int = DEFAULT_SAMPLES) -> np.ndarray:
    """Worst overshoot (p.u.) of interior samples beyond the endpoint extremes, per interval.

    Covers every voltage magnitude and branch-end active flow, on both the
    high and the low side. Non-positive values mean the extremes sit at the
    endpoints.
    """
    forecast = forecast.aligned(model)
    out = []
    for _, ts, states in _dense_states(schedule, model, forecast, samples):
        q = np.array([_quantities(model, st.x) for st in states])
        ends = q[[0, -1]]
        inner = q[1:-1]
        if len(inner) == 0:
            out.append(-np.inf)
            continue
        up = inner.max(axis=0) - ends.max(axis=0)
        down = ends.min(axis=0) - inner.min(axis=0)
        out.append(float(max(up.max(), down.max())))
    return np.array(out)


@dataclass
class IsometryReport:
    t_start: np.ndarray
    t_end: np.ndarray
    dist_end: np.ndarray  # |x(t_k) - x(t_m)|
    dist_start: np.ndarray  # |x(t_{k-1}) - x(t_m)|

    @property
    def gap(self) -> np.ndarray:
        """Relative difference of the two distances (0 when both vanish)."""
        hi = np.maximum(self.dist_end, self.dist_start)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.abs(self.dist_end - self.dist_start) / hi
        return np.where(hi > 0, g, 0.0)


def isometry_gap(x_start: np.ndarray, x_mid: np.ndarray, x_end: np.ndarray) -> tuple[float, float, float]:
    a = float(np.linalg.norm(x_end - x_mid))
    b = float(np.linalg.norm(x_start - x_mid))
    hi = max(a, b)
    return a, b, (abs(a - b) / hi if hi > 0 else 0.0)


def isometry_check(schedule: PeriodSchedule, model: acpf.PowerFlowModel,
                   forecast: ForecastSeries) -> IsometryReport:
    forecast = forecast.aligned(model)
    rows = []
    for sched in schedule.intervals:
        iv = sched.interval
        xs = [solve_at(model, forecast, sched, t).x for t in (iv.t_start, iv.median, iv.t_end)]
        a, b, _ = isometry_gap(*xs)
        rows.append((iv.t_start, iv.t_end, a, b))
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return IsometryReport(*arr.T)


def temporal_increment_error(model: acpf.PowerFlowModel, forecast: ForecastSeries,
                             sched: IntervalSchedule) -> float:
    """Relative residual of J(t_m) (x(t_k) - x(t_{k-1})) = g(t_k) - g(t_{k-1})."""
    forecast = forecast.aligned(model)
    iv = sched.interval
    sa, sm, sb = (solve_at(model, forecast, sched, t) for t in (iv.t_start, iv.median, iv.t_end))
    J = acpf.jacobian(sm.x, model)
    cols = model.state_cols
    lhs = J @ (sb.x[cols] - sa.x[cols])
    ga = acpf.equation_values(sa.x, model)
    gb = acpf.equation_values(sb.x, model)
    rhs = gb - ga
    denom = np.linalg.norm(rhs)
    return float(np.linalg.norm(lhs - rhs) / denom) if denom > 0 else float(np.linalg.norm(lhs))


def linearization_error(model: acpf.PowerFlowModel, forecast: ForecastSeries, sched: IntervalSchedule,
                        samples: int = 21) -> float:
    """Max deviation of dense states from the endpoint chord, relative to the chord length."""
    forecast = forecast.aligned(model)
    ts = _sample_times(sched, samples)
    xs = [solve_at(model, forecast, sched, float(t)).x for t in ts]
    x0, x1 = xs[0], xs[-1]
    span = np.linalg.norm(x1 - x0)
    lam = (ts - ts[0]) / (ts[-1] - ts[0])
    dev = max(np.linalg.norm(x - ((1 - l) * x0 + l * x1)) for x, l in zip(xs, lam))
    return float(dev / span) if span > 0 else float(dev)


# ---------------------------------------------------------------- comparison

@dataclass
class ComparisonRow:
    label: str
    topf_power: str
    topf_voltage: str
    topf_cost: float
    popf_power: str
    popf_voltage: str
    popf_cost: float


@dataclass
class ComparisonSummary:
    rows: list[ComparisonRow]
    topf_total_cost: float
    popf_total_cost: float
    topf_power_cvn: int
    popf_power_cvn: int
    topf_voltage_cvn: int
    popf_voltage_cvn: int

    @property
    def cost_gap(self) -> float:
        """Relative period-cost difference, POPF vs TOPF."""
        return abs(self.popf_total_cost - self.topf_total_cost) / abs(self.topf_total_cost)

    def table(self) -> str:
        head = ("Interval", "TOPF power n/MW", "TOPF voltage n/pu", "TOPF cost($/h)",
                "POPF power n/MW", "POPF voltage n/pu", "POPF cost($/h)")
        body = [(r.label, r.topf_power, r.topf_voltage, f"{r.topf_cost:.2f}",
                 r.popf_power, r.popf_voltage, f"{r.popf_cost:.2f}") for r in self.rows]
        body.append(("Total ($)", str(self.topf_power_cvn), str(self.topf_voltage_cvn), f"{self.topf_total_cost:.2f}",
                     str(self.popf_power_cvn), str(self.popf_voltage_cvn), f"{self.popf_total_cost:.2f}"))
        widths = [max(len(str(r[i])) for r in [head] + body) for i in range(len(head))]
        lines = ["  ".join(str(c).ljust(w) for c, w in zip(head, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)) for r in body]
        return "\n".join(lines)


class HorizonMismatch(ValueError):
    pass


def compare(popf_report: ViolationReport, topf_report: ViolationReport,
            popf_costs, topf_costs) -> ComparisonSummary:
    """Side-by-side violation and cost table; costs are $/h per interval."""
    pi, ti = popf_report.intervals, topf_report.intervals
    if len(pi) != len(ti) or any(abs(a.t_start - b.t_start) > 1e-9 or abs(a.t_end - b.t_end) > 1e-9
                                 for a, b in zip(pi, ti)):
        raise HorizonMismatch("POPF and TOPF reports cover different intervals")
    popf_costs = np.asarray(popf_costs, float)
    topf_costs = np.asarray(topf_costs, float)
    if len(popf_costs) != len(pi) or len(topf_costs) != len(ti):
        raise HorizonMismatch("cost traces do not match the interval count")
    rows = [ComparisonRow(a.label, format_violation(b.power_cvn, b.power_cva),
                          format_violation(b.voltage_cvn, b.voltage_cva), float(tc),
                          format_violation(a.power_cvn, a.power_cva),
                          format_violation(a.voltage_cvn, a.voltage_cva), float(pc))
            for a, b, pc, tc in zip(pi, ti, popf_costs, topf_costs)]
    widths = np.array([a.t_end - a.t_start for a in pi])
    return ComparisonSummary(
        rows=rows,
        topf_total_cost=float(topf_costs @ widths), popf_total_cost=float(popf_costs @ widths),
        topf_power_cvn=topf_report.total_power_cvn, popf_power_cvn=popf_report.total_power_cvn,
        topf_voltage_cvn=topf_report.total_voltage_cvn, popf_voltage_cvn=popf_report.total_voltage_cvn)
