"""Period OPF: per-interval three-snapshot NLP and the single-snapshot baseline.

Each linear time interval gets one control vector ``U`` (source active
powers at a reference time plus voltage setpoints at source buses) and one
voltage state per snapshot. Source powers at the other snapshots are the
affine image of ``U`` under the frequency-response drift. For the period
model the reference is the median snapshot, which carries the cost; limits
are enforced at the two end snapshots. The baseline puts everything on a
single snapshot.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import acpf, ipm
from .forecast import ForecastSeries, build_rhs
from .freqresp import FrequencyResponseModel, IntervalGains, interval_gains
from .intervals import Baseline, IntervalConfig, LinearInterval, build_intervals, uniform_intervals
from .netcase import CostCurve

log = logging.getLogger(__name__)


class AssemblyError(ValueError):
    pass


class IntervalSolveError(RuntimeError):
    def __init__(self, message, index=None, diagnosis=None, result=None):
        super().__init__(message)
        self.index = index
        self.diagnosis = diagnosis or []
        self.result = result


@dataclass
class PopfConfig:
    ipm: ipm.IPMOptions = field(default_factory=ipm.IPMOptions)
    intervals: IntervalConfig = field(default_factory=IntervalConfig)
    build_intervals: bool = True
    k_f: float = 1.0
    freq_sign_flip: bool = False
    warm_start: bool = True
    warm_duals: bool = True
    topf_position: str = "start"  # start | median | end
    slack_limits: bool = False
    cost_scale: float | None = None  # None -> 1 / (base_mva * mean linear cost)
    limit_backoff: float = 0.0  # p.u. tightening of voltage and line limits inside the NLP
    interior_samples: int = 11  # popf only; 0 disables interior tightening
    interior_rounds: int = 4
    interior_margin: float = 1e-5  # p.u. clearance targeted by interior tightening


def generation_cost(p_mw: np.ndarray, curves) -> float:
    """Total quadratic cost rate, $/h."""
    return float(sum(c(p) for c, p in zip(curves, np.asarray(p_mw, float))))


@dataclass(frozen=True)
class Snapshot:
    t: float
    tau: float  # t - reference time, hours
    constrained: bool
    label: str


@dataclass
class WarmStart:
    """Median solution of the previous interval plus optional multipliers."""

    p_ctrl: np.ndarray  # p.u., controllable generators
    v_src: np.ndarray  # p.u., voltage variables
    x: np.ndarray  # full state of the median snapshot
    lam: np.ndarray | None = None
    mu: np.ndarray | None = None
    s: np.ndarray | None = None


# ---------------------------------------------------------------- problem

class IntervalProblem:
    """Smooth NLP for one interval, exposed to :mod:`popf_lab.ipm`."""

    def __init__(self, model: acpf.PowerFlowModel, interval: LinearInterval, forecast: ForecastSeries,
                 gains: IntervalGains, snapshots: list[Snapshot], objective_index: int,
                 slack_limits: bool = False, cost_scale: float | None = None, limit_backoff: float = 0.0):
        self.model = model
        self.interval = interval
        self.gains = gains
        self.snapshots = snapshots
        self.obj = objective_index
        self.slack_limits = slack_limits
        case = model.case
        self.base = base = case.base_mva
        n = model.n
        self.n = n
        slack = model.slack

        gen_bus = model.gen_bus
        at_slack = np.flatnonzero(gen_bus == slack)
        if len(at_slack) == 0:
            raise AssemblyError("the slack bus has no generator")
        self.bal = int(at_slack[0])
        self.ctrl = np.array([i for i in range(len(gen_bus)) if i != self.bal], dtype=int)
        self.vbus = np.array(sorted(set(np.flatnonzero(model.is_source)) | {slack}), dtype=int)
        nc, nv = len(self.ctrl), len(self.vbus)
        self.m = m = 2 * (n - 1)
        self.nc, self.nv = nc, nv
        self.nz = nc + nv + len(snapshots) * m
        self.iP = np.arange(nc)
        self.iV = nc + np.arange(nv)
        self.vpos = {int(b): k for k, b in enumerate(self.vbus)}

        gens = case.generators
        self.curves: list[CostCurve] = list(case.cost_curves)
        c2 = np.array([c.c2 for c in self.curves])
        c1 = np.array([c.c1 for c in self.curves])
        if cost_scale is None:
            cost_scale = 1.0 / (base * max(float(np.mean(np.abs(c1))), 1.0))
        self.cost_scale = cost_scale
        self.c2 = c2 * base * base * cost_scale
        self.c1 = c1 * base * cost_scale
        self.c0 = np.array([c.c0 for c in self.curves]) * cost_scale

        self.pmin = np.array([g.p_min for g in gens]) / base
        self.pmax = np.array([g.p_max for g in gens]) / base
        self.rate = gains.direction * gains.values / base  # p.u./h per generator

        ctrl_bus = gen_bus[self.ctrl]
        self.Cg = sp.csr_matrix((np.ones(nc), (ctrl_bus, np.arange(nc))), shape=(n, nc))
        self.slack_ctrl = np.flatnonzero(ctrl_bus == slack)  # extra generators sharing the slack bus

        fc = forecast.aligned(model)
        self.pe, self.qe = [], []
        for snap in snapshots:
            p, q = fc.sample(snap.t, interval.parent)
            self.pe.append(p / base)
            self.qe.append(q / base)

        # state selector: x_full = T_s z
        self.T = []
        ns_cols = model.state_cols
        for s in range(len(snapshots)):
            off = nc + nv + s * m
            rows = np.r_[ns_cols, 2 * slack]
            cols = np.r_[off + np.arange(m), nc + self.vpos[slack]]
            self.T.append(sp.csr_matrix((np.ones(m + 1), (rows, cols)), shape=(2 * n, self.nz)))

        # constant z-derivatives of g(z) per equation block
        ns = model.nonslack
        src_ns = model.is_source[ns]
        Gp = self.Cg[ns].tocoo()
        v_rows = 2 * np.flatnonzero(src_ns) + 1
        v_cols = np.array([self.vpos[int(b)] for b in ns[src_ns]], dtype=int)
        self._gp = (2 * Gp.row, Gp.col, Gp.data)
        self._gv = (v_rows, v_cols)

        # limits
        self.vmin = np.array([b.v_min for b in case.buses])
        self.vmax = np.array([b.v_max for b in case.buses])
        qmin = np.zeros(n)
        qmax = np.zeros(n)
        np.add.at(qmin, gen_bus, [g.q_min / base for g in gens])
        np.add.at(qmax, gen_bus, [g.q_max / base for g in gens])
        self.qmin, self.qmax = qmin[self.vbus], qmax[self.vbus]
        rates = np.array([br.p_line_max for br in case.branches]) / base
        self.lines = np.flatnonzero(np.isfinite(rates))
        self.rate_full = rates[self.lines]
        self.tighten = {"vmin": np.full(n, limit_backoff), "vmax": np.full(n, limit_backoff),
                        "line": np.full(len(self.lines), limit_backoff)}
        self._apply_tightening()

        if len(snapshots) > 1:
            lo = self.p_ctrl_bounds()
            if np.any(lo[0] > lo[1] + 1e-12):
                bad = self.ctrl[lo[0] > lo[1] + 1e-12]
                raise AssemblyError(f"generator(s) {bad.tolist()}: ramp over the interval exceeds p_max - p_min")

    # -------------------------------------------------------- helpers
    def _apply_tightening(self) -> None:
        t = self.tighten
        self.vmin2 = (self.vmin + t["vmin"]) ** 2
        self.vmax2 = (self.vmax - t["vmax"]) ** 2
        self.line_rate = self.rate_full - t["line"]

    def add_tightening(self, vmin: np.ndarray, vmax: np.ndarray, line: np.ndarray) -> None:
        """Shrink limits further by the given non-negative p.u. amounts."""
        self.tighten["vmin"] += vmin
        self.tighten["vmax"] += vmax
        self.tighten["line"] += line
        self._apply_tightening()

    def p_ctrl_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounds on the reference-time controls implied by every constrained snapshot."""
        lo = np.full(self.nc, -np.inf)
        hi = np.full(self.nc, np.inf)
        for snap in self.snapshots:
            if snap.constrained:
                shift = self.rate[self.ctrl] * snap.tau
                lo = np.maximum(lo, self.pmin[self.ctrl] - shift)
                hi = np.minimum(hi, self.pmax[self.ctrl] - shift)
        return lo, hi

    def state(self, z: np.ndarray, s: int) -> np.ndarray:
        return self.T[s] @ z

    def p_ctrl(self, z: np.ndarray, s: int) -> np.ndarray:
        return z[self.iP] + self.rate[self.ctrl] * self.snapshots[s].tau

    def p_balance(self, x: np.ndarray, z: np.ndarray, s: int) -> float:
        """Active output of the slack-bus balancing generator, p.u."""
        p, _ = acpf.injections(x, self.model.adm)
        return float(p[self.model.slack] + self.pe[s][self.model.slack] - self.p_ctrl(z, s)[self.slack_ctrl].sum())

    def p_gen(self, z: np.ndarray, s: int) -> np.ndarray:
        """Generator outputs at snapshot s, MW."""
        out = np.zeros(len(self.curves))
        out[self.ctrl] = self.p_ctrl(z, s)
        out[self.bal] = self.p_balance(self.state(z, s), z, s)
        return out * self.base

    def v_src(self, z: np.ndarray) -> np.ndarray:
        v = np.full(self.n, np.nan)
        v[self.vbus] = z[self.iV]
        return v

    # -------------------------------------------------------- NLP callbacks
    def objective(self, z):
        o = self.obj
        x = self.state(z, o)
        pc = self.p_ctrl(z, o)
        c = self.ctrl
        f = float(np.sum(self.c2[c] * pc ** 2 + self.c1[c] * pc + self.c0[c]))
        grad = np.zeros(self.nz)
        grad[self.iP] = 2 * self.c2[c] * pc + self.c1[c]
        pb = self.p_balance(x, z, o)
        b = self.bal
        f += self.c2[b] * pb ** 2 + self.c1[b] * pb + self.c0[b]
        dcb = 2 * self.c2[b] * pb + self.c1[b]
        grad += dcb * self._grad_balance(x, o)
        return f, grad

    def _grad_balance(self, x, s):
        dp, _ = acpf.injection_derivatives(x, self.model.adm)
        g = np.asarray((dp[self.model.slack] @ self.T[s]).todense()).ravel()
        g[self.iP[self.slack_ctrl]] -= 1.0
        return g

    def _eq_block(self, z, s):
        model = self.model
        x = self.state(z, s)
        pc = self.p_ctrl(z, s)
        ns = model.nonslack
        src = model.is_source[ns]
        gv = np.empty(self.m)
        gv[0::2] = -self.pe[s][ns] + (self.Cg @ pc)[ns]
        vsq = np.zeros(self.n)
        vsq[self.vbus] = z[self.iV] ** 2
        gv[1::2] = np.where(src, vsq[ns], -self.qe[s][ns])
        r = acpf.equation_values(x, model) - gv
        J = acpf.full_jacobian(x, model) @ self.T[s]
        rp, cp, dp = self._gp
        vr, vc = self._gv
        dG = sp.csr_matrix((np.r_[dp, 2 * z[self.iV][vc]], (np.r_[rp, vr], np.r_[cp, self.nc + vc])),
                           shape=(self.m, self.nz))
        return r, (J - dG).tocsr()

    def _ineq_block(self, z, s):
        """Inequalities at snapshot s, rows in a fixed order (see ``ineq_labels``)."""
        model = self.model
        x = self.state(z, s)
        T = self.T[s]
        n = self.n
        vals, jacs = [], []

        vsq = x[0::2] ** 2 + x[1::2] ** 2
        idx = np.arange(n)
        dv = sp.csr_matrix((np.r_[2 * x[0::2], 2 * x[1::2]], (np.r_[idx, idx], np.r_[2 * idx, 2 * idx + 1])),
                           shape=(n, 2 * n)) @ T
        vals += [self.vmin2 - vsq, vsq - self.vmax2]
        jacs += [-dv, dv]

        _, q = acpf.injections(x, model.adm)
        qb = q[self.vbus] + self.qe[s][self.vbus]
        _, dq = acpf.injection_derivatives(x, model.adm)
        dq = dq[self.vbus] @ T
        vals += [self.qmin - qb, qb - self.qmax]
        jacs += [-dq, dq]

        pc = self.p_ctrl(z, s)
        c = self.ctrl
        sel = sp.csr_matrix((np.ones(self.nc), (np.arange(self.nc), self.iP)), shape=(self.nc, self.nz))
        vals += [self.pmin[c] - pc, pc - self.pmax[c]]
        jacs += [-sel, sel]

        if self.slack_limits:
            pb = self.p_balance(x, z, s)
            gb = sp.csr_matrix(self._grad_balance(x, s))
            vals += [np.array([self.pmin[self.bal] - pb]), np.array([pb - self.pmax[self.bal]])]
            jacs += [-gb, gb]

        if len(self.lines):
            sf, st = acpf.branch_power(x, model.adm)
            dpf, dpt = acpf.branch_power_derivatives(x, model.adm)
            L = self.lines
            dpf = dpf[L] @ T
            dpt = dpt[L] @ T
            pf, pt = sf.real[L], st.real[L]
            vals += [pf - self.line_rate, -pf - self.line_rate, pt - self.line_rate, -pt - self.line_rate]
            jacs += [dpf, -dpf, dpt, -dpt]
        return np.concatenate(vals), sp.vstack(jacs).tocsr()

    def ineq_labels(self) -> list[str]:
        case = self.model.case
        labels = []
        for snap in self.snapshots:
            if not snap.constrained:
                continue
            tag = f"{snap.label}@{snap.t:g}h"
            for side in ("min", "max"):
                labels += [f"{tag} V{side} bus {b.id}" for b in case.buses]
            for side in ("min", "max"):
                labels += [f"{tag} Q{side} bus {case.buses[b].id}" for b in self.vbus]
            for side in ("min", "max"):
                labels += [f"{tag} P{side} gen {g}" for g in self.ctrl]
            if self.slack_limits:
                labels += [f"{tag} Pmin gen {self.bal}", f"{tag} Pmax gen {self.bal}"]
            for end, sign in (("from", "+"), ("from", "-"), ("to", "+"), ("to", "-")):
                labels += [f"{tag} line {case.branches[k].from_bus}-{case.branches[k].to_bus} {end} {sign}"
                           for k in self.lines]
        return labels

    def constraints(self, z):
        eqs = [self._eq_block(z, s) for s in range(len(self.snapshots))]
        iqs = [self._ineq_block(z, s) for s, snap in enumerate(self.snapshots) if snap.constrained]
        g = np.concatenate([e[0] for e in eqs])
        Jg = sp.vstack([e[1] for e in eqs]).tocsr()
        if iqs:
            h = np.concatenate([q[0] for q in iqs])
            Jh = sp.vstack([q[1] for q in iqs]).tocsr()
        else:
            h = np.zeros(0)
            Jh = sp.csr_matrix((0, self.nz))
        return g, Jg, h, Jh

    def hessian(self, z, lam, mu):
        model = self.model
        n = self.n
        H = sp.csr_matrix((self.nz, self.nz))
        zdiag = np.zeros(self.nz)
        mu_off = 0
        for s, snap in enumerate(self.snapshots):
            ls = lam[s * self.m:(s + 1) * self.m]
            Hx = acpf.equation_hessian(model, ls)
            # -Vc^2 on the squared-magnitude rows
            vr, vc = self._gv
            np.add.at(zdiag, self.nc + vc, -2.0 * ls[vr])
            lam_p = np.zeros(n)
            lam_q = np.zeros(n)
            if snap.constrained:
                k = mu_off
                mlo, mhi = mu[k:k + n], mu[k + n:k + 2 * n]
                k += 2 * n
                Hx = Hx + sp.diags(2.0 * np.repeat(mhi - mlo, 2))
                nv = self.nv
                qlo, qhi = mu[k:k + nv], mu[k + nv:k + 2 * nv]
                k += 2 * nv
                lam_q[self.vbus] += qhi - qlo
                k += 2 * self.nc
                if self.slack_limits:
                    wb = mu[k + 1] - mu[k]
                    k += 2
                    lam_p[model.slack] += wb
                nl = len(self.lines)
                if nl:
                    a, b_, c, d = (mu[k + i * nl:k + (i + 1) * nl] for i in range(4))
                    k += 4 * nl
                    lf = np.zeros(len(model.case.branches))
                    lt = np.zeros_like(lf)
                    lf[self.lines] = a - b_
                    lt[self.lines] = c - d
                    Hx = Hx + acpf.branch_power_hessian(model.adm, lf, lt)
                mu_off = k
            if s == self.obj:
                x = self.state(z, s)
                b = self.bal
                pb = self.p_balance(x, z, s)
                lam_p[model.slack] += 2 * self.c2[b] * pb + self.c1[b]
            if np.any(lam_p) or np.any(lam_q):
                Hx = Hx + acpf.injection_hessian(model.adm, lam_p, lam_q)
            H = H + self.T[s].T @ Hx @ self.T[s]
        # objective terms in z
        c = self.ctrl
        zdiag[self.iP] += 2 * self.c2[c]
        H = H + sp.diags(zdiag)
        gb = self._grad_balance(self.state(z, self.obj), self.obj)
        nzb = np.flatnonzero(gb)
        outer = sp.csr_matrix((np.outer(gb[nzb], gb[nzb]).ravel(),
                               (np.repeat(nzb, len(nzb)), np.tile(nzb, len(nzb)))), shape=(self.nz, self.nz))
        H = H + 2 * self.c2[self.bal] * outer
        return H.tocsr()

    # -------------------------------------------------------- start points
    def initial_point(self, warm: WarmStart | None = None) -> np.ndarray:
        z = np.zeros(self.nz)
        model = self.model
        if warm is None:
            base = self.base
            z[self.iP] = np.array([g.pg for g in model.case.generators])[self.ctrl] / base
            z[self.iV] = acpf.setpoints(model)[self.vbus]
            x0 = acpf.flat_start(model)
        else:
            z[self.iP] = warm.p_ctrl
            z[self.iV] = warm.v_src
            x0 = warm.x
        for s in range(len(self.snapshots)):
            off = self.nc + self.nv + s * self.m
            z[off:off + self.m] = x0[model.state_cols]
        return z


# ---------------------------------------------------------------- schedules

@dataclass
class IntervalSchedule:
    interval: LinearInterval
    mode: str
    snapshots: list[Snapshot]
    t_ref: float
    p_ref: np.ndarray  # MW per generator at t_ref (balancing entry = its solved output)
    drift_mw: np.ndarray  # MW/h per generator (balancing entry 0)
    v_src: np.ndarray  # per-bus setpoints, NaN at load buses
    states: list[acpf.VoltageState]
    p_gen: np.ndarray  # (snapshots, generators) MW
    cost: float  # $/h at the objective snapshot
    iterations: int
    converged: bool
    gains: IntervalGains
    warm_started: bool = False
    energy: np.ndarray | None = None  # MWh per bus
    balancing: int = 0
    eq_violation: float = 0.0
    ineq_violation: float = 0.0
    duals: tuple | None = field(default=None, repr=False)
    tightenings: int = 0  # interior re-solves

    @property
    def median_index(self) -> int | None:
        for i, s in enumerate(self.snapshots):
            if s.label == "median":
                return i
        return None

    def controls_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """(MW per generator, per-bus setpoints) at time t under the affine drift."""
        p = self.p_ref + self.drift_mw * (t - self.t_ref)
        return p, self.v_src


@dataclass
class PeriodSchedule:
    mode: str
    intervals: list[IntervalSchedule]
    provenance: list[str] = field(default_factory=list)

    @property
    def costs(self) -> np.ndarray:
        return np.array([s.cost for s in self.intervals])

    @property
    def iterations(self) -> int:
        return int(sum(s.iterations for s in self.intervals))

    def __len__(self):
        return len(self.intervals)


def _snapshots(interval: LinearInterval, mode: str, position: str = "start",
               constrained: tuple[str, ...] | None = None) -> tuple[list[Snapshot], int, float]:
    a, b = interval.t_start, interval.t_end
    tm = 0.5 * (a + b)
    if mode == "popf":
        constrained = ("start", "end") if constrained is None else constrained
        snaps = [Snapshot(a, a - tm, "start" in constrained, "start"),
                 Snapshot(tm, 0.0, "median" in constrained, "median"),
                 Snapshot(b, b - tm, "end" in constrained, "end")]
        return snaps, 1, tm
    if mode == "topf":
        t = {"start": a, "median": tm, "end": b}[position]
        return [Snapshot(t, 0.0, True, position)], 0, t
    raise ValueError(f"unknown mode {mode!r}")


def assemble(model: acpf.PowerFlowModel, interval: LinearInterval, forecast: ForecastSeries,
             gains: IntervalGains, mode: str = "popf", config: PopfConfig | None = None,
             constrained: tuple[str, ...] | None = None) -> IntervalProblem:
    config = config or PopfConfig()
    snaps, obj, _ = _snapshots(interval, mode, config.topf_position, constrained)
    return IntervalProblem(model, interval, forecast, gains, snaps, obj,
                           slack_limits=config.slack_limits, cost_scale=config.cost_scale,
                           limit_backoff=config.limit_backoff)


def _diagnose(problem: IntervalProblem, z: np.ndarray, top: int = 5) -> list[str]:
    g, _, h, _ = problem.constraints(z)
    labels = problem.ineq_labels()
    out = []
    order = np.argsort(-h)[:top]
    for i in order:
        if h[i] > 0:
            out.append(f"{labels[i]} violated by {h[i]:.3e}")
    if len(g):
        out.append(f"max power-flow mismatch {np.abs(g).max():.3e} p.u.")
    return out


def solve_interval(problem: IntervalProblem, warm: WarmStart | None = None,
                   options: ipm.IPMOptions | None = None, warm_duals: bool = False,
                   mode: str = "popf") -> IntervalSchedule:
    z0 = problem.initial_point(warm)
    kw = {}
    if warm is not None and warm_duals:
        kw = dict(lam0=warm.lam, mu0=warm.mu, s0=warm.s)
    try:
        res = ipm.solve(problem, z0, options, **kw)
    except ipm.SolverError as exc:
        z = exc.result.x if exc.result is not None else z0
        raise IntervalSolveError(str(exc), diagnosis=_diagnose(problem, z), result=exc.result) from exc
    z = res.x
    base = problem.base
    snaps = problem.snapshots
    states = [acpf.VoltageState(x=problem.state(z, s), t=snap.t) for s, snap in enumerate(snaps)]
    p_gen = np.array([problem.p_gen(z, s) for s in range(len(snaps))])
    drift = np.zeros(len(problem.curves))
    drift[problem.ctrl] = problem.rate[problem.ctrl] * base
    p_ref = p_gen[problem.obj].copy()
    cost = generation_cost(p_gen[problem.obj], problem.curves)
    sched = IntervalSchedule(
        interval=problem.interval, mode=mode, snapshots=snaps, t_ref=snaps[problem.obj].t,
        p_ref=p_ref, drift_mw=drift, v_src=problem.v_src(z), states=states, p_gen=p_gen, cost=cost,
        iterations=res.iterations, converged=res.converged, gains=problem.gains,
        warm_started=warm is not None, balancing=problem.bal,
        eq_violation=res.eq_violation, ineq_violation=res.ineq_violation,
        duals=(res.lam, res.mu, res.s))
    if sched.median_index is not None:
        sched.energy = _median_energy(problem, sched)
    return sched


def _median_energy(problem: IntervalProblem, sched: IntervalSchedule) -> np.ndarray:
    i = sched.median_index
    pc_bus = np.zeros(problem.n)
    np.add.at(pc_bus, problem.model.gen_bus, sched.p_gen[i])
    return (pc_bus - problem.pe[i] * problem.base) * sched.interval.width


def interval_energy(schedule: IntervalSchedule, forecast: ForecastSeries,
                    model: acpf.PowerFlowModel) -> np.ndarray:
    """Per-bus energy over the interval from the median snapshot, MWh."""
    iv = schedule.interval
    tm = iv.median
    p, _ = schedule.controls_at(tm)
    i = schedule.median_index
    if i is not None:
        p = schedule.p_gen[i]
    pc_bus = np.zeros(model.n)
    np.add.at(pc_bus, model.gen_bus, p)
    pe, _ = forecast.aligned(model).sample(tm, iv.parent)
    return (pc_bus - pe) * iv.width


def sampled_peak(values: np.ndarray) -> np.ndarray:
    """Column maxima of equally spaced samples, refined by a parabola through the argmax."""
    S = values.shape[0]
    i = np.argmax(values, axis=0)
    peak = values[i, np.arange(values.shape[1])]
    if S < 3:
        return peak
    c = np.clip(i, 1, S - 2)
    cols = np.arange(values.shape[1])
    y0, y1, y2 = values[c - 1, cols], values[c, cols], values[c + 1, cols]
    a = 0.5 * (y0 - 2 * y1 + y2)
    b = 0.5 * (y2 - y0)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = -b / (2 * a)
        vertex = y1 - b * b / (4 * a)
    ok = (a < 0) & (np.abs(u) <= 1)
    return np.where(ok, np.maximum(peak, vertex), peak)


def interior_excess(problem: IntervalProblem, sched: IntervalSchedule, forecast: ForecastSeries,
                    samples: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Largest overshoot of each voltage and line limit over the interval, p.u., zero where none."""
    model = problem.model
    iv = sched.interval
    L = problem.lines
    x0 = sched.states[sched.median_index or 0].x
    rows = []
    for t in np.linspace(iv.t_start, iv.t_end, samples):
        p, v = sched.controls_at(float(t))
        g = build_rhs(float(t), forecast, p, v, model, iv.parent)
        try:
            x = acpf.solve_power_flow(model, g, x0.copy()).x
        except (acpf.PowerFlowDivergence, acpf.SingularJacobian):
            continue
        vm = acpf.voltage_magnitudes(x)
        sf, st = acpf.branch_power(x, model.adm)
        flow = np.maximum(np.abs(sf.real[L]), np.abs(st.real[L]))
        rows.append(np.r_[problem.vmin - vm, vm - problem.vmax, flow - problem.rate_full])
    n = problem.n
    if not rows:
        return np.zeros(n), np.zeros(n), np.zeros(len(L))
    ex = np.maximum(sampled_peak(np.array(rows)), 0.0)
    return ex[:n], ex[n:2 * n], ex[2 * n:]


def _tighten_interior(problem, sched, forecast, config: PopfConfig, mode: str) -> IntervalSchedule:
    """Re-solve with shrunken limits until sampled interior points respect the true ones."""
    tol, margin = 1e-7, config.interior_margin
    for _ in range(config.interior_rounds):
        ex = interior_excess(problem, sched, forecast, config.interior_samples)
        if max((float(e.max(initial=0.0)) for e in ex)) <= tol:
            break
        problem.add_tightening(*(np.where(e > tol, e + margin, 0.0) for e in ex))
        prev = sched
        sched = solve_interval(problem, warm_from(prev, problem, config.warm_duals), config.ipm,
                               config.warm_duals, mode)
        sched.iterations += prev.iterations
        sched.tightenings = prev.tightenings + 1
        sched.warm_started = prev.warm_started
    return sched


def warm_from(schedule: IntervalSchedule, problem: IntervalProblem, with_duals: bool) -> WarmStart:
    i = schedule.median_index if schedule.median_index is not None else 0
    c = problem.ctrl
    p_ctrl = schedule.p_gen[i][c] / problem.base
    lam = mu = s = None
    if with_duals and schedule.duals is not None:
        lam, mu, s = schedule.duals
    return WarmStart(p_ctrl=p_ctrl, v_src=schedule.v_src[problem.vbus], x=schedule.states[i].x,
                     lam=lam, mu=mu, s=s)


def plan_intervals(model, forecast, config: PopfConfig) -> list[LinearInterval]:
    if config.build_intervals:
        return build_intervals(model, forecast, Baseline.from_case(model), config.intervals)
    return uniform_intervals(forecast)


def _run(model, forecast, config: PopfConfig, mode: str, intervals=None, constrained=None) -> PeriodSchedule:
    forecast = forecast.aligned(model)
    if intervals is None:
        intervals = plan_intervals(model, forecast, config)
    fr = FrequencyResponseModel.from_case(model.case, config.k_f, config.freq_sign_flip)
    out, prov = [], []
    prev = None
    for idx, iv in enumerate(intervals):
        gains = interval_gains(fr, forecast, iv.parent)
        try:
            problem = assemble(model, iv, forecast, gains, mode, config, constrained)
        except AssemblyError as exc:
            raise IntervalSolveError(f"interval {idx} [{iv.t_start:g}, {iv.t_end:g}] h: {exc}", index=idx) from exc
        warm = None
        if config.warm_start and prev is not None:
            warm = warm_from(prev, problem, config.warm_duals)
        try:
            sched = solve_interval(problem, warm, config.ipm, config.warm_duals, mode)
        except IntervalSolveError as exc:
            if warm is None:
                exc.index = idx
                raise IntervalSolveError(f"interval {idx} [{iv.t_start:g}, {iv.t_end:g}] h: {exc}",
                                         idx, exc.diagnosis, exc.result) from exc
            log.warning("warm start failed on interval %d, retrying cold", idx)
            try:
                sched = solve_interval(problem, None, config.ipm, False, mode)
            except IntervalSolveError as exc2:
                raise IntervalSolveError(f"interval {idx} [{iv.t_start:g}, {iv.t_end:g}] h: {exc2}",
                                         idx, exc2.diagnosis, exc2.result) from exc2
        if mode == "popf" and config.interior_samples > 2:
            try:
                sched = _tighten_interior(problem, sched, forecast, config, mode)
            except IntervalSolveError as exc:
                raise IntervalSolveError(f"interval {idx} [{iv.t_start:g}, {iv.t_end:g}] h, interior tightening: "
                                         f"{exc}", idx, exc.diagnosis, exc.result) from exc
        prov.append("warm" if sched.warm_started else "cold")
        out.append(sched)
        prev = sched
    return PeriodSchedule(mode=mode, intervals=out, provenance=prov)


def run_period(model: acpf.PowerFlowModel, forecast: ForecastSeries, config: PopfConfig | None = None,
               intervals: list[LinearInterval] | None = None) -> PeriodSchedule:
    """Solve every linear interval in order, warm-starting from the previous median."""
    return _run(model, forecast, config or PopfConfig(), "popf", intervals)


def run_topf(model: acpf.PowerFlowModel, forecast: ForecastSeries, config: PopfConfig | None = None,
             intervals: list[LinearInterval] | None = None) -> PeriodSchedule:
    """Single-snapshot OPF per interval; controls then drift affinely across it."""
    return _run(model, forecast, config or PopfConfig(), "topf", intervals)


def with_cold_starts(config: PopfConfig) -> PopfConfig:
    return replace(config, warm_start=False)
