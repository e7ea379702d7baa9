"""Piecewise-linear equivalent-load forecasts."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acpf import PowerFlowModel, RhsVector, make_rhs

CSV_COLUMNS = ("time_h", "bus_id", "p_load_mw", "q_load_mvar", "p_ips_mw", "q_ips_mvar")


class ForecastError(ValueError):
    pass


def _check_grid(times: np.ndarray) -> float:
    if times.ndim != 1 or len(times) < 2:
        raise ForecastError("a forecast needs at least two timepoints")
    steps = np.diff(times)
    if np.any(steps <= 0):
        raise ForecastError("timepoints must be strictly increasing")
    dt = float(steps[0])
    if not np.allclose(steps, dt, rtol=0.0, atol=1e-9 * max(1.0, abs(dt))):
        raise ForecastError("timepoints must be equally spaced")
    return dt


@dataclass(frozen=True)
class RawSeries:
    """Sampled loads and intermittent-source output, MW / MVAr, shape (N+1, buses)."""

    times: np.ndarray
    bus_ids: tuple[int, ...]
    p_load: np.ndarray
    q_load: np.ndarray
    ips_bus_ids: tuple[int, ...] = ()
    p_ips: np.ndarray | None = None
    q_ips: np.ndarray | None = None

    def __post_init__(self):
        _check_grid(np.asarray(self.times, dtype=float))


@dataclass(frozen=True)
class ForecastSeries:
    times: np.ndarray  # (N+1,)
    bus_ids: tuple[int, ...]
    p: np.ndarray  # (N+1, n_bus) MW
    q: np.ndarray
    wp: np.ndarray  # (N, n_bus) MW/h
    wq: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def interval_of(self, t: float) -> int:
        """Index k (0-based) of the forecasting interval holding t; t_N maps to the last."""
        t0, tn = self.horizon
        if t < t0 - 1e-12 or t > tn + 1e-12:
            raise ForecastError(f"t = {t} h outside forecast horizon [{t0}, {tn}]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(k, 0), self.n_intervals - 1)

    def sample(self, t: float, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(P^e(t), Q^e(t)) per bus by linear interpolation on interval k."""
        if k is None:
            k = self.interval_of(t)
        elif not self.times[k] - 1e-12 <= t <= self.times[k + 1] + 1e-12:
            raise ForecastError(f"t = {t} h not inside forecasting interval {k}")
        tau = t - self.times[k]
        if tau == 0.0:
            return self.p[k].copy(), self.q[k].copy()
        if t == self.times[k + 1]:
            return self.p[k + 1].copy(), self.q[k + 1].copy()
        return self.p[k] + tau * self.wp[k], self.q[k] + tau * self.wq[k]

    def aligned(self, model: PowerFlowModel) -> "ForecastSeries":
        """Reorder (and zero-fill) columns to the case's bus order."""
        ids = tuple(b.id for b in model.case.buses)
        if ids == self.bus_ids:
            return self
        pos = {b: i for i, b in enumerate(self.bus_ids)}
        unknown = set(self.bus_ids) - set(ids)
        if unknown:
            raise ForecastError(f"forecast references buses absent from the case: {sorted(unknown)}")
        out = []
        for arr in (self.p, self.q, self.wp, self.wq):
            new = np.zeros((arr.shape[0], len(ids)))
            for j, b in enumerate(ids):
                if b in pos:
                    new[:, j] = arr[:, pos[b]]
            out.append(new)
        return ForecastSeries(self.times, ids, *out)

    def window(self, t_start: float, t_end: float) -> "ForecastSeries":
        """Sub-forecast on the stored timepoints between t_start and t_end."""
        sel = (self.times >= t_start - 1e-9) & (self.times <= t_end + 1e-9)
        idx = np.flatnonzero(sel)
        if len(idx) < 2:
            raise ForecastError(f"window [{t_start}, {t_end}] holds fewer than two timepoints")
        return ForecastSeries(self.times[idx], self.bus_ids, self.p[idx], self.q[idx],
                              self.wp[idx[:-1]], self.wq[idx[:-1]])


def resample(series: ForecastSeries, t_start: float, t_end: float, step: float) -> ForecastSeries:
    """Piecewise-linear values on a new equally spaced grid over [t_start, t_end]."""
    n = int(round((t_end - t_start) / step))
    if n < 1 or abs(n * step - (t_end - t_start)) > 1e-9:
        raise ForecastError(f"window [{t_start}, {t_end}] h is not a whole number of {step} h steps")
    times = t_start + step * np.arange(n + 1)
    p, q = zip(*(series.sample(float(t)) for t in times))
    return from_values(times, series.bus_ids, np.array(p), np.array(q))


def slopes(values: np.ndarray, dt: float) -> np.ndarray:
    return (values[1:] - values[:-1]) / dt


def from_values(times, bus_ids, p, q) -> ForecastSeries:
    times = np.asarray(times, dtype=float)
    dt = _check_grid(times)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return ForecastSeries(times, tuple(int(b) for b in bus_ids), p, q, slopes(p, dt), slopes(q, dt))


def equivalent_load(raw: RawSeries) -> ForecastSeries:
    """P^e = P^l - P^ips and Q^e = Q^l - Q^ips at every timepoint."""
    p = np.array(raw.p_load, dtype=float)
    q = np.array(raw.q_load, dtype=float)
    if raw.ips_bus_ids:
        pos = {b: i for i, b in enumerate(raw.bus_ids)}
        missing = [b for b in raw.ips_bus_ids if b not in pos]
        if missing:
            raise ForecastError(f"IPS buses without a load entry: {missing}")
        cols = [pos[b] for b in raw.ips_bus_ids]
        if raw.p_ips is not None:
            p[:, cols] -= raw.p_ips
        if raw.q_ips is not None:
            q[:, cols] -= raw.q_ips
    return from_values(raw.times, raw.bus_ids, p, q)


def slope_sum(series: ForecastSeries, k: int) -> float:
    """Total active-power ramp of forecasting interval k, MW/h."""
    return float(series.wp[k].sum())


def build_rhs(t: float, series: ForecastSeries, p_gen: np.ndarray, v_src: np.ndarray,
              model: PowerFlowModel, k: int | None = None) -> RhsVector:
    """g(t) from sampled equivalent loads and source controls.

    ``p_gen`` is MW per generator (the slack bus entry is unused), ``v_src``
    the per-bus voltage setpoint in p.u.; a NaN at a source bus is an error.
    """
    series = series.aligned(model)
    pe, qe = series.sample(t, k)
    base = model.base_mva
    p_gen = np.asarray(p_gen, dtype=float)
    if p_gen.shape != (len(model.gen_bus),):
        raise ForecastError(f"expected {len(model.gen_bus)} generator controls, got {p_gen.shape}")
    v_src = np.asarray(v_src, dtype=float)
    src = np.flatnonzero(model.is_source)
    if np.any(np.isnan(v_src[src])) or np.any(np.isnan(p_gen[np.isin(model.gen_bus, src)])):
        bad = [model.case.buses[i].id for i in src if np.isnan(v_src[i])]
        raise ForecastError(f"missing control for source bus(es) {bad}")
    p_src = np.zeros(model.n)
    np.add.at(p_src, model.gen_bus, p_gen / base)
    return make_rhs(model, pe / base, qe / base, p_src, v_src)


# ---------------------------------------------------------------- CSV

def read_csv(path: str | Path) -> RawSeries:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        absent = [c for c in CSV_COLUMNS[:4] if c not in (reader.fieldnames or [])]
        if absent:
            raise ForecastError(f"{path}: missing column(s) {absent}")
        for rec in reader:
            rows.append((float(rec["time_h"]), int(rec["bus_id"]),
                         float(rec["p_load_mw"] or 0), float(rec["q_load_mvar"] or 0),
                         float(rec.get("p_ips_mw") or 0), float(rec.get("q_ips_mvar") or 0)))
    if not rows:
        raise ForecastError(f"{path}: no data rows")
    times = np.array(sorted({r[0] for r in rows}))
    buses = tuple(sorted({r[1] for r in rows}))
    ti = {t: i for i, t in enumerate(times)}
    bi = {b: j for j, b in enumerate(buses)}
    arrs = np.zeros((4, len(times), len(buses)))
    for t, b, *vals in rows:
        arrs[:, ti[t], bi[b]] = vals
    return RawSeries(times=times, bus_ids=buses, p_load=arrs[0], q_load=arrs[1],
                     ips_bus_ids=buses, p_ips=arrs[2], q_ips=arrs[3])


def write_csv(path: str | Path, raw: RawSeries) -> None:
    ips = {b: i for i, b in enumerate(raw.ips_bus_ids)}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for i, t in enumerate(raw.times):
            for j, b in enumerate(raw.bus_ids):
                pi = qi = 0.0
                if b in ips and raw.p_ips is not None:
                    pi = raw.p_ips[i, ips[b]]
                if b in ips and raw.q_ips is not None:
                    qi = raw.q_ips[i, ips[b]]
                w.writerow([repr(float(t)), b, repr(float(raw.p_load[i, j])), repr(float(raw.q_load[i, j])),
                            repr(float(pi)), repr(float(qi))])


def load_forecast(path: str | Path) -> ForecastSeries:
    return equivalent_load(read_csv(path))
