"""Seeded synthetic high-renewable scenarios on a base case.

Intermittent sources are placed at random load buses. Profiles are scaled
so that, over the generated window, IPS energy is a fixed fraction of
demand energy and wind takes a fixed share of the IPS energy. Energies are
sums over timepoints times the step, which the scaling makes exact.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import acpf
from .forecast import RawSeries, build_rhs, equivalent_load, write_csv
from .freqresp import FrequencyResponseModel, drift, interval_gains
from .netcase import NetworkCase, bundled_case, format_case, load_case

# Normalized demand, hours 0..24.
DAILY_LOAD = np.array([0.67, 0.63, 0.60, 0.59, 0.59, 0.60, 0.66, 0.74, 0.81, 0.86, 0.89, 0.90, 0.90,
                       0.89, 0.89, 0.90, 0.93, 0.98, 1.00, 0.99, 0.95, 0.88, 0.80, 0.72, 0.67])


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    base_case: str = "case118"  # bundled name or path
    penetration: float = 0.30
    wind_share: float = 0.60
    n_wind: int = 20
    n_solar: int = 10
    seed: int = 42
    start: float = 0.0
    hours: float = 24.0
    step: float = 1.0
    load_scale: float = 1.0
    load_noise: float = 0.02
    wind_ar: float = 0.85
    wind_sigma: float = 0.12
    sunrise: float = 6.0
    sunset: float = 18.0
    line_margin: float = 1.0
    line_floor_mw: float = 20.0
    n_limited: int | None = 20  # most loaded branches that receive a limit; None limits all
    k_f: float = 1.0
    freq_sign_flip: bool = False

    def __post_init__(self):
        if not 0 <= self.penetration <= 1:
            raise ScenarioError("penetration must lie in [0, 1]")
        if not 0 <= self.wind_share <= 1:
            raise ScenarioError("wind_share must lie in [0, 1]")
        if self.n_wind < 0 or self.n_solar < 0:
            raise ScenarioError("unit counts must be non-negative")
        if not self.step > 0 or not self.hours > 0:
            raise ScenarioError("step and hours must be positive")


def _base(spec: ScenarioSpec) -> NetworkCase:
    p = Path(spec.base_case)
    return load_case(p) if p.suffix == ".m" or p.exists() else bundled_case(spec.base_case)


def _grid(spec: ScenarioSpec) -> np.ndarray:
    n = int(round(spec.hours / spec.step))
    if abs(n * spec.step - spec.hours) > 1e-9:
        raise ScenarioError("hours must be a multiple of step")
    return spec.start + spec.step * np.arange(n + 1)


def load_factor(t: np.ndarray) -> np.ndarray:
    return np.interp(np.mod(t, 24.0), np.arange(25.0), DAILY_LOAD)


def solar_shape(t: np.ndarray, sunrise: float = 6.0, sunset: float = 18.0) -> np.ndarray:
    h = np.mod(t, 24.0)
    day = (h > sunrise) & (h < sunset)
    return np.where(day, np.sin(np.pi * (h - sunrise) / (sunset - sunrise)), 0.0)


def _ar1(rng, n, phi, sigma, mean=0.5, lo=0.02):
    out = np.empty(n)
    v = rng.normal(0.0, sigma / np.sqrt(max(1 - phi * phi, 1e-9)))
    for i in range(n):
        out[i] = v
        v = phi * v + rng.normal(0.0, sigma)
    return np.clip(mean + out, lo, 1.0)


def make_profiles(spec: ScenarioSpec, case: NetworkCase) -> RawSeries:
    rng = np.random.default_rng(spec.seed)
    t = _grid(spec)
    nt = len(t)
    ids = tuple(b.id for b in case.buses)
    pd = np.array([b.pd for b in case.buses]) * spec.load_scale
    qd = np.array([b.qd for b in case.buses]) * spec.load_scale
    # per-bus demand jitter scaled to the step so hourly and sub-hourly runs look alike
    phi = 0.9 ** spec.step
    jitter = np.zeros((nt, len(ids)))
    if spec.load_noise > 0:
        for j in range(len(ids)):
            jitter[:, j] = _ar1(rng, nt, phi, spec.load_noise, 0.0, lo=-0.5)
    fac = load_factor(t)[:, None] * (1.0 + jitter)
    p_load = fac * pd[None, :]
    q_load = fac * qd[None, :]

    n_units = spec.n_wind + spec.n_solar
    load_buses = [i for i, b in enumerate(case.buses) if b.pd > 0]
    if spec.penetration > 0:
        if n_units == 0:
            raise ScenarioError("penetration > 0 needs at least one IPS unit")
        if n_units > len(load_buses):
            raise ScenarioError(f"{n_units} IPS units cannot be placed on {len(load_buses)} load buses")
        if spec.wind_share > 0 and spec.n_wind == 0:
            raise ScenarioError("wind_share > 0 but no wind units")
        if spec.wind_share < 1 and spec.n_solar == 0:
            raise ScenarioError("solar share > 0 but no solar units")
    placed = rng.choice(load_buses, size=min(n_units, len(load_buses)), replace=False) if n_units else []
    wind_at, solar_at = list(placed[:spec.n_wind]), list(placed[spec.n_wind:n_units])

    wphi = spec.wind_ar ** spec.step
    wind = np.zeros((nt, len(ids)))
    for b in wind_at:
        wind[:, b] += rng.uniform(0.5, 1.5) * _ar1(rng, nt, wphi, spec.wind_sigma * np.sqrt(spec.step))
    solar = np.zeros((nt, len(ids)))
    shape = solar_shape(t, spec.sunrise, spec.sunset)
    for b in solar_at:
        solar[:, b] += rng.uniform(0.5, 1.5) * shape

    demand = p_load.sum() * spec.step
    target_w = spec.penetration * spec.wind_share * demand
    target_s = spec.penetration * (1 - spec.wind_share) * demand
    ew, es = wind.sum() * spec.step, solar.sum() * spec.step
    if target_w > 0 and ew <= 0:
        raise ScenarioError("wind target unreachable: wind profile has no energy in the window")
    if target_s > 0 and es <= 0:
        raise ScenarioError("solar target unreachable: the window has no daylight")
    wind *= target_w / ew if ew > 0 else 0.0
    solar *= target_s / es if es > 0 else 0.0
    p_ips = wind + solar
    return RawSeries(times=t, bus_ids=ids, p_load=p_load, q_load=q_load, ips_bus_ids=ids,
                     p_ips=p_ips, q_ips=np.zeros_like(p_ips))


def _peak_flows(case: NetworkCase, raw: RawSeries, k_f: float, sign_flip: bool) -> np.ndarray:
    """Peak |P| per branch, MW, over interval endpoints under drifting proportional dispatch.

    Per forecasting interval the median dispatch is proportional to the net
    demand there; the endpoints add the frequency-response drift, with the
    slack bus absorbing the remainder as it would in the scheduler.
    """
    model = acpf.compile_model(case)
    fc = equivalent_load(raw).aligned(model)
    fr = FrequencyResponseModel.from_case(case, k_f, sign_flip)
    pg0 = np.array([g.pg for g in case.generators])
    pmin = np.array([g.p_min for g in case.generators])
    pmax = np.array([g.p_max for g in case.generators])
    v = acpf.setpoints(model)
    x0 = acpf.flat_start(model, v)
    peak = np.zeros(len(case.branches))
    for k in range(fc.n_intervals):
        a, b = float(fc.times[k]), float(fc.times[k + 1])
        tm = 0.5 * (a + b)
        ref = pg0 * fc.sample(tm, k)[0].sum() / pg0.sum()
        gains = interval_gains(fr, fc, k)
        for t in (a, b):
            p = np.clip(ref + drift(gains, t - tm), pmin, pmax)
            g = build_rhs(t, fc, p, v, model, k)
            x = acpf.solve_power_flow(model, g, x0.copy()).x
            pf, pt = acpf.branch_flows(x, model)
            peak = np.maximum(peak, np.maximum(np.abs(pf), np.abs(pt)))
    return peak


def assign_line_limits(case: NetworkCase, raw: RawSeries, margin: float, floor_mw: float,
                       n_limited: int | None = None, k_f: float = 1.0, sign_flip: bool = False) -> NetworkCase:
    """Rate unlimited branches at ``margin`` times their endpoint peak flow.

    With ``n_limited`` only that many of the most heavily loaded branches get
    a rating; the rest stay unlimited.
    """
    peak = _peak_flows(case, raw, k_f, sign_flip)
    open_ = np.array([np.isinf(br.p_line_max) or br.p_line_max >= 9900 for br in case.branches])
    chosen = np.flatnonzero(open_)
    if n_limited is not None:
        chosen = set(chosen[np.argsort(-peak[chosen], kind="stable")[:n_limited]].tolist())
    branches = []
    for k, (br, pk) in enumerate(zip(case.branches, peak)):
        if k in chosen:
            br = dataclasses.replace(br, p_line_max=float(np.ceil(max(margin * pk, floor_mw))))
        elif open_[k]:
            br = dataclasses.replace(br, p_line_max=float("inf"))
        branches.append(br)
    return dataclasses.replace(case, branches=tuple(branches), name=f"{case.name}_ips")


def generate_scenario(spec: ScenarioSpec, out_dir: str | Path | None = None) -> tuple[NetworkCase, RawSeries]:
    """Build the modified case and raw forecast; write both when ``out_dir`` is given."""
    case = _base(spec)
    raw = make_profiles(spec, case)
    if spec.line_margin > 0:
        case = assign_line_limits(case, raw, spec.line_margin, spec.line_floor_mw, spec.n_limited,
                                  spec.k_f, spec.freq_sign_flip)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "case.m").write_text(format_case(case))
        write_csv(out / "forecast.csv", raw)
    return case, raw
