"""Linear time interval construction by Jacobian-norm bisection."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import acpf
from .forecast import ForecastSeries, build_rhs

log = logging.getLogger(__name__)


class IntervalBuildError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntervalConfig:
    mu: float | None = None  # absolute threshold; None -> mu_rel * ||J(t_0)||
    mu_rel: float = 0.05
    max_depth: int = 10
    min_width: float = 1.0 / 64
    difference_norm: bool = False  # compare ||J_a - J_b|| instead of | ||J_a|| - ||J_b|| |

    def __post_init__(self):
        if self.mu is not None and not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not self.min_width > 0:
            raise ValueError("min_width must be positive")


@dataclass(frozen=True)
class LinearInterval:
    t_start: float
    t_end: float
    parent: int  # forecasting interval index
    depth: int = 0
    jac_norm_start: float = float("nan")
    jac_norm_end: float = float("nan")
    warned: bool = False

    @property
    def width(self) -> float:
        return self.t_end - self.t_start

    @property
    def median(self) -> float:
        return median(self)


def median(interval: LinearInterval) -> float:
    return 0.5 * (interval.t_start + interval.t_end)


def jac_inf_norm(J) -> float:
    """Maximum absolute row sum."""
    if sp.issparse(J):
        if J.shape[0] == 0:
            return 0.0
        return float(np.max(np.asarray(abs(J).sum(axis=1)).ravel(), initial=0.0))
    J = np.asarray(J, dtype=float)
    if J.size == 0:
        return 0.0
    return float(np.abs(J).sum(axis=1).max())


@dataclass(frozen=True)
class Baseline:
    """Controls used for the test solves: MW per generator and per-bus setpoints."""

    p_gen: np.ndarray
    v_src: np.ndarray

    @classmethod
    def from_case(cls, model: acpf.PowerFlowModel) -> "Baseline":
        return cls(np.array([g.pg for g in model.case.generators], float), acpf.setpoints(model))


class _JacobianProbe:
    """Solves the power flow at a time point and caches the Jacobian there."""

    def __init__(self, model, forecast, baseline):
        self.model = model
        self.forecast = forecast.aligned(model)
        self.baseline = baseline
        self.cache: dict[float, sp.csc_matrix] = {}
        self._x = acpf.flat_start(model, baseline.v_src)

    def jacobian(self, t: float, k: int) -> sp.csc_matrix:
        if t not in self.cache:
            g = build_rhs(t, self.forecast, self.baseline.p_gen, self.baseline.v_src, self.model, k)
            try:
                st = acpf.solve_power_flow(self.model, g, self._x.copy())
            except (acpf.PowerFlowDivergence, acpf.SingularJacobian) as exc:
                raise IntervalBuildError(f"power flow failed at t = {t} h: {exc}") from exc
            self.cache[t] = acpf.jacobian(st.x, self.model)
        return self.cache[t]


def linearity_gap(Ja, Jb, difference_norm: bool = False) -> float:
    if difference_norm:
        return jac_inf_norm(Ja - Jb)
    return abs(jac_inf_norm(Ja) - jac_inf_norm(Jb))


def build_intervals(model: acpf.PowerFlowModel, forecast: ForecastSeries, baseline: Baseline | None = None,
                    config: IntervalConfig | None = None) -> list[LinearInterval]:
    """Bisect every forecasting interval until its endpoint Jacobians agree.

    Intervals stopped by ``max_depth`` or ``min_width`` are emitted with
    ``warned=True``. The output tiles the forecast horizon in time order.
    """
    config = config or IntervalConfig()
    baseline = baseline or Baseline.from_case(model)
    probe = _JacobianProbe(model, forecast, baseline)
    times = forecast.times
    mu = config.mu
    if mu is None:
        mu = config.mu_rel * jac_inf_norm(probe.jacobian(float(times[0]), 0))

    out: list[LinearInterval] = []

    def split(a: float, b: float, k: int, depth: int) -> None:
        Ja, Jb = probe.jacobian(a, k), probe.jacobian(b, k)
        na, nb = jac_inf_norm(Ja), jac_inf_norm(Jb)
        if linearity_gap(Ja, Jb, config.difference_norm) < mu:
            out.append(LinearInterval(a, b, k, depth, na, nb))
            return
        if depth >= config.max_depth or (b - a) / 2 < config.min_width:
            log.warning("interval [%g, %g] h kept without meeting the linearity test (depth %d)", a, b, depth)
            out.append(LinearInterval(a, b, k, depth, na, nb, warned=True))
            return
        m = 0.5 * (a + b)
        split(a, m, k, depth + 1)
        split(m, b, k, depth + 1)

    for k in range(forecast.n_intervals):
        split(float(times[k]), float(times[k + 1]), k, 0)
    return out


def uniform_intervals(forecast: ForecastSeries) -> list[LinearInterval]:
    """The forecasting intervals themselves, without any linearity test."""
    t = forecast.times
    return [LinearInterval(float(t[k]), float(t[k + 1]), k) for k in range(forecast.n_intervals)]
