"""Within-interval controllable power drift from frequency response.

A linear load ramp produces a frequency deviation proportional to the
accumulated imbalance; each source answers with its modulation gain, which
makes its output affine in time over the interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forecast import ForecastSeries, slope_sum
from .netcase import NetworkCase


@dataclass(frozen=True)
class FrequencyResponseModel:
    gains: np.ndarray  # K_i per generator
    k_f: float = 1.0  # frequency deviation per MW of imbalance
    sign_flip: bool = False

    def __post_init__(self):
        if np.any(np.asarray(self.gains) < 0):
            raise ValueError("frequency modulation gains must be non-negative")
        if not self.k_f > 0:
            raise ValueError("k_f must be positive")

    @classmethod
    def from_case(cls, case: NetworkCase, k_f: float = 1.0, sign_flip: bool = False):
        return cls(gains=case.freq_gains(), k_f=k_f, sign_flip=sign_flip)


@dataclass(frozen=True)
class IntervalGains:
    """Per-generator ramp gains K_iK (MW/h) for one forecasting interval."""

    k: int
    values: np.ndarray
    direction: float = -1.0  # +1 when the sign flip is active

    @property
    def total(self) -> float:
        return float(self.values.sum())


def interval_gains(model: FrequencyResponseModel, forecast: ForecastSeries, k: int) -> IntervalGains:
    return IntervalGains(k=k, values=model.k_f * np.asarray(model.gains, float) * slope_sum(forecast, k),
                         direction=1.0 if model.sign_flip else -1.0)


def frequency_deviation(model: FrequencyResponseModel, forecast: ForecastSeries, k: int, t: float) -> float:
    tau = t - forecast.times[k]
    return model.k_f * tau * slope_sum(forecast, k)


def drift(gains: IntervalGains, dt: float) -> np.ndarray:
    """Change of each source's output over a span of ``dt`` hours."""
    return gains.direction * gains.values * dt


def adjusted_power(base: np.ndarray, gains: IntervalGains, t: float, t_start: float) -> np.ndarray:
    """P^c(t) = P^c(t_start) - K_iK (t - t_start), or + with the sign flip."""
    return np.asarray(base, float) + drift(gains, t - t_start)
