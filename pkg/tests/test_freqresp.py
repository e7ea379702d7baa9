import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popf_lab import forecast as fc
from popf_lab.freqresp import (FrequencyResponseModel, IntervalGains, adjusted_power, drift, frequency_deviation,
                               interval_gains)


def _ramp(slopes):
    p0 = np.zeros(len(slopes))
    return fc.from_values([0.0, 1.0], range(1, len(slopes) + 1), [p0, p0 + slopes], np.zeros((2, len(slopes))))


def test_gain_example():
    m = FrequencyResponseModel(gains=np.array([0.4, 0.6]))
    g = interval_gains(m, _ramp([6.0, 4.0]), 0)
    assert np.allclose(g.values, [4.0, 6.0]) and g.total == pytest.approx(10.0)


def test_flat_interval_zero_gains():
    g = interval_gains(FrequencyResponseModel(gains=np.array([0.4, 0.6])), _ramp([0.0, 0.0]), 0)
    assert np.all(g.values == 0)


def test_gains_118_scenario_elementwise():
    from popf_lab.netcase import bundled_case
    from popf_lab.scenario import ScenarioSpec, generate_scenario
    case, raw = generate_scenario(ScenarioSpec())
    s = fc.equivalent_load(raw)
    m = FrequencyResponseModel.from_case(case, k_f=1.0)
    shares = [g.p_max for g in bundled_case("case118").generators]
    for k in range(s.n_intervals):
        sw = sum(s.wp[k])
        expect = [1.0 * p / sum(shares) * sw for p in shares]
        assert np.allclose(interval_gains(m, s, k).values, expect, rtol=1e-12, atol=1e-9)


def test_frequency_deviation_examples():
    m = FrequencyResponseModel(gains=np.array([1.0]))
    s = _ramp([10.0])
    assert frequency_deviation(m, s, 0, 0.0) == 0.0
    assert frequency_deviation(m, s, 0, 0.5) == 5.0
    assert frequency_deviation(m, _ramp([-10.0]), 0, 0.5) < 0


def test_adjusted_power_examples():
    g = IntervalGains(k=0, values=np.array([4.0]))
    assert adjusted_power([100.0], g, 0.0, 0.0)[0] == 100.0
    assert adjusted_power([100.0], g, 0.5, 0.0)[0] == 98.0
    assert drift(g, 0.5)[0] * 2 == drift(g, 1.0)[0]


def test_sign_flip_reverses_drift():
    s = _ramp([10.0])
    base = FrequencyResponseModel(gains=np.array([1.0]))
    flip = FrequencyResponseModel(gains=np.array([1.0]), sign_flip=True)
    assert drift(interval_gains(base, s, 0), 1.0)[0] == -10.0
    assert drift(interval_gains(flip, s, 0), 1.0)[0] == 10.0


@pytest.mark.parametrize("kw", [{"gains": np.array([-1.0])}, {"gains": np.array([1.0]), "k_f": 0.0}])
def test_model_validation(kw):
    with pytest.raises(ValueError):
        FrequencyResponseModel(**kw)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=1, max_size=5), st.floats(-200, 200), st.floats(0.01, 3.0),
       st.floats(0.01, 10.0), st.floats(0, 24))
def test_affine_and_sign_properties(gains, ramp, width, k_f, t0):
    n = len(gains)
    s = fc.from_values([t0, t0 + width], range(1, n + 1), [np.zeros(n), np.full(n, ramp * width / n)],
                       np.zeros((2, n)))
    m = FrequencyResponseModel(gains=np.array(gains), k_f=k_f)
    g = interval_gains(m, s, 0)
    # total gain carries the sign of the ramp
    assert g.total * ramp >= 0
    base = np.linspace(10, 50, n)
    a, b, c = (adjusted_power(base, g, t0 + f * width, t0) for f in (0.0, 0.5, 1.0))
    assert np.allclose(a - 2 * b + c, 0.0, atol=1e-9 * (1 + np.abs(base).max()))
    assert np.array_equal(a, base)


def test_zero_gains_pass_through():
    g = interval_gains(FrequencyResponseModel(gains=np.zeros(3)), _ramp([5.0, -3.0, 9.0]), 0)
    base = np.array([10.0, 20.0, 30.0])
    assert np.array_equal(adjusted_power(base, g, 0.7, 0.0), base)
