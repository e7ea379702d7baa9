import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popf_lab.forecast import equivalent_load, read_csv
from popf_lab.netcase import bundled_case, load_case
from popf_lab.scenario import ScenarioError, ScenarioSpec, generate_scenario, load_factor, make_profiles, solar_shape


@pytest.fixture(scope="module")
def default_scenario():
    return generate_scenario(ScenarioSpec())


def _energies(raw, spec):
    return raw.p_ips.sum() * spec.step, raw.p_load.sum() * spec.step


def test_energy_identities(default_scenario):
    spec = ScenarioSpec()
    case, raw = default_scenario
    ips, demand = _energies(raw, spec)
    assert ips == pytest.approx(0.30 * demand, rel=1e-9)
    n_wind = spec.n_wind
    wind_buses = np.flatnonzero(raw.p_ips[:, :].max(axis=0) > 0)
    assert len(wind_buses) == 30
    # night hours carry wind only
    night = (raw.times < spec.sunrise) | (raw.times > spec.sunset)
    assert np.count_nonzero(raw.p_ips[night].max(axis=0) > 0) == n_wind
    assert len(raw.times) == 25 and raw.times[-1] == 24.0


def test_wind_share_identity():
    spec = ScenarioSpec()
    raw = make_profiles(spec, bundled_case("case118"))
    day = solar_shape(raw.times, spec.sunrise, spec.sunset) > 0
    cols = np.flatnonzero(raw.p_ips.max(axis=0) > 0)
    solar_cols = [c for c in cols if np.all(raw.p_ips[~day, c] == 0)]
    wind_cols = [c for c in cols if c not in solar_cols]
    ips, _ = _energies(raw, spec)
    wind = raw.p_ips[:, wind_cols].sum() * spec.step
    assert wind == pytest.approx(0.60 * ips, rel=1e-9)


def test_penetration_zero():
    _, raw = generate_scenario(ScenarioSpec(penetration=0.0, line_margin=0.0))
    assert np.all(raw.p_ips == 0)


def test_same_seed_byte_identical(tmp_path):
    generate_scenario(ScenarioSpec(), tmp_path / "a")
    generate_scenario(ScenarioSpec(), tmp_path / "b")
    for name in ("case.m", "forecast.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_written_files_reload(tmp_path, default_scenario):
    case, raw = default_scenario
    generate_scenario(ScenarioSpec(), tmp_path)
    again = load_case(tmp_path / "case.m")
    assert again == case
    fc = equivalent_load(read_csv(tmp_path / "forecast.csv"))
    assert np.allclose(fc.p, equivalent_load(raw).p, rtol=0, atol=1e-12)


def test_different_seed_moves_units():
    a = make_profiles(ScenarioSpec(seed=1), bundled_case("case118"))
    b = make_profiles(ScenarioSpec(seed=2), bundled_case("case118"))
    assert not np.array_equal(a.p_ips.max(axis=0) > 0, b.p_ips.max(axis=0) > 0)


def test_line_limits_assigned(default_scenario):
    case, _ = default_scenario
    rates = np.array([br.p_line_max for br in case.branches])
    assert np.count_nonzero(np.isfinite(rates)) == 20
    assert np.all(rates[np.isfinite(rates)] >= 20.0)
    assert case.name.endswith("_ips")


@pytest.mark.parametrize("kw, msg", [
    ({"n_wind": 80, "n_solar": 30}, "cannot be placed"),
    ({"n_wind": 0, "n_solar": 0}, "at least one IPS unit"),
    ({"n_wind": 0}, "no wind units"),
    ({"n_solar": 0}, "no solar units"),
    ({"start": 20.0, "hours": 4.0, "sunset": 18.0}, "no daylight"),
])
def test_unreachable_targets(kw, msg):
    with pytest.raises(ScenarioError, match=msg):
        make_profiles(ScenarioSpec(**kw), bundled_case("case118"))


@pytest.mark.parametrize("kw", [{"penetration": 1.5}, {"wind_share": -0.1}, {"n_wind": -1}, {"step": 0.0}])
def test_spec_validation(kw):
    with pytest.raises(ScenarioError):
        ScenarioSpec(**kw)


def test_profile_shapes():
    t = np.arange(0.0, 24.5, 0.5)
    s = solar_shape(t)
    assert np.all(s[(t <= 6) | (t >= 18)] == 0) and s.max() == pytest.approx(1.0)
    assert np.all(load_factor(t) > 0)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.05, 0.6), st.floats(0.0, 1.0), st.integers(0, 10 ** 6))
def test_energy_identity_property(pen, share, seed):
    spec = ScenarioSpec(penetration=pen, wind_share=share, seed=seed, n_wind=8, n_solar=4)
    raw = make_profiles(spec, bundled_case("case118"))
    ips, demand = _energies(raw, spec)
    assert ips == pytest.approx(pen * demand, rel=1e-9)
