import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popf_lab import acpf, popf
from popf_lab import forecast as fc
from popf_lab.freqresp import IntervalGains
from popf_lab.intervals import LinearInterval
from popf_lab.netcase import CostCurve, parse_case

from conftest import _model, case_text, ramp_forecast, with_line_limits

REF_CASE14_COST = 8081.526392989471  # reference AC OPF on case14, frozen


def _flat(model, hours=(0.0, 1.0)):
    return ramp_forecast(model, ramp=0.0, hours=hours, shape=[0.0] * len(hours))


# ---------------------------------------------------------------- cost

def test_generation_cost_examples():
    curves = [CostCurve(0.01, 20.0, 100.0)]
    assert popf.generation_cost([50.0], curves) == pytest.approx(1125.0)
    two = [CostCurve(0.01, 20.0, 100.0), CostCurve(0.02, 10.0, 7.0)]
    assert popf.generation_cost([0.0, 0.0], two) == 107.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(-50, 50), st.floats(-100, 100)), min_size=1, max_size=5),
       st.data())
def test_cost_convexity(coefs, data):
    curves = [CostCurve(*c) for c in coefs]
    n = len(curves)
    a = np.array(data.draw(st.lists(st.floats(0, 500), min_size=n, max_size=n)))
    b = np.array(data.draw(st.lists(st.floats(0, 500), min_size=n, max_size=n)))
    mid = popf.generation_cost((a + b) / 2, curves)
    assert mid <= (popf.generation_cost(a, curves) + popf.generation_cost(b, curves)) / 2 + 1e-7


# ---------------------------------------------------------------- oracles

def test_topf_matches_reference_opf(case14_model):
    sched = popf.run_topf(case14_model, _flat(case14_model))
    assert sched.intervals[0].cost == pytest.approx(REF_CASE14_COST, rel=1e-6)


def test_equal_marginal_cost_dispatch():
    # lossless 3-bus: 0.02 P1 + 20 = 0.04 P2 + 15 with P1 + P2 = 300
    text = case_text([(1, 3, 0, 0, 0, 0, 1.1, 0.9), (2, 2, 0, 0, 0, 0, 1.1, 0.9), (3, 1, 300, 0, 0, 0, 1.1, 0.9)],
                     [(1, 0, 500, -500, 1.0, 500, 0), (2, 0, 500, -500, 1.0, 500, 0)],
                     [(1, 3, 0, 0.05, 0), (2, 3, 0, 0.05, 0)], costs=[(0.01, 20, 0), (0.02, 15, 0)])
    model = acpf.compile_model(parse_case(text, "three_bus"))
    s = popf.run_period(model, _flat(model)).intervals[0]
    p = s.p_gen[s.median_index]
    assert p[0] == pytest.approx(7 / 0.06, abs=1e-4)
    assert p[1] == pytest.approx(300 - 7 / 0.06, abs=1e-4)


def test_zero_load_costs_constant_terms():
    text = case_text([(1, 3, 0, 0), (2, 2, 0, 0), (3, 1, 0, 0)],
                     [(1, 0, 100, -100, 1.0, 100, 0), (2, 0, 100, -100, 1.0, 100, 0)],
                     [(1, 2, 0.01, 0.1, 0), (2, 3, 0.01, 0.1, 0)], costs=[(0.01, 20, 30), (0.02, 15, 12)])
    model = acpf.compile_model(parse_case(text, "empty"))
    s = popf.run_period(model, _flat(model), popf.PopfConfig(slack_limits=True)).intervals[0]
    assert np.allclose(s.p_gen, 0.0, atol=1e-4)
    assert s.cost == pytest.approx(42.0, abs=1e-2)


# ---------------------------------------------------------------- structure

def _two_bus_model():
    text = case_text([(1, 3, 0, 0), (2, 2, 40, 10)], [(1, 0, 100, -100, 1.0, 200, 0), (2, 20, 100, -100, 1.0, 200, 0)],
                     [(1, 2, 0.01, 0.1, 0, 150)])
    return acpf.compile_model(parse_case(text, "pair"))


def test_constraint_counts_two_bus():
    model = _two_bus_model()
    f = _flat(model)
    iv = LinearInterval(0.0, 1.0, 0)
    zero = IntervalGains(0, np.zeros(2))
    pp = popf.assemble(model, iv, f, zero, "popf")
    tp = popf.assemble(model, iv, f, zero, "topf")
    z = pp.initial_point()
    g, _, h, _ = pp.constraints(z)
    gt, _, ht, _ = tp.constraints(tp.initial_point())
    assert len(g) == 3 * 2 * (model.n - 1) and len(gt) == 2 * (model.n - 1)
    # per snapshot: 2 V bounds per bus, 2 Q bounds per source, 2 P bounds per controllable unit, 4 line rows
    per = 2 * 2 + 2 * 2 + 2 * 1 + 4 * 1
    assert len(ht) == per and len(h) == 2 * per
    assert len(pp.ineq_labels()) == len(h)
    p = [pp.p_ctrl(z, s) for s in range(3)]
    assert np.array_equal(p[0], p[1]) and np.array_equal(p[1], p[2])


def test_cold_start_point_uses_case_controls():
    model = _two_bus_model()
    pp = popf.assemble(model, LinearInterval(0.0, 1.0, 0), _flat(model), IntervalGains(0, np.zeros(2)))
    z = pp.initial_point()
    assert z[pp.iP][0] == pytest.approx(0.2)
    assert np.allclose(z[pp.iV], 1.0)
    assert np.allclose(pp.state(z, 0), acpf.flat_start(model))


def test_ramp_beyond_range_is_assembly_error():
    model = _two_bus_model()
    gains = IntervalGains(0, np.array([0.0, 500.0]))  # 500 MW/h on a 200 MW unit
    with pytest.raises(popf.AssemblyError, match="ramp"):
        popf.assemble(model, LinearInterval(0.0, 1.0, 0), _flat(model), gains)


# ---------------------------------------------------------------- POPF runs

@pytest.fixture(scope="module")
def ramp_run():
    model = _model("case14")
    f = ramp_forecast(model, ramp=0.05)
    return model, f, popf.run_period(model, f, popf.PopfConfig(build_intervals=False))


def test_affine_control_relation(ramp_run):
    model, f, ps = ramp_run
    for s in ps.intervals:
        start, mid, end = s.p_gen
        c = [i for i in range(len(start)) if i != s.balancing]
        half = s.interval.width / 2
        assert np.allclose(start[c], mid[c] - s.drift_mw[c] * half, atol=1e-9)
        assert np.allclose(end[c], mid[c] + s.drift_mw[c] * half, atol=1e-9)
        assert np.allclose(mid[c], (start[c] + end[c]) / 2, atol=1e-9)
        # drift follows the ramp with the default (negative) direction
        assert np.allclose(s.drift_mw[c], -s.gains.values[c], atol=1e-12)


def test_feasibility_certificate(ramp_run):
    model, f, ps = ramp_run
    case = model.case
    vmin = np.array([b.v_min for b in case.buses])
    vmax = np.array([b.v_max for b in case.buses])
    for s in ps.intervals:
        for snap, pg, state in zip(s.snapshots, s.p_gen, s.states):
            g = fc.build_rhs(snap.t, f, np.where(np.arange(len(pg)) == s.balancing, 0.0, pg), s.v_src, model,
                             s.interval.parent)
            assert np.abs(acpf.residual(state.x, g, model)).max() <= 1e-6
            if snap.constrained:
                vm = acpf.voltage_magnitudes(state.x)
                assert np.all(vm >= vmin - 1e-6) and np.all(vm <= vmax + 1e-6)


def test_energy_identity_quadrature(ramp_run):
    model, f, ps = ramp_run
    for s in ps.intervals:
        e = popf.interval_energy(s, f, model)
        assert np.allclose(e, s.energy, rtol=1e-12, atol=1e-9)
        ts = np.linspace(s.interval.t_start, s.interval.t_end, 10001)
        net = []
        for t in ts:
            p, _ = s.controls_at(t)
            p = p.copy()
            p[s.balancing] = s.p_gen[s.median_index][s.balancing]
            bus = np.zeros(model.n)
            np.add.at(bus, model.gen_bus, p)
            net.append(bus - f.sample(t, s.interval.parent)[0])
        quad = np.trapezoid(np.array(net), ts, axis=0)
        scale = np.maximum(np.abs(quad), 1.0)
        assert np.max(np.abs(e - quad) / scale) <= 1e-10


def test_energy_example():
    model = _two_bus_model()
    iv = LinearInterval(0.0, 0.25, 0)
    f = fc.from_values([0.0, 0.25], [1, 2], [[0.0, 40.0], [0.0, 40.0]], np.zeros((2, 2)))
    s = popf.solve_interval(popf.assemble(model, iv, f, IntervalGains(0, np.zeros(2))))
    e = popf.interval_energy(s, f, model)
    pm = s.p_gen[s.median_index]
    assert e[1] == pytest.approx((pm[1] - 40.0) * 0.25, abs=1e-12)


def test_flat_forecast_popf_equals_topf(case14_model):
    f = _flat(case14_model)
    p = popf.run_period(case14_model, f).intervals[0]
    t = popf.run_topf(case14_model, f).intervals[0]
    assert p.cost == pytest.approx(t.cost, rel=1e-6)
    for x in p.states:
        assert np.allclose(x.x, p.states[0].x, atol=1e-6)
    assert np.allclose(p.states[0].x, t.states[0].x, atol=1e-4)


def test_topf_median_equals_popf_without_endpoint_limits(ramp_run):
    model, f, _ = ramp_run
    iv = LinearInterval(0.0, 1.0, 0)
    from popf_lab.freqresp import FrequencyResponseModel, interval_gains
    gains = interval_gains(FrequencyResponseModel.from_case(model.case), f, 0)
    cfg = popf.PopfConfig(topf_position="median")
    t = popf.solve_interval(popf.assemble(model, iv, f, gains, "topf", cfg), mode="topf")
    p = popf.solve_interval(popf.assemble(model, iv, f, gains, "popf", cfg, constrained=("median",)))
    assert p.cost == pytest.approx(t.cost, rel=1e-6)
    assert np.allclose(p.states[1].x, t.states[0].x, atol=1e-5)


def test_binding_line_at_limit():
    base = _model("case14")
    f = ramp_forecast(base, ramp=0.05, hours=(0.0, 1.0), shape=[0.0, 1.0])
    free = popf.run_period(base, f, popf.PopfConfig(build_intervals=False, interior_samples=0)).intervals[0]
    pf, _ = acpf.branch_flows(free.states[2].x, base)
    limit = 0.95 * abs(pf[0])
    model = with_line_limits(base, {0: limit})
    s = popf.run_period(model, f, popf.PopfConfig(build_intervals=False, interior_samples=0)).intervals[0]
    ends = []
    for i in (0, 2):
        pf, pt = acpf.branch_flows(s.states[i].x, model)
        ends.append(max(abs(pf[0]), abs(pt[0])))
    # 1e-6 p.u. expressed in MW
    assert max(ends) == pytest.approx(limit, abs=1e-6 * model.base_mva)
    assert s.cost > free.cost


def test_warm_start_not_more_iterations(case14_model):
    f = _flat(case14_model, hours=(0.0, 1.0, 2.0))
    cfg = popf.PopfConfig(build_intervals=False)
    warm = popf.run_period(case14_model, f, cfg)
    cold = popf.run_period(case14_model, f, popf.with_cold_starts(cfg))
    assert warm.provenance == ["cold", "warm"] and cold.provenance == ["cold", "cold"]
    assert warm.intervals[1].iterations <= cold.intervals[1].iterations
    assert warm.intervals[1].cost == pytest.approx(cold.intervals[1].cost, rel=1e-4)


def test_period_counts_follow_intervals(case14_model):
    f = ramp_forecast(case14_model, ramp=0.02, hours=tuple(np.arange(0, 1.75, 0.25)),
                      shape=[0.0, 0.2, 0.4, 0.6, 0.4, 0.2, 0.0])
    ps = popf.run_period(case14_model, f, popf.PopfConfig(build_intervals=False))
    assert len(ps) == 6 and all(s.interval.width == 0.25 for s in ps.intervals)
    assert ps.iterations == sum(s.iterations for s in ps.intervals)


def test_sampled_peak_recovers_parabola_vertex():
    t = np.linspace(0, 1, 11)
    y = -(t - 0.43) ** 2
    assert popf.sampled_peak(y[:, None])[0] == pytest.approx(0.0, abs=1e-12)
    lin = (2 * t)[:, None]
    assert popf.sampled_peak(lin)[0] == 2.0
