import dataclasses
import functools

import numpy as np
import pytest

from popf_lab import acpf
from popf_lab import forecast as fc
from popf_lab.netcase import bundled_case, parse_case


def case_text(buses, gens, branches, costs=None, base=100.0, extra=""):
    """MATPOWER text from short row lists.

    buses: (id, type, pd, qd[, gs, bs, vmax, vmin])
    gens: (bus, pg, qmax, qmin, vg, pmax, pmin)
    branches: (f, t, r, x, b[, rate, tap, shift])
    costs: (c2, c1, c0) per generator
    """
    out = [f"mpc.baseMVA = {base};", "mpc.bus = ["]
    for b in buses:
        bid, typ, pd, qd, *rest = b
        gs, bs, vmax, vmin = (rest + [0, 0, 1.1, 0.9][len(rest):])[:4]
        out.append(f"{bid} {typ} {pd} {qd} {gs} {bs} 1 1 0 100 1 {vmax} {vmin};")
    out += ["];", "mpc.gen = ["]
    for g in gens:
        bus, pg, qmax, qmin, vg, pmax, pmin = g
        out.append(f"{bus} {pg} 0 {qmax} {qmin} {vg} 100 1 {pmax} {pmin};")
    out += ["];", "mpc.branch = ["]
    for br in branches:
        f, t, r, x, b, *rest = br
        rate, tap, shift = (rest + [0, 0, 0][len(rest):])[:3]
        out.append(f"{f} {t} {r} {x} {b} {rate} 0 0 {tap} {shift} 1;")
    out += ["];", "mpc.gencost = ["]
    for c in costs or [(0.01, 20, 0)] * len(gens):
        out.append(f"2 0 0 3 {c[0]} {c[1]} {c[2]};")
    out += ["];", extra]
    return "\n".join(out)


def two_bus_text(pd=50.0, qd=20.0, x=0.1, r=0.0, b=0.0):
    return case_text([(1, 3, 0, 0), (2, 1, pd, qd)], [(1, 0, 300, -300, 1.0, 300, 0)], [(1, 2, r, x, b)])


@functools.lru_cache(maxsize=None)
def _model(name):
    return acpf.compile_model(bundled_case(name))


@pytest.fixture(scope="session")
def case14_model():
    return _model("case14")


@pytest.fixture(scope="session")
def case118_model():
    return _model("case118")


@pytest.fixture
def two_bus():
    return acpf.compile_model(parse_case(two_bus_text(), "two_bus"))


def ramp_forecast(model, ramp=0.05, hours=(0.0, 1.0, 2.0), shape=None):
    """Case-file loads scaled by ``1 + ramp * shape`` at each timepoint (linear between)."""
    case = model.case
    ids = [b.id for b in case.buses]
    pd = np.array([b.pd for b in case.buses])
    qd = np.array([b.qd for b in case.buses])
    shape = shape if shape is not None else [0.0, 1.0, 0.0][:len(hours)]
    p = [pd * (1 + ramp * s) for s in shape]
    q = [qd * (1 + ramp * s) for s in shape]
    return fc.from_values(hours, ids, p, q)


def random_state(model, rng, spread=0.1):
    n = model.n
    v = (1 + spread * rng.uniform(-1, 1, n)) * np.exp(1j * spread * rng.uniform(-1, 1, n))
    return acpf.to_state(v)


def with_line_limits(model, limits):
    """Recompile ``model`` with branch k limited to ``limits[k]`` MW."""
    case = model.case
    brs = list(case.branches)
    for k, rate in limits.items():
        brs[k] = dataclasses.replace(brs[k], p_line_max=rate)
    return acpf.compile_model(dataclasses.replace(case, branches=tuple(brs)))


def crossing_scenario(branch=0):
    """case14 under a 5% one-hour ramp with one branch limited halfway between
    the unconstrained TOPF flows at the interval start and end."""
    from popf_lab import popf, verify
    model = _model("case14")
    f = ramp_forecast(model, ramp=0.05, hours=(0.0, 1.0), shape=[0.0, 1.0])
    cfg = popf.PopfConfig(build_intervals=False)
    sched = popf.run_topf(model, f, cfg).intervals[0]
    ends = []
    for t in (0.0, 1.0):
        pf, pt = acpf.branch_flows(verify.solve_at(model, f, sched, t).x, model)
        ends.append(max(abs(pf[branch]), abs(pt[branch])))
    limit = round(0.5 * (ends[0] + ends[1]), 3)
    return with_line_limits(model, {branch: limit}), f, cfg, limit


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
