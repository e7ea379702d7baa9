"""Rectangular-coordinate AC power flow.

The state vector interleaves real and imaginary voltage parts,
``x = [e_1, f_1, ..., e_n, f_n]``. Every non-slack bus contributes two
residual rows: ``(P, Q)`` for load buses and ``(P, e^2 + f^2)`` for source
buses. Because injections and branch flows are quadratic in ``x``, their
Hessians are constant matrices, which the OPF layer exploits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .netcase import AdmittanceMatrix, BusKind, NetworkCase, build_admittance


class PowerFlowDivergence(RuntimeError):
    def __init__(self, message: str, mismatch: float, iterations: int):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class SingularJacobian(RuntimeError):
    pass


@dataclass
class VoltageState:
    """Solved nodal voltages at one instant."""

    x: np.ndarray
    t: float = 0.0
    iterations: int = 0
    mismatch: float = 0.0

    @property
    def v(self) -> np.ndarray:
        return complex_voltage(self.x)


@dataclass(frozen=True)
class RhsVector:
    """Per-bus targets ``g`` over the non-slack equations (2 rows per bus)."""

    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class PowerFlowModel:
    """A case compiled into index sets and admittance matrices."""

    case: NetworkCase
    adm: AdmittanceMatrix
    slack: int
    nonslack: np.ndarray  # bus positions in equation order
    is_source: np.ndarray  # bool per bus (slack excluded)
    gen_bus: np.ndarray  # bus position of each generator
    state_cols: np.ndarray = field(repr=False)  # x entries of the non-slack buses

    @property
    def n(self) -> int:
        return self.adm.n

    @property
    def base_mva(self) -> float:
        return self.case.base_mva

    @property
    def pv_rows(self) -> np.ndarray:
        """Residual row indices of the squared-magnitude equations."""
        pos = np.flatnonzero(self.is_source[self.nonslack])
        return 2 * pos + 1


def compile_model(case: NetworkCase) -> PowerFlowModel:
    adm = build_admittance(case)
    slack = case.slack
    nonslack = np.array([i for i in range(case.n_bus) if i != slack], dtype=int)
    is_source = np.array([b.kind is BusKind.SOURCE for b in case.buses])
    cols = np.empty(2 * len(nonslack), dtype=int)
    cols[0::2] = 2 * nonslack
    cols[1::2] = 2 * nonslack + 1
    return PowerFlowModel(case=case, adm=adm, slack=slack, nonslack=nonslack,
                          is_source=is_source, gen_bus=case.gen_bus_index(), state_cols=cols)


# ---------------------------------------------------------------- primitives

def complex_voltage(x: np.ndarray) -> np.ndarray:
    return x[0::2] + 1j * x[1::2]


def to_state(v: np.ndarray) -> np.ndarray:
    x = np.empty(2 * len(v))
    x[0::2] = v.real
    x[1::2] = v.imag
    return x


def voltage_magnitudes(x: np.ndarray) -> np.ndarray:
    return np.hypot(x[0::2], x[1::2])


def _Y(adm) -> sp.spmatrix:
    return adm.Y if isinstance(adm, AdmittanceMatrix) else adm


def injections(x: np.ndarray, adm) -> tuple[np.ndarray, np.ndarray]:
    """Nodal (P, Q) injections in p.u.: ``S = V * conj(Y V)``."""
    v = complex_voltage(x)
    s = v * np.conj(_Y(adm) @ v)
    return s.real, s.imag


def _rect_derivatives(v: np.ndarray, current: np.ndarray, left: sp.spmatrix, M: sp.spmatrix):
    """d/dx of ``(left V) * conj(M V)`` with interleaved real columns.

    ``left`` selects the voltage multiplying each row (identity for buses,
    the from/to incidence for branches); ``current = M V``.
    """
    ci = sp.diags(np.conj(current)) @ left
    dv = sp.diags(left @ v) @ np.conj(M)
    d_de = ci + dv
    d_df = 1j * ci - 1j * dv
    n = len(v)
    rows = d_de.shape[0]
    d_de, d_df = sp.coo_matrix(d_de), sp.coo_matrix(d_df)
    data = np.r_[d_de.data, d_df.data]
    r = np.r_[d_de.row, d_df.row]
    c = np.r_[2 * d_de.col, 2 * d_df.col + 1]
    ds = sp.csr_matrix((data, (r, c)), shape=(rows, 2 * n))
    return ds.real.tocsr(), ds.imag.tocsr()


def injection_derivatives(x: np.ndarray, adm) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """(dP/dx, dQ/dx), each n x 2n."""
    v = complex_voltage(x)
    Y = _Y(adm)
    eye = sp.identity(len(v), format="csr")
    return _rect_derivatives(v, Y @ v, eye, Y)


def realify(M: sp.spmatrix) -> sp.csr_matrix:
    """Real 2n x 2n matrix R with ``Re(V^H M V) = x^T R x`` for Hermitian M."""
    M = sp.coo_matrix(M)
    a, b = M.data.real, M.data.imag
    r, c = M.row, M.col
    rows = np.r_[2 * r, 2 * r, 2 * r + 1, 2 * r + 1]
    cols = np.r_[2 * c, 2 * c + 1, 2 * c, 2 * c + 1]
    data = np.r_[a, -b, b, a]
    n = M.shape[0]
    return sp.csr_matrix((data, (rows, cols)), shape=(2 * n, 2 * n))


def quadratic_hessian(M: sp.spmatrix) -> sp.csr_matrix:
    """Hessian of ``Re(V^H M V)`` in x; M need not be Hermitian."""
    return realify(M + M.conj().T)


def injection_hessian(adm, lam_p: np.ndarray, lam_q: np.ndarray) -> sp.csr_matrix:
    """Hessian of ``sum(lam_p * P + lam_q * Q)``; constant in x."""
    Y = _Y(adm)
    return quadratic_hessian(sp.diags(lam_p + 1j * lam_q) @ Y)


def branch_power(x: np.ndarray, adm: AdmittanceMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Complex power entering each branch at its from and to ends, p.u."""
    v = complex_voltage(x)
    sf = v[adm.f_idx] * np.conj(adm.Yf @ v)
    st = v[adm.t_idx] * np.conj(adm.Yt @ v)
    return sf, st


def _incidence(idx: np.ndarray, n: int) -> sp.csr_matrix:
    m = len(idx)
    return sp.csr_matrix((np.ones(m), (np.arange(m), idx)), shape=(m, n))


def branch_power_derivatives(x: np.ndarray, adm: AdmittanceMatrix):
    """d(Pf)/dx and d(Pt)/dx, each n_branch x 2n."""
    v = complex_voltage(x)
    n = len(v)
    dpf, _ = _rect_derivatives(v, adm.Yf @ v, _incidence(adm.f_idx, n), adm.Yf)
    dpt, _ = _rect_derivatives(v, adm.Yt @ v, _incidence(adm.t_idx, n), adm.Yt)
    return dpf, dpt


def branch_power_hessian(adm: AdmittanceMatrix, lam_f: np.ndarray, lam_t: np.ndarray) -> sp.csr_matrix:
    """Hessian of ``sum(lam_f * Pf + lam_t * Pt)``; constant in x."""
    n = adm.n
    Mf = _incidence(adm.f_idx, n).T @ sp.diags(lam_f) @ adm.Yf
    Mt = _incidence(adm.t_idx, n).T @ sp.diags(lam_t) @ adm.Yt
    return quadratic_hessian(Mf + Mt)


def branch_flows(x: np.ndarray, model: PowerFlowModel) -> tuple[np.ndarray, np.ndarray]:
    """Active power at the from and to ends of every branch, MW."""
    sf, st = branch_power(x, model.adm)
    return sf.real * model.base_mva, st.real * model.base_mva


# ---------------------------------------------------------------- equations

def make_rhs(model: PowerFlowModel, pe: np.ndarray, qe: np.ndarray,
             p_src: np.ndarray, v_src: np.ndarray) -> RhsVector:
    """Assemble g from per-bus p.u. equivalent loads and source controls.

    ``p_src`` is the controllable active power summed per bus and ``v_src``
    the voltage magnitude setpoint per bus; both are read only at source buses.
    """
    ns = model.nonslack
    g = np.empty(2 * len(ns))
    src = model.is_source[ns]
    g[0::2] = -pe[ns] + np.where(src, p_src[ns], 0.0)
    g[1::2] = np.where(src, v_src[ns] ** 2, -qe[ns])
    return RhsVector(g)


def equation_values(x: np.ndarray, model: PowerFlowModel) -> np.ndarray:
    """f(x) over the non-slack equations."""
    p, q = injections(x, model.adm)
    ns = model.nonslack
    f = np.empty(2 * len(ns))
    f[0::2] = p[ns]
    vsq = x[0::2] ** 2 + x[1::2] ** 2
    f[1::2] = np.where(model.is_source[ns], vsq[ns], q[ns])
    return f


def residual(x: np.ndarray, g: RhsVector | np.ndarray, model: PowerFlowModel) -> np.ndarray:
    gv = g.values if isinstance(g, RhsVector) else g
    return equation_values(x, model) - gv


def full_jacobian(x: np.ndarray, model: PowerFlowModel) -> sp.csr_matrix:
    """d f / d x over all 2n state entries (slack columns included)."""
    dp, dq = injection_derivatives(x, model.adm)
    n = model.n
    ivals = np.arange(n)
    dv2 = sp.csr_matrix((np.r_[2 * x[0::2], 2 * x[1::2]], (np.r_[ivals, ivals], np.r_[2 * ivals, 2 * ivals + 1])),
                        shape=(n, 2 * n))
    ns = model.nonslack
    src = model.is_source[ns]
    second = sp.diags(src.astype(float)) @ dv2[ns] + sp.diags((~src).astype(float)) @ dq[ns]
    m = len(ns)
    perm = np.empty(2 * m, dtype=int)
    perm[0::2] = np.arange(m)
    perm[1::2] = m + np.arange(m)
    return sp.vstack([dp[ns], second]).tocsr()[perm]


def jacobian(x: np.ndarray, model: PowerFlowModel) -> sp.csr_matrix:
    """Square Jacobian over non-slack equations and non-slack (e, f)."""
    return full_jacobian(x, model)[:, model.state_cols].tocsc()


def equation_hessian(model: PowerFlowModel, lam: np.ndarray) -> sp.csr_matrix:
    """Hessian of ``lam . f(x)``; constant in x."""
    n = model.n
    ns = model.nonslack
    src = model.is_source[ns]
    lp = np.zeros(n)
    lq = np.zeros(n)
    lv = np.zeros(n)
    lp[ns] = lam[0::2]
    lq[ns] = np.where(src, 0.0, lam[1::2])
    lv[ns] = np.where(src, lam[1::2], 0.0)
    h = injection_hessian(model.adm, lp, lq)
    return (h + sp.diags(2.0 * np.repeat(lv, 2))).tocsr()


# ---------------------------------------------------------------- solver

def flat_start(model: PowerFlowModel, v_src: np.ndarray | None = None) -> np.ndarray:
    """e = voltage setpoint at source/slack buses (1.0 elsewhere), f = 0."""
    n = model.n
    e = np.ones(n)
    mask = model.is_source.copy()
    mask[model.slack] = True
    e[mask] = (setpoints(model) if v_src is None else v_src)[mask]
    x = np.zeros(2 * n)
    x[0::2] = e
    return x


def solve_power_flow(model: PowerFlowModel, g: RhsVector | np.ndarray, x0: np.ndarray | None = None,
                     tol: float = 1e-8, max_iter: int = 20) -> VoltageState:
    """Full Newton iteration on ``f(x) = g``; slack entries of ``x0`` stay fixed."""
    x = flat_start(model) if x0 is None else np.array(x0, dtype=float)
    cols = model.state_cols
    r = residual(x, g, model)
    norm = np.abs(r).max(initial=0.0)
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise PowerFlowDivergence(
                f"power flow did not converge in {max_iter} iterations (|mismatch| = {norm:.3e})", norm, it)
        J = jacobian(x, model)
        try:
            lu = spla.splu(J)
        except RuntimeError as exc:
            raise SingularJacobian(f"singular Jacobian at iteration {it}: {exc}") from None
        dx = lu.solve(-r)
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(f"singular Jacobian at iteration {it}")
        x[cols] += dx
        it += 1
        r = residual(x, g, model)
        norm = np.abs(r).max(initial=0.0)
        if not np.isfinite(norm):
            raise PowerFlowDivergence(f"power flow diverged at iteration {it}", norm, it)
    return VoltageState(x=x, iterations=it, mismatch=norm)


def case_rhs(model: PowerFlowModel) -> RhsVector:
    """g from the case-file loads and generator schedule."""
    case = model.case
    base = case.base_mva
    pe = np.array([b.pd for b in case.buses]) / base
    qe = np.array([b.qd for b in case.buses]) / base
    p_src = np.zeros(model.n)
    np.add.at(p_src, model.gen_bus, [g.pg / base for g in case.generators])
    return make_rhs(model, pe, qe, p_src, setpoints(model))


def setpoints(model: PowerFlowModel) -> np.ndarray:
    """Per-bus voltage setpoint (first generator on the bus wins; 1.0 at load buses)."""
    v = np.ones(model.n)
    seen = set()
    for g, b in zip(model.case.generators, model.gen_bus):
        if b not in seen:
            v[b] = g.v_set
            seen.add(b)
    return v
