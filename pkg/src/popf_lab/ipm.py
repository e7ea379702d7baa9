"""Primal-dual interior-point method for smooth nonlinear programs.

Solves::

    min f(x)   s.t.   g(x) = 0,   h(x) <= 0

by adding slacks ``s > 0`` with ``h(x) + s = 0``, a logarithmic barrier on
``s``, and Newton steps on the perturbed KKT conditions. The inequality
block is condensed into the primal Hessian so each iteration factors one
symmetric saddle-point matrix. Step lengths follow the fraction-to-boundary
rule, separately for primal and dual variables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class NonlinearProgram(Protocol):
    def objective(self, x: np.ndarray) -> tuple[float, np.ndarray]: ...

    def constraints(self, x: np.ndarray) -> tuple[np.ndarray, sp.spmatrix, np.ndarray, sp.spmatrix]: ...

    def hessian(self, x: np.ndarray, lam: np.ndarray, mu: np.ndarray) -> sp.spmatrix: ...


class SolverError(RuntimeError):
    def __init__(self, message: str, result: "IPMResult | None" = None):
        super().__init__(message)
        self.result = result


@dataclass
class IPMOptions:
    max_iter: int = 200
    eq_tol: float = 1e-8  # max |g|
    ineq_tol: float = 1e-8  # max h
    grad_tol: float = 1e-6  # |grad L| / (1 + max multiplier)
    comp_tol: float = 1e-8  # mean complementarity s . mu / m
    xi: float = 0.99995  # fraction to boundary
    sigma: float = 0.1  # centering
    slack_floor: float = 1.0  # initial slacks are at least this


@dataclass
class IPMResult:
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    s: np.ndarray
    f: float
    iterations: int
    converged: bool
    eq_violation: float
    ineq_violation: float
    grad_norm: float
    barrier: float
    history: list[dict] = field(default_factory=list, repr=False)


def _saddle_solve(M, Jg, rhs_x, rhs_g):
    n, m = M.shape[0], Jg.shape[0]
    K = sp.bmat([[M, Jg.T], [Jg, None]], format="csc")
    rhs = np.r_[rhs_x, rhs_g]
    for reg in (0.0, 1e-10, 1e-8, 1e-6):
        if reg:
            K = K + sp.block_diag([reg * sp.identity(n), -reg * sp.identity(m)], format="csc")
        try:
            sol = spla.splu(K, permc_spec="COLAMD").solve(rhs)
        except RuntimeError:
            continue
        if np.all(np.isfinite(sol)):
            return sol[:n], sol[n:]
    raise SolverError("KKT matrix is numerically singular")


def _boundary_step(v: np.ndarray, dv: np.ndarray, xi: float) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(xi * float(np.min(-v[neg] / dv[neg])), 1.0)


def solve(problem: NonlinearProgram, x0: np.ndarray, options: IPMOptions | None = None,
          lam0: np.ndarray | None = None, mu0: np.ndarray | None = None,
          s0: np.ndarray | None = None) -> IPMResult:
    """Run the interior-point iteration from ``x0``.

    Optional ``lam0``/``mu0``/``s0`` warm-start the multipliers and slacks.
    Raises :class:`SolverError` when the iteration limit is reached; the
    exception carries the last iterate.
    """
    opt = options or IPMOptions()
    x = np.array(x0, dtype=float)
    f, df = problem.objective(x)
    g, Jg, h, Jh = problem.constraints(x)
    neq, niq = len(g), len(h)

    if s0 is not None and mu0 is not None and len(s0) == niq:
        s = np.maximum(np.asarray(s0, float), 1e-10)
        s = np.maximum(s, -h)
        mu = np.maximum(np.asarray(mu0, float), 1e-10)
        gamma = max(float(s @ mu) / max(niq, 1), 1e-8)
    else:
        s = np.full(niq, opt.slack_floor)
        s = np.maximum(s, -h)
        gamma = 1.0
        mu = gamma / s
    lam = np.zeros(neq) if lam0 is None or len(lam0) != neq else np.array(lam0, float)

    history = []
    it = 0
    converged = False
    while True:
        Lx = df + Jg.T @ lam + Jh.T @ mu
        eqv = float(np.abs(g).max(initial=0.0))
        iqv = float(h.max(initial=0.0))
        gradc = float(np.abs(Lx).max(initial=0.0)) / (1.0 + max(np.abs(lam).max(initial=0.0), mu.max(initial=0.0)))
        comp = float(s @ mu) / max(niq, 1)
        history.append(dict(it=it, f=f, eq=eqv, ineq=iqv, grad=gradc, comp=comp))
        log.debug("ipm %3d f=%.8g eq=%.2e iq=%.2e grad=%.2e comp=%.2e", it, f, eqv, iqv, gradc, comp)
        if eqv <= opt.eq_tol and iqv <= opt.ineq_tol and gradc <= opt.grad_tol and comp <= opt.comp_tol:
            converged = True
            break
        if it >= opt.max_iter:
            break
        if not (np.isfinite(f) and np.all(np.isfinite(x))):
            break

        H = problem.hessian(x, lam, mu)
        sinv = 1.0 / s
        M = (H + Jh.T @ sp.diags(mu * sinv) @ Jh).tocsc()
        N = Lx + Jh.T @ (sinv * (gamma + mu * h))
        dx, dlam = _saddle_solve(M, Jg.tocsc(), -N, -g)
        ds = -h - s - Jh @ dx
        dmu = -mu + sinv * (gamma - mu * ds)

        ap = _boundary_step(s, ds, opt.xi)
        ad = _boundary_step(mu, dmu, opt.xi)
        x = x + ap * dx
        s = s + ap * ds
        lam = lam + ad * dlam
        mu = mu + ad * dmu
        it += 1

        f, df = problem.objective(x)
        g, Jg, h, Jh = problem.constraints(x)
        gamma = opt.sigma * float(s @ mu) / max(niq, 1)

    result = IPMResult(x=x, lam=lam, mu=mu, s=s, f=f, iterations=it, converged=converged,
                       eq_violation=eqv, ineq_violation=iqv, grad_norm=gradc, barrier=comp, history=history)
    if not converged:
        raise SolverError(
            f"interior point did not converge in {it} iterations "
            f"(eq {eqv:.2e}, ineq {iqv:.2e}, grad {gradc:.2e}, comp {comp:.2e})", result)
    return result
