"""Static network model: MATPOWER-style case parsing and admittance assembly."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

DATA_DIR = Path(__file__).parent / "data"


class CaseParseError(ValueError):
    """Raised when a case file is malformed."""


class SingularBranchError(ValueError):
    pass


class BusKind(str, Enum):
    SLACK = "slack"
    SOURCE = "source"
    LOAD = "load"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    pd: float  # MW, case-file load
    qd: float  # MVAr
    gs: float  # MW consumed at V = 1 p.u.
    bs: float  # MVAr injected at V = 1 p.u.
    v_min: float
    v_max: float
    base_kv: float
    vm: float = 1.0
    va: float = 0.0
    area: int = 1
    zone: int = 1


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float
    tap: float = 1.0
    shift_deg: float = 0.0
    p_line_max: float = np.inf  # MW; rateA of 0 means unlimited

    @property
    def shift(self) -> float:
        return float(np.deg2rad(self.shift_deg))


@dataclass(frozen=True)
class Generator:
    bus: int
    pg: float
    qg: float
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    v_set: float
    freq_gain: float | None = None  # K_i; None selects the p_max-share default
    mbase: float = 100.0


@dataclass(frozen=True)
class CostCurve:
    c2: float
    c1: float
    c0: float

    def __call__(self, p_mw):
        return self.c2 * p_mw * p_mw + self.c1 * p_mw + self.c0


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    cost_curves: tuple[CostCurve, ...]
    name: str = "case"

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def slack(self) -> int:
        """Positional index of the slack bus."""
        return next(i for i, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    def source_buses(self) -> list[int]:
        """Positional indices of buses with a controllable source (slack included)."""
        return [i for i, b in enumerate(self.buses) if b.kind is not BusKind.LOAD]

    def gen_bus_index(self) -> np.ndarray:
        idx = self.bus_index
        return np.array([idx[g.bus] for g in self.generators], dtype=int)

    def freq_gains(self) -> np.ndarray:
        """K_i per generator; missing entries default to p_max shares of the fleet."""
        pmax = np.array([g.p_max for g in self.generators], dtype=float)
        total = pmax.sum()
        share = pmax / total if total > 0 else np.zeros_like(pmax)
        given = [g.freq_gain for g in self.generators]
        return np.array([s if k is None else k for k, s in zip(given, share)], dtype=float)


@dataclass(frozen=True)
class AdmittanceMatrix:
    """Bus admittance Y plus the branch-end matrices used for line flows."""

    Y: sp.csr_matrix
    Yf: sp.csr_matrix
    Yt: sp.csr_matrix
    f_idx: np.ndarray
    t_idx: np.ndarray
    bus_index: dict[int, int] = field(repr=False)

    @property
    def n(self) -> int:
        return self.Y.shape[0]


# ---------------------------------------------------------------- parsing

_TABLE_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")

_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}


_FUNC_RE = re.compile(r"^\s*function\s+\w+\s*=\s*(\w+)", re.M)


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _read_table(name: str, body: str, first_line: int) -> list[tuple[int, list[float]]]:
    rows = []
    lineno = first_line
    for raw in body.split("\n"):
        for chunk in raw.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                vals = [float(v) for v in chunk.replace(",", " ").split()]
            except ValueError as exc:
                raise CaseParseError(f"{name} table, line {lineno}: {exc}") from None
            rows.append((lineno, vals))
        lineno += 1
    return rows


def parse_case(text: str, name: str | None = None) -> NetworkCase:
    """Parse MATPOWER case text into a validated :class:`NetworkCase`.

    Out-of-service generators and branches (status 0) are dropped. Trailing
    columns beyond the ones used here are ignored. Without ``name`` the
    ``function mpc = <name>`` header is used, else ``"case"``.
    """
    clean = _strip_comments(text)
    if name is None:
        head = _FUNC_RE.search(clean)
        name = head.group(1) if head else "case"
    m = _SCALAR_RE.search(clean)
    if m is None:
        raise CaseParseError("baseMVA absent")
    base_mva = float(m.group(1))
    if not base_mva > 0:
        raise CaseParseError(f"baseMVA must be positive, got {base_mva}")

    tables: dict[str, list[tuple[int, list[float]]]] = {}
    for tm in _TABLE_RE.finditer(clean):
        first_line = clean.count("\n", 0, tm.start(2)) + 1
        tables[tm.group(1)] = _read_table(tm.group(1), tm.group(2), first_line)

    for tab in ("bus", "gen", "branch", "gencost"):
        if tab not in tables:
            raise CaseParseError(f"{tab} table absent")
    for tab, ncol in _MIN_COLS.items():
        for lineno, row in tables[tab]:
            if len(row) < ncol:
                raise CaseParseError(
                    f"{tab} table, line {lineno}: expected at least {ncol} columns, got {len(row)}")

    gen_rows = [(ln, r) for ln, r in tables["gen"] if r[7] > 0]
    gen_on = [r[7] > 0 for _, r in tables["gen"]]
    if len(tables["gencost"]) < len(tables["gen"]):
        raise CaseParseError("gencost table: fewer rows than gen table")
    cost_rows = [r for (ln, r), on in zip(tables["gencost"], gen_on) if on]

    bus_ids = [int(r[0]) for _, r in tables["bus"]]
    if len(set(bus_ids)) != len(bus_ids):
        raise CaseParseError("bus table: duplicate bus ids")
    known = set(bus_ids)
    for ln, r in gen_rows:
        if int(r[0]) not in known:
            raise CaseParseError(f"gen table, line {ln}: dangling bus reference {int(r[0])}")
    for ln, r in tables["branch"]:
        for b in (int(r[0]), int(r[1])):
            if b not in known:
                raise CaseParseError(f"branch table, line {ln}: dangling bus reference {b}")

    slack_lines = [ln for ln, r in tables["bus"] if int(r[1]) == 3]
    if len(slack_lines) != 1:
        raise CaseParseError(
            f"bus table, line(s) {slack_lines}: expected exactly one slack bus, found {len(slack_lines)}")

    gen_buses = {int(r[0]) for _, r in gen_rows}
    buses = []
    for _, r in tables["bus"]:
        bid, btype = int(r[0]), int(r[1])
        if btype == 3:
            kind = BusKind.SLACK
        elif bid in gen_buses:
            kind = BusKind.SOURCE
        else:
            kind = BusKind.LOAD
        buses.append(Bus(id=bid, kind=kind, pd=r[2], qd=r[3], gs=r[4], bs=r[5],
                         area=int(r[6]), vm=r[7], va=r[8], base_kv=r[9], zone=int(r[10]),
                         v_max=r[11], v_min=r[12]))

    branches = []
    for _, r in tables["branch"]:
        if r[10] <= 0:
            continue
        tap = r[8] if r[8] != 0 else 1.0
        branches.append(Branch(from_bus=int(r[0]), to_bus=int(r[1]), r=r[2], x=r[3], b=r[4],
                               tap=tap, shift_deg=r[9],
                               p_line_max=r[5] if r[5] > 0 else np.inf))

    gains: dict[int, float] = {}
    for ln, r in tables.get("freqgain", []):
        if len(r) < 2:
            raise CaseParseError(f"freqgain table, line {ln}: expected 2 columns")
        gains[int(r[0])] = r[1]

    generators = []
    for k, (_, r) in enumerate(gen_rows, start=1):
        generators.append(Generator(bus=int(r[0]), pg=r[1], qg=r[2], q_max=r[3], q_min=r[4],
                                    v_set=r[5], mbase=r[6], p_max=r[8], p_min=r[9],
                                    freq_gain=gains.get(k)))

    curves = []
    for r in cost_rows:
        model, ncoef = int(r[0]), int(r[3])
        if model != 2:
            raise CaseParseError(f"gencost table: only polynomial model 2 supported, got {model}")
        coef = r[4:4 + ncoef]
        if len(coef) != ncoef or ncoef > 3:
            raise CaseParseError(f"gencost table: expected up to 3 coefficients, got {ncoef}")
        coef = [0.0] * (3 - ncoef) + list(coef)
        curves.append(CostCurve(c2=coef[0], c1=coef[1], c0=coef[2]))

    case = NetworkCase(base_mva=base_mva, buses=tuple(buses), branches=tuple(branches),
                       generators=tuple(generators), cost_curves=tuple(curves), name=name)
    return case


def load_case(path: str | Path) -> NetworkCase:
    """Read a case file; the header name wins over the file stem."""
    path = Path(path)
    text = path.read_text()
    return parse_case(text, None if _FUNC_RE.search(_strip_comments(text)) else path.stem)


def bundled_case(name: str) -> NetworkCase:
    """Load one of the shipped IEEE cases (``case14`` or ``case118``)."""
    return load_case(DATA_DIR / f"{name}.m")


def _num(v: float) -> str:
    if np.isinf(v):
        return "0"
    return repr(float(v))


def format_case(case: NetworkCase) -> str:
    """Serialize to MATPOWER text. ``parse_case(format_case(c)) == c``."""
    type_code = {BusKind.SLACK: 3, BusKind.SOURCE: 2, BusKind.LOAD: 1}
    out = [f"function mpc = {case.name}", "mpc.version = '2';",
           f"mpc.baseMVA = {_num(case.base_mva)};", "", "mpc.bus = ["]
    for b in case.buses:
        out.append("\t" + "\t".join([str(b.id), str(type_code[b.kind])] + [_num(v) for v in (
            b.pd, b.qd, b.gs, b.bs)] + [str(b.area)] + [_num(v) for v in (b.vm, b.va, b.base_kv)]
            + [str(b.zone), _num(b.v_max), _num(b.v_min)]) + ";")
    out += ["];", "", "mpc.gen = ["]
    for g in case.generators:
        out.append("\t" + "\t".join([str(g.bus)] + [_num(v) for v in (
            g.pg, g.qg, g.q_max, g.q_min, g.v_set, g.mbase)] + ["1", _num(g.p_max), _num(g.p_min)]) + ";")
    out += ["];", "", "mpc.branch = ["]
    for br in case.branches:
        out.append("\t" + "\t".join([str(br.from_bus), str(br.to_bus)] + [_num(v) for v in (
            br.r, br.x, br.b, br.p_line_max, 0.0, 0.0, br.tap, br.shift_deg)] + ["1"]) + ";")
    out += ["];", "", "mpc.gencost = ["]
    for c in case.cost_curves:
        out.append("\t2\t0\t0\t3\t" + "\t".join(_num(v) for v in (c.c2, c.c1, c.c0)) + ";")
    out += ["];", ""]
    if any(g.freq_gain is not None for g in case.generators):
        out.append("mpc.freqgain = [")
        for k, g in enumerate(case.generators, start=1):
            if g.freq_gain is not None:
                out.append(f"\t{k}\t{_num(g.freq_gain)};")
        out += ["];", ""]
    return "\n".join(out)


def validate(case: NetworkCase) -> list[str]:
    """Return human-readable findings for every violated model invariant."""
    findings = []
    if not case.base_mva > 0:
        findings.append(f"base_mva must be positive (got {case.base_mva})")
    n_slack = sum(b.kind is BusKind.SLACK for b in case.buses)
    if n_slack == 0:
        findings.append("no slack bus")
    elif n_slack > 1:
        findings.append(f"multiple slack buses ({n_slack})")
    ids = {b.id: b for b in case.buses}
    for b in case.buses:
        if not 0 < b.v_min <= b.v_max:
            findings.append(f"bus {b.id}: voltage bounds [{b.v_min}, {b.v_max}] invalid")
    for k, br in enumerate(case.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in ids:
                findings.append(f"branch {k}: references nonexistent bus {end}")
        if br.r < 0:
            findings.append(f"branch {k}: negative resistance")
        if br.x == 0 and br.r <= 0:
            findings.append(f"branch {k}: zero impedance")
        if br.tap <= 0:
            findings.append(f"branch {k}: non-positive tap")
        if not br.p_line_max > 0:
            findings.append(f"branch {k}: non-positive flow limit")
    for k, g in enumerate(case.generators):
        if g.bus not in ids:
            findings.append(f"generator {k}: references nonexistent bus {g.bus}")
            continue
        if g.p_min > g.p_max:
            findings.append(f"generator {k}: p_min > p_max")
        if g.q_min > g.q_max:
            findings.append(f"generator {k}: q_min > q_max")
        bus = ids[g.bus]
        if not bus.v_min <= g.v_set <= bus.v_max:
            findings.append(f"generator {k}: v_set {g.v_set} outside bus {g.bus} bounds")
    if len(case.cost_curves) != len(case.generators):
        findings.append("cost curve count differs from generator count")
    for k, c in enumerate(case.cost_curves):
        if c.c2 < 0:
            findings.append(f"cost curve {k}: negative quadratic coefficient")
    return findings


# ---------------------------------------------------------------- admittance

def build_admittance(case: NetworkCase) -> AdmittanceMatrix:
    """Assemble Y with the standard pi model (tap on the from side)."""
    idx = case.bus_index
    n, nl = case.n_bus, len(case.branches)
    f = np.array([idx[br.from_bus] for br in case.branches], dtype=int)
    t = np.array([idx[br.to_bus] for br in case.branches], dtype=int)
    r = np.array([br.r for br in case.branches], dtype=float)
    x = np.array([br.x for br in case.branches], dtype=float)
    if np.any((r == 0) & (x == 0)):
        k = int(np.flatnonzero((r == 0) & (x == 0))[0])
        raise SingularBranchError(f"branch {k} ({case.branches[k].from_bus}-{case.branches[k].to_bus}) has r = x = 0")
    ys = 1.0 / (r + 1j * x)
    bc = np.array([br.b for br in case.branches], dtype=float)
    tap = np.array([br.tap for br in case.branches], dtype=float)
    tap = tap * np.exp(1j * np.array([br.shift for br in case.branches], dtype=float))

    ytt = ys + 0.5j * bc
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap

    ysh = np.array([b.gs + 1j * b.bs for b in case.buses]) / case.base_mva

    rows = np.arange(nl)
    Cf = sp.csr_matrix((np.ones(nl), (rows, f)), shape=(nl, n))
    Ct = sp.csr_matrix((np.ones(nl), (rows, t)), shape=(nl, n))
    Yf = sp.csr_matrix((np.r_[yff, yft], (np.r_[rows, rows], np.r_[f, t])), shape=(nl, n))
    Yt = sp.csr_matrix((np.r_[ytf, ytt], (np.r_[rows, rows], np.r_[f, t])), shape=(nl, n))
    Y = (Cf.T @ Yf + Ct.T @ Yt + sp.diags(ysh)).tocsr()
    return AdmittanceMatrix(Y=Y, Yf=Yf, Yt=Yt, f_idx=f, t_idx=t, bus_index=idx)
