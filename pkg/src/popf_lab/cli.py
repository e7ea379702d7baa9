"""Command-line entry point: ``popf-lab generate | run | verify``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import acpf, popf, verify
from .config import ConfigError, RunConfig, load_run_config, load_scenario_spec
from .forecast import ForecastError, ForecastSeries, load_forecast, resample, write_csv
from .intervals import IntervalBuildError
from .netcase import CaseParseError, NetworkCase, SingularBranchError, bundled_case, format_case, load_case
from .report import (SCHEDULE_FILE, ReportWriteError, dumps, emit_report, report_to_dict,
                     schedule_from_dict, schedule_to_dict, single_table)
from .scenario import ScenarioError, generate_scenario

log = logging.getLogger("popf_lab")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_BUILD = 3
EXIT_SOLVE = 4
EXIT_VERIFY = 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- inputs

def read_case(ref: str) -> NetworkCase:
    p = Path(ref)
    try:
        if p.exists():
            return load_case(p)
        if not p.suffix and len(p.parts) == 1:
            return bundled_case(ref)
        raise CliError(EXIT_PARSE, f"case file not found: {ref}")
    except CaseParseError as exc:
        raise CliError(EXIT_PARSE, f"{ref}: {exc}") from exc
    except FileNotFoundError as exc:
        raise CliError(EXIT_PARSE, f"case not found: {ref}") from exc


def prepare_forecast(cfg: RunConfig) -> ForecastSeries:
    """Load the forecast and cut it to the configured window and step."""
    p = Path(cfg.forecast)
    if not p.exists():
        raise CliError(EXIT_PARSE, f"forecast file not found: {cfg.forecast}")
    try:
        fc = load_forecast(p)
        t0, tn = fc.horizon
        start = t0 if cfg.start is None else cfg.start
        end = tn if cfg.horizon is None else start + cfg.horizon
        step = fc.dt if cfg.interval is None else cfg.interval
        if start < t0 - 1e-9 or end > tn + 1e-9:
            raise ForecastError(f"window [{start:g}, {end:g}] h exceeds the forecast horizon [{t0:g}, {tn:g}] h")
        if abs(step - fc.dt) < 1e-12 and abs((start - t0) / step - round((start - t0) / step)) < 1e-9:
            return fc.window(start, end)
        return resample(fc, start, end, step)
    except (ForecastError, ValueError, KeyError) as exc:
        raise CliError(EXIT_PARSE, f"{cfg.forecast}: {exc}") from exc


def compile_case(case: NetworkCase) -> acpf.PowerFlowModel:
    try:
        return acpf.compile_model(case)
    except (SingularBranchError, ValueError) as exc:
        raise CliError(EXIT_BUILD, f"cannot build network model: {exc}") from exc


def case_summary(case: NetworkCase) -> dict:
    return {"name": case.name, "base_mva": case.base_mva, "buses": case.n_bus, "branches": len(case.branches),
            "generators": len(case.generators), "bus_ids": [b.id for b in case.buses]}


# ---------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    try:
        spec = load_scenario_spec(args.spec)
    except ConfigError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    try:
        case, raw = generate_scenario(spec)
    except (ScenarioError, CaseParseError, FileNotFoundError) as exc:
        raise CliError(EXIT_BUILD, f"scenario generation failed: {exc}") from exc
    except (acpf.PowerFlowDivergence, acpf.SingularJacobian) as exc:
        raise CliError(EXIT_SOLVE, f"scenario line sizing failed: {exc}") from exc
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "case.m").write_text(format_case(case))
        write_csv(out / "forecast.csv", raw)
    except OSError as exc:
        raise CliError(EXIT_VERIFY, f"cannot write to {args.out}: {exc}") from exc
    print(f"wrote {out / 'case.m'} and {out / 'forecast.csv'} "
          f"({case.n_bus} buses, {len(raw.times) - 1} intervals)")
    return EXIT_OK


def execute(cfg: RunConfig) -> tuple[dict, dict, dict, verify.ComparisonSummary | None]:
    """Run the configured schedules and audits; returns (document, schedules, reports, summary)."""
    case = read_case(cfg.case)
    model = compile_case(case)
    fc = prepare_forecast(cfg)
    try:
        fc = fc.aligned(model)
    except ForecastError as exc:
        raise CliError(EXIT_PARSE, f"{cfg.forecast}: {exc}") from exc
    pcfg = cfg.popf_config()
    try:
        ivs = popf.plan_intervals(model, fc, pcfg)
    except IntervalBuildError as exc:
        raise CliError(EXIT_BUILD, f"interval construction failed: {exc}") from exc
    modes = ("popf", "topf") if cfg.mode == "both" else (cfg.mode,)
    schedules = {}
    for mode in modes:
        t = time.perf_counter()
        try:
            run = popf.run_period if mode == "popf" else popf.run_topf
            schedules[mode] = run(model, fc, pcfg, ivs)
        except (popf.IntervalSolveError, popf.AssemblyError) as exc:
            diag = "; ".join(getattr(exc, "diagnosis", []) or [])
            raise CliError(EXIT_SOLVE, f"{mode} solve failed: {exc}" + (f" [{diag}]" if diag else "")) from exc
        log.info("%s: %d intervals, %d iterations, %.1f s", mode, len(ivs), schedules[mode].iterations,
                 time.perf_counter() - t)
    reports = {}
    if cfg.verify:
        for mode, ps in schedules.items():
            t = time.perf_counter()
            try:
                reports[mode] = verify.dense_check(ps, model, fc, cfg.samples_per_interval, cfg.verify_tol)
            except Exception as exc:  # noqa: BLE001 - any audit failure maps to one exit class
                raise CliError(EXIT_VERIFY, f"{mode} verification failed: {exc}") from exc
            log.info("%s dense check: %.1f s", mode, time.perf_counter() - t)
    summary = None
    if "popf" in reports and "topf" in reports:
        summary = verify.compare(reports["popf"], reports["topf"], schedules["popf"].costs, schedules["topf"].costs)
    doc = {
        "config": cfg.echo(),
        "case": case_summary(case),
        "window": {"t_start": float(fc.times[0]), "t_end": float(fc.times[-1]), "step": fc.dt},
        "intervals": [{"t_start": iv.t_start, "t_end": iv.t_end, "parent": iv.parent, "depth": iv.depth,
                       "warned": iv.warned} for iv in ivs],
        "schedules": {m: schedule_to_dict(ps) for m, ps in schedules.items()},
        "reports": {m: report_to_dict(r) for m, r in reports.items()},
        "comparison": None if summary is None else {
            "popf_period_cost": summary.popf_total_cost, "topf_period_cost": summary.topf_total_cost,
            "relative_cost_gap": summary.cost_gap,
            "popf_power_cvn": summary.popf_power_cvn, "topf_power_cvn": summary.topf_power_cvn,
            "popf_voltage_cvn": summary.popf_voltage_cvn, "topf_voltage_cvn": summary.topf_voltage_cvn},
    }
    return doc, schedules, reports, summary


def cmd_run(args) -> int:
    try:
        cfg = load_run_config(args.config)
    except ConfigError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc
    if args.out:
        cfg = type(cfg)(**{**cfg.echo(), "output": str(Path(args.out).resolve())})
    doc, schedules, reports, summary = execute(cfg)
    try:
        paths = emit_report(cfg.output, doc, schedules, reports, summary)
    except ReportWriteError as exc:
        raise CliError(EXIT_VERIFY, str(exc)) from exc
    if summary is not None:
        print(summary.table())
    elif reports:
        m = next(iter(reports))
        print(single_table(reports[m], schedules[m].costs))
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_verify(args) -> int:
    path = Path(args.schedule)
    try:
        doc = json.loads(path.read_text())
        cfg = RunConfig(**doc["config"])
        schedules = {m: schedule_from_dict(d) for m, d in doc["schedules"].items()}
    except (OSError, ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CliError(EXIT_PARSE, f"cannot read schedule document {path}: {exc}") from exc
    case = read_case(cfg.case)
    model = compile_case(case)
    try:
        fc = prepare_forecast(cfg).aligned(model)
    except ForecastError as exc:
        raise CliError(EXIT_PARSE, f"{cfg.forecast}: {exc}") from exc
    samples = args.samples or cfg.samples_per_interval
    reports = {}
    for mode, ps in schedules.items():
        try:
            reports[mode] = verify.dense_check(ps, model, fc, samples, cfg.verify_tol)
        except Exception as exc:  # noqa: BLE001
            raise CliError(EXIT_VERIFY, f"{mode} verification failed: {exc}") from exc
    summary = None
    if "popf" in reports and "topf" in reports:
        summary = verify.compare(reports["popf"], reports["topf"], schedules["popf"].costs, schedules["topf"].costs)
    out = Path(args.out) if args.out else path.parent
    body = {"schedule": str(path.resolve()), "samples": samples,
            "reports": {m: report_to_dict(r) for m, r in reports.items()}}
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.json").write_text(dumps(body))
        table = summary.table() if summary else single_table(*next((r, schedules[m].costs)
                                                                     for m, r in reports.items()))
        (out / "verify_table.txt").write_text(table + "\n")
    except OSError as exc:
        raise CliError(EXIT_VERIFY, f"cannot write verification output to {out}: {exc}") from exc
    print(table)
    return EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="popf-lab", description="Period optimal power flow scheduling and audits.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", help="write a synthetic high-renewable scenario")
    g.add_argument("--spec", required=True, help="scenario spec file (key = value)")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)
    r = sub.add_parser("run", help="solve POPF and/or TOPF schedules and audit them")
    r.add_argument("--config", required=True, help="run config file (key = value)")
    r.add_argument("--out", help="override the configured output directory")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="re-audit a saved schedule document")
    v.add_argument("--schedule", required=True, help=f"{SCHEDULE_FILE} written by 'run'")
    v.add_argument("--samples", type=int, default=None, help="samples per interval")
    v.add_argument("--out", help="output directory (default: next to the schedule)")
    v.set_defaults(func=cmd_verify)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "samples", None) is not None and args.samples < 2:
        print("error: --samples must be at least 2", file=sys.stderr)
        return EXIT_PARSE
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
