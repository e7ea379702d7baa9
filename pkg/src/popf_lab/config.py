"""Flat ``key = value`` configuration files for runs and scenarios."""

from __future__ import annotations

import configparser
import dataclasses
import types
import typing
from dataclasses import dataclass
from pathlib import Path

from . import ipm
from .intervals import IntervalConfig
from .popf import PopfConfig
from .scenario import ScenarioError, ScenarioSpec

MODES = ("popf", "topf", "both")
POSITIONS = ("start", "median", "end")

# Day-ahead: 24 one-hour intervals. Real-time: a 1.5 h window in 15 min steps.
PRESETS = {
    "none": {},
    "dayahead": {"horizon": 24.0, "interval": 1.0, "build_intervals": False},
    "realtime": {"start": 9.0, "horizon": 1.5, "interval": 0.25, "build_intervals": False},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    case: str = ""
    forecast: str = ""
    preset: str = "none"
    start: float | None = None  # h; None -> forecast start
    horizon: float | None = None  # h; None -> to forecast end
    interval: float | None = None  # h; None -> forecast step
    mode: str = "both"
    build_intervals: bool = True
    mu: float | None = None
    mu_rel: float = 0.05
    max_depth: int = 10
    min_width: float = 1.0 / 64
    difference_norm: bool = False
    max_iter: int = 200
    eq_tol: float = 1e-8
    ineq_tol: float = 1e-8
    grad_tol: float = 1e-6
    comp_tol: float = 1e-8
    topf_position: str = "start"
    samples_per_interval: int = 101
    verify_tol: float = 1e-6
    k_f: float = 1.0
    freq_sign_flip: bool = False
    warm_start: bool = True
    slack_limits: bool = False
    interior_samples: int = 11
    limit_backoff: float = 0.0
    seed: int = 0
    output: str = "out"
    verify: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.topf_position not in POSITIONS:
            raise ConfigError(f"topf_position must be one of {POSITIONS}")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        for name in ("eq_tol", "ineq_tol", "grad_tol", "comp_tol", "verify_tol", "mu_rel", "min_width", "k_f"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("horizon", "interval", "mu"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if self.samples_per_interval < 2:
            raise ConfigError("samples_per_interval must be at least 2")
        if self.max_iter < 1 or self.max_depth < 0:
            raise ConfigError("max_iter must be >= 1 and max_depth >= 0")
        if self.limit_backoff < 0:
            raise ConfigError("limit_backoff must be non-negative")

    def popf_config(self) -> PopfConfig:
        return PopfConfig(
            ipm=ipm.IPMOptions(max_iter=self.max_iter, eq_tol=self.eq_tol, ineq_tol=self.ineq_tol,
                               grad_tol=self.grad_tol, comp_tol=self.comp_tol),
            intervals=IntervalConfig(mu=self.mu, mu_rel=self.mu_rel, max_depth=self.max_depth,
                                     min_width=self.min_width, difference_norm=self.difference_norm),
            build_intervals=self.build_intervals, k_f=self.k_f, freq_sign_flip=self.freq_sign_flip,
            warm_start=self.warm_start, topf_position=self.topf_position, slack_limits=self.slack_limits,
            limit_backoff=self.limit_backoff, interior_samples=self.interior_samples)

    def echo(self) -> dict:
        return dataclasses.asdict(self)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str, hint):
    raw = raw.strip()
    optional = False
    if typing.get_origin(hint) in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        optional = len(args) < len(typing.get_args(hint))
        hint = args[0]
    if optional and raw.lower() in ("", "none", "auto"):
        return None
    try:
        if hint is bool:
            if raw.lower() in _TRUE:
                return True
            if raw.lower() in _FALSE:
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot read {raw!r} as {hint.__name__}") from None
    return raw


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[_]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return dict(parser["_"])


def _build(cls, pairs: dict[str, str], defaults: dict | None = None, source: str = "<config>"):
    hints = typing.get_type_hints(cls)
    unknown = sorted(set(pairs) - set(hints))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {unknown}")
    values = dict(defaults or {})
    for k, v in pairs.items():
        values[k] = _coerce(k, v, hints[k])
    return cls(**values)


def _resolve(path: str, base: Path) -> str:
    if not path:
        return path
    p = Path(path)
    if p.is_absolute():
        return str(p)
    cand = base / p
    # bare names such as "case118" refer to bundled cases
    if not cand.exists() and not p.suffix and len(p.parts) == 1:
        return path
    return str(cand.resolve())


def parse_run_config(text: str, base_dir: str | Path = ".", source: str = "<config>") -> RunConfig:
    pairs = parse_pairs(text, source)
    preset = pairs.get("preset", "none").strip()
    if preset not in PRESETS:
        raise ConfigError(f"{source}: unknown preset {preset!r}")
    cfg = _build(RunConfig, pairs, PRESETS[preset], source)
    if not cfg.case:
        raise ConfigError(f"{source}: 'case' is required")
    if not cfg.forecast:
        raise ConfigError(f"{source}: 'forecast' is required")
    base = Path(base_dir)
    return dataclasses.replace(cfg, case=_resolve(cfg.case, base), forecast=_resolve(cfg.forecast, base),
                               output=str((base / cfg.output).resolve()))


def load_run_config(path: str | Path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_run_config(text, p.parent, str(p))


def load_scenario_spec(path: str | Path) -> ScenarioSpec:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario spec {p}: {exc}") from exc
    pairs = parse_pairs(text, str(p))
    try:
        spec = _build(ScenarioSpec, pairs, source=str(p))
    except ScenarioError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    return dataclasses.replace(spec, base_case=_resolve(spec.base_case, p.parent))
