"""Scenario configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Optional

from pdtora.qos import QosConstraint


class Protocol(Enum):
    TORA = "tora"
    PDTORA = "pdtora"


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class FlowSpec:
    src: int
    dst: int


@dataclass(frozen=True)
class Flow:
    src: int
    dst: int
    packet_bits: int
    interval_ms: float
    start_ms: float
    stop_ms: float
    qos: QosConstraint

    def __post_init__(self):
        if self.interval_ms <= 0:
            raise ValueError("flow interval must be positive")
        if self.src == self.dst:
            raise ValueError("flow source and destination must differ")


@dataclass(frozen=True)
class ScenarioConfig:
    num_nodes: int = 50
    area_m: tuple[float, float] = (670.0, 670.0)
    range_m: float = 250.0
    bitrate_bps: float = 2_000_000.0
    max_speed_m_s: float = 20.0
    min_speed_m_s: float = 1.0
    pause_s: float = 10.0
    sim_end_ms: float = 100_000.0
    mobility_tick_ms: float = 100.0
    initial_energy_j: float = 20.0
    tx_cost_j_per_bit: float = 10e-6
    rx_cost_j_per_bit: float = 5e-6
    ntt_static_ms: float = 10.0
    ntt_mode: str = "static"
    ntt_alpha: float = 0.5
    min_power_fraction: float = 0.2
    max_delay_ms: float = 250.0
    protocol: Protocol = Protocol.PDTORA
    num_flows: int = 10
    packet_bits: int = 4096
    packet_interval_ms: float = 250.0
    flow_start_max_ms: float = 1000.0
    # 0 keeps each flow running to the end; otherwise each flow slot draws a
    # fresh (src, dst) pair every session_ms
    session_ms: float = 10_000.0
    flows: tuple[FlowSpec, ...] = ()
    positions: tuple[tuple[float, float], ...] = ()
    ctrl_packet_bits: int = 512
    qry_retry_ms: float = 500.0
    route_timeout_ms: float = 1000.0
    seed: int = 0

    @property
    def qos(self) -> QosConstraint:
        return QosConstraint(self.min_power_fraction, self.max_delay_ms)

    @property
    def qos_enabled(self) -> bool:
        return self.protocol is Protocol.PDTORA

    def validate(self) -> "ScenarioConfig":
        _validate(self)
        return self


_POSITIVE = {
    "num_nodes", "range_m", "bitrate_bps", "sim_end_ms", "mobility_tick_ms", "initial_energy_j",
    "packet_bits", "packet_interval_ms", "ctrl_packet_bits", "qry_retry_ms", "route_timeout_ms",
}
_NON_NEGATIVE = {
    "max_speed_m_s", "min_speed_m_s", "pause_s", "tx_cost_j_per_bit", "rx_cost_j_per_bit",
    "ntt_static_ms", "max_delay_ms", "num_flows", "flow_start_max_ms", "session_ms", "seed",
}


def _validate(cfg: ScenarioConfig) -> None:
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, float) and not math.isfinite(v):
            raise ConfigError(f"{f.name} must be finite", f.name)
        if f.name in _POSITIVE and not v > 0:
            raise ConfigError(f"{f.name} must be positive, got {v}", f.name)
        if f.name in _NON_NEGATIVE and v < 0:
            raise ConfigError(f"{f.name} must be non-negative, got {v}", f.name)
    if cfg.area_m[0] <= 0 or cfg.area_m[1] <= 0:
        raise ConfigError("area_m must be positive", "area_m")
    if cfg.max_speed_m_s > 0 and cfg.min_speed_m_s > cfg.max_speed_m_s:
        raise ConfigError("min_speed_m_s exceeds max_speed_m_s", "min_speed_m_s")
    if not 0.0 <= cfg.min_power_fraction <= 1.0:
        raise ConfigError("min_power_fraction must lie in [0, 1]", "min_power_fraction")
    if cfg.ntt_mode not in ("static", "ewma"):
        raise ConfigError(f"ntt_mode must be static or ewma, got {cfg.ntt_mode!r}", "ntt_mode")
    if not 0.0 < cfg.ntt_alpha <= 1.0:
        raise ConfigError("ntt_alpha must lie in (0, 1]", "ntt_alpha")
    if cfg.num_flows > 0 and cfg.num_nodes < 2 and not cfg.flows:
        raise ConfigError("random flows need at least two nodes", "num_flows")
    for fl in cfg.flows:
        if not (0 <= fl.src < cfg.num_nodes and 0 <= fl.dst < cfg.num_nodes) or fl.src == fl.dst:
            raise ConfigError(f"bad flow {fl.src}>{fl.dst}", "flows")
    if cfg.positions:
        if len(cfg.positions) != cfg.num_nodes:
            raise ConfigError(f"positions lists {len(cfg.positions)} nodes, num_nodes is {cfg.num_nodes}", "positions")
        w, h = cfg.area_m
        for x, y in cfg.positions:
            if not (0 <= x <= w and 0 <= y <= h):
                raise ConfigError(f"position ({x:g}, {y:g}) outside the area", "positions")


# file format


def _parse_pair(text: str, sep: str) -> tuple[str, str]:
    a, b = text.split(sep)
    return a.strip(), b.strip()


def _parse_area(text: str) -> tuple[float, float]:
    w, h = _parse_pair(text.lower(), "x")
    return (float(w), float(h))


def _parse_flows(text: str) -> tuple[FlowSpec, ...]:
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        a, b = _parse_pair(item, ">")
        out.append(FlowSpec(int(a), int(b)))
    return tuple(out)


def _parse_positions(text: str) -> tuple[tuple[float, float], ...]:
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        x, y = _parse_pair(item, ",")
        out.append((float(x), float(y)))
    return tuple(out)


_PARSERS = {
    "area_m": _parse_area,
    "flows": _parse_flows,
    "positions": _parse_positions,
    "protocol": lambda s: Protocol(s.lower()),
    "ntt_mode": str,
}


def _fmt_float(v: float) -> str:
    return repr(float(v))


def _formatters():
    return {
        "area_m": lambda v: f"{_fmt_float(v[0])} x {_fmt_float(v[1])}",
        "flows": lambda v: "; ".join(f"{f.src}>{f.dst}" for f in v),
        "positions": lambda v: "; ".join(f"{_fmt_float(x)},{_fmt_float(y)}" for x, y in v),
        "protocol": lambda v: v.value,
    }


def parse_scenario(text: str, **overrides) -> ScenarioConfig:
    """Parse a scenario file. Missing keys keep their defaults."""
    types = {f.name: f.type for f in fields(ScenarioConfig)}
    defaults = ScenarioConfig()
    values: dict = {}
    line_of: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", None, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown key {key!r}", key, lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", key, lineno)
        line_of[key] = lineno
        try:
            if key in _PARSERS:
                values[key] = _PARSERS[key](value)
            elif isinstance(getattr(defaults, key), int):
                values[key] = int(value)
            else:
                values[key] = float(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})", key, lineno) from None
    values.update(overrides)
    cfg = replace(defaults, **values)
    try:
        _validate(cfg)
    except ConfigError as exc:
        raise ConfigError(str(exc), exc.key, line_of.get(exc.key)) from None
    return cfg


def load_scenario(path, **overrides) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), **overrides)


def serialize_scenario(cfg: ScenarioConfig) -> str:
    fmt = _formatters()
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in fmt:
            lines.append(f"{f.name} = {fmt[f.name](v)}")
        elif isinstance(v, float):
            lines.append(f"{f.name} = {_fmt_float(v)}")
        else:
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
