"""Plain-text scenario files.

    [config]
    max_nodes = 16
    tile_duration = 100        # milliseconds for every *_duration key
    seed = 7
    duration = 60000           # simulated milliseconds
    [nodes]
    0
    1
    [links]
    0 1 -60 0.0                # u v rssi per
    [events]
    30000 node_down 1          # t_ms kind args...
    [streams]
    1 0 1 10 3 1               # src dst port period redundancy spatial [direction]
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

from ..core import ConfigError, NetworkConfig
from ..scheduler import StreamParams
from ..simulator import LinkSpec, Scenario, ScenarioEvent, StreamRequest

SECTIONS = ("config", "nodes", "links", "events", "streams")
DURATION_KEYS = ("tile_duration", "data_slot_duration", "downlink_control_duration", "uplink_control_duration")
SCENARIO_KEYS = ("seed", "duration", "log_data")


class ScenarioParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None) -> None:
        where = f"{path or '<scenario>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ms_to_us(text: str) -> int:
    us = float(text) * 1000
    if us != int(us):
        raise ValueError(f"{text} ms is not a whole number of microseconds")
    return int(us)


def _config_value(field: dataclasses.Field, text: str):
    if field.name in DURATION_KEYS:
        return _ms_to_us(text)
    if field.name == "control_superframe":
        return text.strip()
    if field.type in ("int", int):
        return int(text)
    if field.type in ("float", float):
        return float(text)
    return text.strip()


def _stream(tokens: list[str]) -> StreamRequest:
    if len(tokens) not in (6, 7):
        raise ValueError("expected: src dst port period redundancy spatial [direction]")
    src, dst, port, period, redundancy = (int(t) for t in tokens[:5])
    direction = tokens[6] if len(tokens) == 7 else "forward"
    return StreamRequest(src, dst, port, StreamParams(period, direction, redundancy, _bool(tokens[5])))


def _event(tokens: list[str]) -> ScenarioEvent:
    if len(tokens) < 2:
        raise ValueError("expected: t_ms kind args...")
    t, kind, rest = float(tokens[0]), tokens[1], tokens[2:]
    if kind in ("node_up", "node_down"):
        args: tuple = (int(rest[0]),) if len(rest) == 1 else None
    elif kind == "link_set":
        args = (int(rest[0]), int(rest[1]), int(rest[2]), float(rest[3])) if len(rest) == 4 else None
    elif kind in ("link_down", "close_stream"):
        n = 2 if kind == "link_down" else 3
        args = tuple(int(x) for x in rest) if len(rest) == n else None
    elif kind == "open_stream":
        args = (_stream(rest),)
    else:
        raise ValueError(f"unknown event kind {kind!r}")
    if args is None:
        raise ValueError(f"wrong number of arguments for {kind}")
    return ScenarioEvent(t, kind, args)


def parse_scenario(text: str, path: str | None = None) -> Scenario:
    fields = {f.name: f for f in dataclasses.fields(NetworkConfig) if f.init}
    config: dict = {}
    extra: dict = {}
    nodes: list[int] = []
    links: list[LinkSpec] = []
    events: list[ScenarioEvent] = []
    streams: list[StreamRequest] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                raise ScenarioParseError(f"unknown section [{section}]", lineno, path)
            continue
        try:
            if section is None:
                raise ValueError("content before the first [section]")
            if section == "config":
                key, sep, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if not sep:
                    raise ValueError("expected key = value")
                if key in fields:
                    config[key] = _config_value(fields[key], value)
                elif key == "seed":
                    extra["seed"] = int(value)
                elif key == "duration":
                    extra["duration_ms"] = float(value)
                elif key == "log_data":
                    extra["log_data"] = _bool(value)
                else:
                    raise ValueError(f"unknown config key {key!r}")
            else:
                tokens = line.split()
                if section == "nodes":
                    nodes.extend(int(t) for t in tokens)
                elif section == "links":
                    if len(tokens) not in (3, 4):
                        raise ValueError("expected: u v rssi [per]")
                    per = float(tokens[3]) if len(tokens) == 4 else 0.0
                    links.append(LinkSpec(int(tokens[0]), int(tokens[1]), int(tokens[2]), per))
                elif section == "events":
                    events.append(_event(tokens))
                else:
                    streams.append(_stream(tokens))
        except (ValueError, IndexError) as exc:
            raise ScenarioParseError(str(exc), lineno, path) from None
    try:
        cfg = NetworkConfig(**config)
    except ConfigError as exc:
        raise ScenarioParseError(f"invalid configuration: {exc}", None, path) from None
    return Scenario(cfg, tuple(nodes) or (0,), tuple(links), tuple(events), tuple(streams), **extra)


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    return parse_scenario(p.read_text(), str(p))


def _ms(us: int) -> str:
    return _num(us / 1000)


def _num(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def _stream_tokens(req: StreamRequest) -> str:
    p = req.params
    return (f"{req.src} {req.dst} {req.port} {p.period.multiplier} {p.redundancy} {int(p.spatial)} "
            f"{p.direction.value}")


def format_scenario(sc: Scenario) -> str:
    """Inverse of :func:`parse_scenario`."""
    default = NetworkConfig()
    out = ["[config]"]
    for f in dataclasses.fields(NetworkConfig):
        if not f.init:
            continue
        value = getattr(sc.config, f.name)
        if value == getattr(default, f.name):
            continue
        if f.name in DURATION_KEYS:
            text = _ms(value)
        elif f.name == "control_superframe":
            text = "".join(k.value for k in value)
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        out.append(f"{f.name} = {text}")
    out.append(f"seed = {sc.seed}")
    out.append(f"duration = {_num(sc.duration_ms)}")
    out.append(f"log_data = {int(sc.log_data)}")
    out.append("[nodes]")
    out.extend(str(n) for n in sc.nodes)
    out.append("[links]")
    out.extend(f"{l.u} {l.v} {l.rssi} {l.per!r}" for l in sc.links)
    out.append("[events]")
    for e in sc.events:
        if e.kind == "open_stream":
            args = _stream_tokens(e.args[0])
        else:
            args = " ".join(_num(a) if isinstance(a, float) else str(a) for a in e.args)
        out.append(f"{_num(e.time_ms)} {e.kind} {args}")
    out.append("[streams]")
    out.extend(_stream_tokens(r) for r in sc.streams)
    return "\n".join(out) + "\n"
