"""Scenario files: what to simulate, for how long, and what goes wrong.

A scenario is sectioned key/value text:

    [sim]
    duration = 7200          ; simulated seconds
    speed = 5000             ; acceleration factor (pacing only)
    seed = 42
    start_epoch = 1700000000 ; unix base for dataset timestamps
    s2.ph = 6.9              ; initial tank overrides: s{1..5}.{field}

    [controller]
    ph_permissible = 6.5, 8.5
    log_interval = 8.64

    [events]
    ; time = action [| action ...]
    600  = manual wp=1 ap=1
    1200 = manual release
    1800 = fault bus_loss prob=0.2 window=600
    2400 = set stage=S2 ph=6.0 | intake liters=5

Event actions: manual, fault (sensor_stuck, sensor_drift, pump_failure,
bus_loss), set, intake, reject, pump. Events are applied at the first tick
at or after their timestamp, in file order for equal times.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .configio import ConfigError, Section, parse_config, parse_float, parse_int
from .controller import ControllerConfig
from .plant import SimConfig, Stage

_TANK_FIELDS = {"volume", "ph", "do", "tds", "ammonia"}
_FAULT_KINDS = {"sensor_stuck", "sensor_drift", "pump_failure", "bus_loss"}
_ACTIONS = {"manual", "fault", "set", "intake", "reject", "pump"}


@dataclass
class Event:
    t: float
    action: str
    args: dict[str, str]
    line: int = 0

    def arg_float(self, name: str, default: float | None = None) -> float:
        raw = self.args.get(name)
        if raw is None:
            if default is None:
                raise ConfigError(f"event {self.action!r} needs {name}=", self.line)
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {raw!r}", self.line) from None

    def arg_str(self, name: str, default: str | None = None) -> str:
        raw = self.args.get(name, default)
        if raw is None:
            raise ConfigError(f"event {self.action!r} needs {name}=", self.line)
        return raw


@dataclass
class Scenario:
    duration: float = 7200.0
    speed: float = 5000.0
    seed: int = 42
    start_epoch: float = 1_700_000_000.0
    sensor_noise_frac: float = 0.01
    sim: SimConfig = field(default_factory=SimConfig)
    control: ControllerConfig = field(default_factory=ControllerConfig)
    initial_tanks: dict[Stage, dict[str, float]] = field(default_factory=dict)
    events: list[Event] = field(default_factory=list)

    def __post_init__(self):
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.speed < 1:
            raise ConfigError("speed must be >= 1")
        self.events.sort(key=lambda e: e.t)  # stable: file order kept for ties

    @classmethod
    def from_file(cls, path: str | Path) -> "Scenario":
        return cls.from_text(Path(path).read_text())

    @classmethod
    def from_text(cls, text: str) -> "Scenario":
        sections = parse_config(text)
        sim_sec = sections.get("sim")
        scn = cls(
            duration=parse_float(sim_sec, "duration", 7200.0) if sim_sec else 7200.0,
            speed=parse_float(sim_sec, "speed", 5000.0) if sim_sec else 5000.0,
            seed=parse_int(sim_sec, "seed", 42) if sim_sec else 42,
            start_epoch=parse_float(sim_sec, "start_epoch", 1_700_000_000.0)
            if sim_sec else 1_700_000_000.0,
            sensor_noise_frac=parse_float(sim_sec, "sensor_noise_frac", 0.01)
            if sim_sec else 0.01,
            sim=SimConfig.from_section(sim_sec),
            control=ControllerConfig.from_section(sections.get("controller")),
            initial_tanks=_parse_tank_overrides(sim_sec),
            events=_parse_events(sections.get("events")),
        )
        scn.sim.rng_seed = scn.seed
        return scn


def _parse_tank_overrides(sec: Section | None) -> dict[Stage, dict[str, float]]:
    overrides: dict[Stage, dict[str, float]] = {}
    if sec is None:
        return overrides
    for entry in sec.entries:
        if "." not in entry.key:
            continue
        stage_part, _, field_part = entry.key.partition(".")
        if stage_part.lower() not in ("s1", "s2", "s3", "s4", "s5"):
            continue
        if field_part not in _TANK_FIELDS:
            raise ConfigError(f"unknown tank field {field_part!r}", entry.line)
        try:
            value = float(entry.value)
        except ValueError:
            raise ConfigError(f"{entry.key}: expected a number", entry.line) from None
        overrides.setdefault(Stage(stage_part.upper()), {})[field_part] = value
    return overrides


def _parse_events(sec: Section | None) -> list[Event]:
    events: list[Event] = []
    if sec is None:
        return events
    for entry in sec.entries:
        try:
            t = float(entry.key)
        except ValueError:
            raise ConfigError(f"event time must be a number, got {entry.key!r}",
                              entry.line) from None
        if t < 0:
            raise ConfigError("event time must be non-negative", entry.line)
        for part in entry.value.split("|"):
            part = part.strip()
            if part:
                events.append(_parse_action(t, part, entry.line))
    return events


def _parse_action(t: float, text: str, line: int) -> Event:
    tokens = text.split()
    action = tokens[0]
    if action not in _ACTIONS:
        raise ConfigError(f"unknown event action {action!r}", line)
    args: dict[str, str] = {}
    for tok in tokens[1:]:
        if "=" in tok:
            k, _, v = tok.partition("=")
            args[k] = v
        else:
            args[tok] = "1"  # bare flags like 'release'
    event = Event(t, action, args, line)
    _validate_action(event)
    return event


def _validate_action(e: Event) -> None:
    if e.action == "fault":
        kind = next((k for k in e.args if k in _FAULT_KINDS), None)
        if kind is None:
            raise ConfigError(
                f"fault needs one of {sorted(_FAULT_KINDS)}", e.line)
        e.args["kind"] = kind
        if kind in ("sensor_stuck", "sensor_drift"):
            e.arg_str("stage")
            e.arg_str("channel")
            e.arg_float("duration")
            if kind == "sensor_drift":
                e.arg_float("rate")
        elif kind == "pump_failure":
            e.arg_str("pump")
            e.arg_float("duration")
        elif kind == "bus_loss":
            prob = e.arg_float("prob")
            if not 0.0 <= prob <= 1.0:
                raise ConfigError("bus_loss prob must be in [0, 1]", e.line)
            e.arg_float("window")
    elif e.action == "manual":
        if "release" not in e.args:
            wp, ap = e.arg_float("wp"), e.arg_float("ap")
            if wp not in (0.0, 1.0) or ap not in (0.0, 1.0):
                raise ConfigError("manual wp/ap must be 0 or 1", e.line)
    elif e.action == "set":
        e.arg_str("stage")
        if not any(k in _TANK_FIELDS for k in e.args):
            raise ConfigError("set needs at least one tank field", e.line)
    elif e.action in ("intake", "reject"):
        e.arg_float("liters")
    elif e.action == "pump":
        e.arg_str("name")
        e.arg_float("on")
