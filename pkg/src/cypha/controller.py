"""The central controller: telemetry intake, FSM control, publish and log.

Control is a four-state Moore machine over a two-bit condition (is pH in
its permissible range, is DO in its permissible range):

    symbol a: both in range        -> q1, output 00 (both pumps off)
    symbol b: pH in, DO out        -> q2, output 01 (aeration on)
    symbol c: pH out, DO in        -> q3, output 10 (water pump on)
    symbol d: both out             -> q4, output 11 (both on)

The next state depends only on the symbol, and the output only on the
state. Manual commands take priority over the machine's output until they
expire or are released. TDS participates in alerting, logging and the
supervisory re-circulation policy, but not in the FSM alphabet.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

from . import gateway, topics
from .broker import Message
from .client import BusClient
from .configio import Section, parse_float, parse_int, parse_range
from .datastore import DataStore, LogRow
from .edge import ActuatorCommand, SensorRecord


@dataclass
class ControllerConfig:
    ph_permissible: tuple[float, float] = (6.5, 8.5)
    do_permissible: tuple[float, float] = (3.5, 5.0)
    tds_permissible: tuple[float, float] = (300.0, 500.0)
    water_temp_permissible: tuple[float, float] = (18.0, 30.0)
    log_interval: float = 8.64
    manual_expiry: float = 600.0
    circulation_period: float = 3600.0   # one forced turnover per hour
    circulation_duration: float = 320.0  # 900 L/h x 320 s moves one 80 L tank
    recirc_limit: int = 3                # failed cycles before water rejection
    reject_liters: float = 20.0
    makeup_min_on: float = 120.0

    def __post_init__(self):
        for name in ("ph_permissible", "do_permissible", "tds_permissible",
                     "water_temp_permissible"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name}: need lo < hi")
        if self.log_interval <= 0:
            raise ValueError("log_interval must be positive")

    @classmethod
    def from_section(cls, sec: Section | None) -> "ControllerConfig":
        if sec is None:
            return cls()
        return cls(
            ph_permissible=parse_range(sec, "ph_permissible", (6.5, 8.5)),
            do_permissible=parse_range(sec, "do_permissible", (3.5, 5.0)),
            tds_permissible=parse_range(sec, "tds_permissible", (300.0, 500.0)),
            water_temp_permissible=parse_range(sec, "water_temp_permissible", (18.0, 30.0)),
            log_interval=parse_float(sec, "log_interval", 8.64),
            manual_expiry=parse_float(sec, "manual_expiry", 600.0),
            circulation_period=parse_float(sec, "circulation_period", 3600.0),
            circulation_duration=parse_float(sec, "circulation_duration", 320.0),
            recirc_limit=parse_int(sec, "recirc_limit", 3),
            reject_liters=parse_float(sec, "reject_liters", 20.0),
            makeup_min_on=parse_float(sec, "makeup_min_on", 120.0),
        )


class FsmState(Enum):
    Q1 = "q1"
    Q2 = "q2"
    Q3 = "q3"
    Q4 = "q4"


class InputSymbol(Enum):
    A = "a"  # pH in, DO in
    B = "b"  # pH in, DO out
    C = "c"  # pH out, DO in
    D = "d"  # pH out, DO out


# Moore outputs (wp, ap) per state; the next state is symbol-determined.
OUTPUT = {FsmState.Q1: (0, 0), FsmState.Q2: (0, 1),
          FsmState.Q3: (1, 0), FsmState.Q4: (1, 1)}
NEXT_STATE = {InputSymbol.A: FsmState.Q1, InputSymbol.B: FsmState.Q2,
              InputSymbol.C: FsmState.Q3, InputSymbol.D: FsmState.Q4}
START_STATE = FsmState.Q1


class TelemetryError(ValueError):
    """Rejected record; kind is MissingField | OutOfPhysicalRange | MalformedJson."""

    def __init__(self, kind: str, detail: str = ""):
        self.kind = kind
        super().__init__(f"{kind}: {detail}" if detail else kind)


_REQUIRED_FIELDS = ("ts", "stage", "ph", "tds", "do", "water_temp",
                    "air_temp", "humidity", "wp", "ap")
_PHYSICAL_BOUNDS = {
    "ph": (0.0, 14.0), "tds": (0.0, 5000.0), "do": (0.0, 25.0),
    "water_temp": (-5.0, 60.0), "air_temp": (-40.0, 60.0),
    "humidity": (0.0, 100.0), "wp": (0, 1), "ap": (0, 1),
}


def parse_telemetry(raw: bytes) -> SensorRecord:
    """JSON payload to a validated SensorRecord (all 9 attributes present)."""
    try:
        obj = json.loads(raw.decode("utf-8") if isinstance(raw, bytes) else raw)
    except (ValueError, UnicodeDecodeError) as exc:
        raise TelemetryError("MalformedJson", str(exc)) from None
    if not isinstance(obj, dict):
        raise TelemetryError("MalformedJson", "payload is not an object")
    for name in _REQUIRED_FIELDS:
        if name not in obj:
            raise TelemetryError("MissingField", name)
    try:
        rec = SensorRecord(
            ts=float(obj["ts"]), stage=str(obj["stage"]),
            ph=float(obj["ph"]), tds=float(obj["tds"]), do=float(obj["do"]),
            water_temp=float(obj["water_temp"]), air_temp=float(obj["air_temp"]),
            humidity=float(obj["humidity"]), wp=int(obj["wp"]), ap=int(obj["ap"]))
    except (TypeError, ValueError) as exc:
        raise TelemetryError("MalformedJson", str(exc)) from None
    for name, (lo, hi) in _PHYSICAL_BOUNDS.items():
        value = getattr(rec, name)
        if not (lo <= value <= hi) or not math.isfinite(value):
            raise TelemetryError("OutOfPhysicalRange", f"{name}={value}")
    return rec


def classify(rec: SensorRecord, cfg: ControllerConfig) -> InputSymbol:
    """2x2 truth table over closed-interval membership of pH and DO."""
    ph_in = cfg.ph_permissible[0] <= rec.ph <= cfg.ph_permissible[1]
    do_in = cfg.do_permissible[0] <= rec.do <= cfg.do_permissible[1]
    if ph_in:
        return InputSymbol.A if do_in else InputSymbol.B
    return InputSymbol.C if do_in else InputSymbol.D


def fsm_step(state: FsmState, symbol: InputSymbol) -> tuple[FsmState, tuple[int, int]]:
    """One transition; the output is the Moore output of the state entered."""
    nxt = NEXT_STATE[symbol]
    return nxt, OUTPUT[nxt]


def merge_manual(auto: tuple[int, int], manual: ActuatorCommand | None,
                 now: float, manual_until: float = 0.0) -> tuple[int, int]:
    """Manual bits win while the latch is live; otherwise pass auto through."""
    if manual is not None and now <= manual_until:
        return manual.wp, manual.ap
    return auto


STATE_TOPIC = "cypha/controller/state"


class Controller:
    """Telemetry in, actuation and status out, rows to the datastore."""

    def __init__(self, cfg: ControllerConfig, keys: gateway.KeyTable,
                 client: BusClient, store: DataStore, key_id: str = "controller"):
        self.cfg = cfg
        self.keys = keys
        self.client = client
        self.store = store
        self.key_id = key_id
        self.state = START_STATE
        self.last_output = OUTPUT[START_STATE]
        self.manual: ActuatorCommand | None = None
        self.manual_until = 0.0
        self.counters = {"records": 0, "MissingField": 0, "OutOfPhysicalRange": 0,
                         "MalformedJson": 0, "integrity_reject": 0,
                         "actuations": 0, "log_rows": 0}
        self.last_record: SensorRecord | None = None
        self._log_count = 0
        self._log_t0: float | None = None
        self._last_state_published: tuple | None = None
        self._records_since_state = 0
        self.now = 0.0

    def start(self) -> None:
        self.client.subscribe("cypha/stage2/sensing", self.on_sensing)
        self.client.subscribe("cypha/stage2/manual", self.on_manual, qos=1)

    # -- Task 1: receive and validate ------------------------------------------

    def _unwrap(self, msg: Message) -> bytes | None:
        try:
            return gateway.verify(self.keys, gateway.Envelope.from_bytes(msg.payload))
        except gateway.IntegrityError:
            self.counters["integrity_reject"] += 1
            return None

    def on_sensing(self, msg: Message) -> None:
        raw = self._unwrap(msg)
        if raw is None:
            return
        try:
            rec = parse_telemetry(raw)
        except TelemetryError as exc:
            self.counters[exc.kind] += 1
            return
        self.handle_record(rec)

    def on_manual(self, msg: Message) -> None:
        raw = self._unwrap(msg)
        if raw is None:
            return
        try:
            cmd = ActuatorCommand.from_json(raw)
        except (ValueError, KeyError):
            self.counters["MalformedJson"] += 1
            return
        if cmd.source != "manual":
            return
        if cmd.release:
            self.manual = None
        else:
            self.manual = cmd
            self.manual_until = max(self.now, cmd.ts) + self.cfg.manual_expiry

    # -- Task 2 + 3: control, publish, log ----------------------------------

    def handle_record(self, rec: SensorRecord) -> tuple[int, int]:
        self.counters["records"] += 1
        self.now = max(self.now, rec.ts)
        symbol = classify(rec, self.cfg)
        self.state, auto = fsm_step(self.state, symbol)
        out = merge_manual(auto, self.manual, self.now, self.manual_until)
        self.last_output = out
        self.last_record = rec
        self._publish_actuation(rec.ts, out)
        self._publish_state(out)
        self._maybe_log(rec, out)
        return out

    def _publish_actuation(self, ts: float, out: tuple[int, int]) -> None:
        source = "manual" if (self.manual is not None and self.now <= self.manual_until) \
            else "controller"
        cmd = ActuatorCommand(wp=out[0], ap=out[1], source=source, ts=ts)
        topic = topics.stage_topic("S2", "actuating")
        env = gateway.seal(self.keys, topic, cmd.to_json(), self.key_id)
        self.client.publish(topic, env.to_bytes(), qos=1)
        self.counters["actuations"] += 1

    def _publish_state(self, out: tuple[int, int]) -> None:
        # Published on change, with a periodic refresh for late subscribers.
        snapshot = (self.state, out)
        self._records_since_state += 1
        if snapshot == self._last_state_published and self._records_since_state < 15:
            return
        self._last_state_published = snapshot
        self._records_since_state = 0
        payload = (f'{{"fsm":"{self.state.value}","wp":{out[0]:d},"ap":{out[1]:d}}}'
                   ).encode("ascii")
        env = gateway.seal(self.keys, STATE_TOPIC, payload, self.key_id)
        self.client.publish(STATE_TOPIC, env.to_bytes(), qos=0)

    def _maybe_log(self, rec: SensorRecord, out: tuple[int, int]) -> None:
        # Fixed-cadence decimation anchored at the first record; due times
        # are computed as multiples of the interval so they never drift.
        if self._log_t0 is None:
            self._log_t0 = rec.ts
        due = self._log_t0 + self._log_count * self.cfg.log_interval
        if rec.ts + 1e-6 < due:
            return
        self._log_count += 1
        self.store.append(LogRow(
            timestamp=rec.ts, ph=rec.ph, tds=rec.tds, do=rec.do,
            water_temp=rec.water_temp, air_temp=rec.air_temp,
            humidity=rec.humidity, wp=out[0], ap=out[1]))
        self.counters["log_rows"] += 1


@dataclass
class CirculationDecision:
    kind: str            # "normal" | "recirc" | "reject"
    recirc_count: int


class CirculationSupervisor:
    """Safety policy above the FSM: scheduled turnover and water rejection.

    Every circulation period the loop's water is turned over once. When the
    last observed pH or TDS is outside its permissible range the cycle runs
    as a re-circulation (reservoir routed straight to the release tank,
    bypassing the fish tank); after `recirc_limit` consecutive failed
    cycles the water is rejected and fresh intake is signalled.
    """

    def __init__(self, cfg: ControllerConfig):
        self.cfg = cfg
        self.recirc_count = 0
        self.decisions: list[CirculationDecision] = []

    def decide(self, last_record: SensorRecord | None) -> CirculationDecision:
        quality_ok = True
        if last_record is not None:
            ph_lo, ph_hi = self.cfg.ph_permissible
            tds_lo, tds_hi = self.cfg.tds_permissible
            quality_ok = (ph_lo <= last_record.ph <= ph_hi
                          and tds_lo <= last_record.tds <= tds_hi)
        if quality_ok:
            self.recirc_count = 0
            decision = CirculationDecision("normal", 0)
        elif self.recirc_count + 1 >= self.cfg.recirc_limit:
            self.recirc_count = 0
            decision = CirculationDecision("reject", self.cfg.recirc_limit)
        else:
            self.recirc_count += 1
            decision = CirculationDecision("recirc", self.recirc_count)
        self.decisions.append(decision)
        return decision
