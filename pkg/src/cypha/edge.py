"""Per-stage edge agents.

Every stage samples its tank each 2 s of simulated time and publishes one
telemetry record; only Stage-2 accepts actuation. Manual commands latch
and mask controller commands until they expire or are released. The agent
also drives the stage's LED alert from threshold checks.

Telemetry payload (field names and order are the wire contract):
  {"ts":float,"stage":"S2","ph":f,"tds":f,"do":f,"water_temp":f,
   "air_temp":f,"humidity":f,"wp":0|1,"ap":0|1}
Actuation payload:
  {"ts":float,"wp":0|1,"ap":0|1,"source":"controller"|"manual"}
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

from . import gateway, topics
from .broker import Message
from .client import BusClient
from .plant import Stage, WaterLoop
from .sensors import SensorSuite, voltage_to_do, voltage_to_ph, voltage_to_tds

SAMPLE_PERIOD = 2.0
BUFFER_CAPACITY = 1024
MANUAL_EXPIRY = 600.0          # 10 min simulated
WP_MIN_ON = 120.0              # water-exchange dwell after a violation

# Each stage's outgoing water pump, as reported in its telemetry.
WP_PUMP = {
    Stage.S1: "s1_to_s2", Stage.S2: "s2_to_s3", Stage.S3: "s3_to_s4",
    Stage.S4: "s4_to_s5", Stage.S5: None,
}


@dataclass(slots=True)
class SensorRecord:
    ts: float
    stage: str
    ph: float
    tds: float
    do: float
    water_temp: float
    air_temp: float
    humidity: float
    wp: int
    ap: int

    def to_json(self) -> bytes:
        # Hand-assembled for the sampling hot path; float repr matches what
        # json.dumps would emit for finite values.
        return (f'{{"ts":{self.ts!r},"stage":"{self.stage}","ph":{self.ph!r},'
                f'"tds":{self.tds!r},"do":{self.do!r},'
                f'"water_temp":{self.water_temp!r},"air_temp":{self.air_temp!r},'
                f'"humidity":{self.humidity!r},"wp":{self.wp:d},"ap":{self.ap:d}}}'
                ).encode("ascii")


@dataclass(slots=True)
class ActuatorCommand:
    wp: int
    ap: int
    source: str                 # "controller" | "manual"
    ts: float
    release: bool = False

    def to_json(self) -> bytes:
        obj = {"ts": self.ts, "wp": self.wp, "ap": self.ap, "source": self.source}
        if self.release:
            obj["release"] = True
        return json.dumps(obj, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_json(cls, raw: bytes) -> "ActuatorCommand":
        obj = json.loads(raw)
        cmd = cls(wp=int(obj["wp"]), ap=int(obj["ap"]), source=obj["source"],
                  ts=float(obj["ts"]), release=bool(obj.get("release", False)))
        if cmd.wp not in (0, 1) or cmd.ap not in (0, 1):
            raise ValueError("pump bits must be 0 or 1")
        if cmd.source not in ("controller", "manual"):
            raise ValueError(f"unknown command source {cmd.source!r}")
        return cmd


@dataclass
class AlertThresholds:
    ph: tuple[float, float] = (6.5, 8.5)
    do: tuple[float, float] = (3.5, 5.0)
    tds: tuple[float, float] = (300.0, 500.0)
    water_temp: tuple[float, float] = (18.0, 30.0)


@dataclass(slots=True)
class AlertState:
    led: bool = False
    violated_params: set[str] = field(default_factory=set)


def update_alert(rec: SensorRecord, thresholds: AlertThresholds) -> AlertState:
    """LED on iff any monitored parameter leaves its permissible range."""
    violated = set()
    for name in ("ph", "do", "tds", "water_temp"):
        lo, hi = getattr(thresholds, name)
        if not lo <= getattr(rec, name) <= hi:
            violated.add(name)
    return AlertState(led=bool(violated), violated_params=violated)


class StageAgent:
    """One stage's sampling/actuation loop, driven by clock ticks."""

    def __init__(self, stage: Stage, plant: WaterLoop, client: BusClient,
                 keys: gateway.KeyTable, seed: int = 0,
                 thresholds: AlertThresholds | None = None,
                 noise_frac: float = 0.01,
                 manual_expiry: float = MANUAL_EXPIRY,
                 wp_min_on: float = WP_MIN_ON):
        self.stage = stage
        self.plant = plant
        self.client = client
        self.keys = keys
        self.key_id = f"stage{stage.value[1:]}"
        self.sensors = SensorSuite(seed=seed, noise_frac=noise_frac)
        self.thresholds = thresholds or AlertThresholds()
        self.manual_expiry = manual_expiry
        self.sensing_topic = topics.stage_topic(stage.value, "sensing")
        self.alert = AlertState()
        self.alert_transitions = 0
        self.records_published = 0
        self.records_dropped = 0
        self._buffer: deque[bytes] = deque()
        # Stage-2 actuation state
        self.auto_wp = 0
        self.auto_ap = 0
        self.manual: ActuatorCommand | None = None
        self.manual_until = 0.0
        self.circulation_active = False
        self.wp_min_on = wp_min_on
        self._wp_hold_until = 0.0
        self.ignored_commands = 0
        if stage is Stage.S2:
            client.subscribe(topics.stage_topic("S2", "actuating"), self.on_command, qos=1)
            client.subscribe(topics.stage_topic("S2", "manual"), self.on_command, qos=1)

    # -- sampling ---------------------------------------------------------

    def sample_and_publish(self, now: float, unix_ts: float) -> SensorRecord:
        """Read the stage's sensors and publish one telemetry record."""
        # The agent only reads the live tank; snapshots are for hand-offs.
        tank = self.plant.tanks[self.stage]
        raw = self.sensors.read(tank, self.plant.env, now)
        rec = SensorRecord(
            ts=unix_ts, stage=self.stage.value,
            ph=voltage_to_ph(raw.ph_volts), tds=voltage_to_tds(raw.tds_volts),
            do=voltage_to_do(raw.do_volts), water_temp=raw.water_temp,
            air_temp=raw.air_temp, humidity=raw.humidity,
            wp=self._wp_bit(), ap=self._ap_bit())
        self._refresh_alert(rec)
        payload = gateway.seal(self.keys, self.sensing_topic, rec.to_json(),
                               self.key_id).to_bytes()
        self._flush_buffer()
        if not self._try_publish(payload):
            self._enqueue(payload)
        if self.stage is Stage.S2:
            self._apply_pumps(now)
        return rec

    def _wp_bit(self) -> int:
        name = WP_PUMP[self.stage]
        return int(name is not None and self.plant.pumps[name].state)

    def _ap_bit(self) -> int:
        return int(self.plant.pumps[f"aer_{self.stage.value.lower()}"].state)

    def _refresh_alert(self, rec: SensorRecord) -> None:
        new = update_alert(rec, self.thresholds)
        if new.led != self.alert.led:
            self.alert_transitions += 1
        self.alert = new

    def _try_publish(self, payload: bytes) -> bool:
        if self.client.publish(self.sensing_topic, payload, qos=0):
            self.records_published += 1
            return True
        return False

    def _enqueue(self, payload: bytes) -> None:
        if len(self._buffer) >= BUFFER_CAPACITY:
            self._buffer.popleft()
            self.records_dropped += 1
        self._buffer.append(payload)

    def _flush_buffer(self) -> None:
        while self._buffer:
            if not self._try_publish(self._buffer[0]):
                return
            self._buffer.popleft()

    def buffered(self) -> int:
        return len(self._buffer)

    # -- actuation (Stage-2 only) ----------------------------------------------

    def on_command(self, msg: Message) -> None:
        if self.stage is not Stage.S2:
            self.ignored_commands += 1
            return
        now = self.plant.t
        try:
            env = gateway.Envelope.from_bytes(msg.payload)
            raw = gateway.verify(self.keys, env)
            cmd = ActuatorCommand.from_json(raw)
        except (gateway.IntegrityError, ValueError, KeyError):
            self.ignored_commands += 1
            return
        self.apply_actuation(cmd, now)

    def apply_actuation(self, cmd: ActuatorCommand, now: float) -> None:
        """Manual latches and masks controller commands until expiry/release."""
        if cmd.source == "manual":
            if cmd.release:
                self.manual = None
            else:
                self.manual = cmd
                self.manual_until = now + self.manual_expiry
        else:
            self.auto_wp, self.auto_ap = cmd.wp, cmd.ap
        self._apply_pumps(now)

    def manual_active(self, now: float) -> bool:
        if self.manual is None:
            return False
        if now > self.manual_until:
            self.manual = None
            return False
        return True

    def set_circulation(self, active: bool) -> None:
        self.circulation_active = active
        self._apply_pumps(self.plant.t)

    def _apply_pumps(self, now: float) -> None:
        if self.manual_active(now):
            wp, ap = self.manual.wp, self.manual.ap
        else:
            if self.auto_wp:
                # A violation starts a full exchange: pull fish water out and
                # feed reservoir water in for at least the dwell time, so the
                # tank actually receives a meaningful volume of fresh water.
                self._wp_hold_until = max(self._wp_hold_until, now + self.wp_min_on)
            wp = int(self.auto_wp or self.circulation_active
                     or now < self._wp_hold_until)
            ap = self.auto_ap
        self.plant.set_pump("s2_to_s3", bool(wp))
        self.plant.set_pump("s1_to_s2", bool(wp))
        self.plant.set_pump("aer_s2", bool(ap))
