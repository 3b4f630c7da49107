"""Discrete-time physics of the five-stage water loop.

Stages: S1 vegetable farming + reservoir, S2 fish tank, S3 nitrification,
S4 biofiltration, S5 accumulation/slow-release. Water moves S1->S2->S3->S4
->S5 and gravity-drains S5->S1; a direct S1->S5 route exists for
re-circulating around the fish tank when water quality is poor.

Determinism and conservation rules:
  - One fixed update order per step: transfers, aeration, DO consumption,
    nitrification, TDS/pH drift, environment-coupled state.
  - All volume movements are quantised to 2**-20 L. Volumes therefore stay
    on a dyadic grid where float64 addition is exact, so total water is
    conserved bit-for-bit over arbitrarily long runs (only explicit
    intake/reject events change the total).
  - No randomness lives here; sensor noise is applied in `sensors`.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from enum import Enum

from .configio import ConfigError, Section, parse_float, parse_int

_QUANT = 1048576.0  # 2**20 steps per litre


def quantize_volume(x: float) -> float:
    """Round down to the conservation grid (never moves more than allowed)."""
    return math.floor(x * _QUANT) / _QUANT


class Stage(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"
    S5 = "S5"


DARK_STAGES = frozenset({Stage.S3, Stage.S4})  # bacteria tanks are kept out of sunlight

# Default tank capacities in litres.
CAPACITIES = {Stage.S1: 100.0, Stage.S2: 80.0, Stage.S3: 80.0, Stage.S4: 80.0, Stage.S5: 20.0}


@dataclass
class TankState:
    stage_id: Stage
    volume: float
    capacity: float
    ph: float = 7.2
    dissolved_oxygen: float = 4.5
    tds: float = 400.0
    ammonia: float = 1.0
    water_temp: float = 22.0

    def __post_init__(self):
        self.volume = quantize_volume(self.volume)
        self.capacity = quantize_volume(self.capacity)
        self.validate()

    def validate(self) -> None:
        if not 0.0 <= self.volume <= self.capacity:
            raise ValueError(f"{self.stage_id.value}: volume {self.volume} outside [0, {self.capacity}]")
        if not 0.0 <= self.ph <= 14.0:
            raise ValueError(f"{self.stage_id.value}: pH {self.ph} outside [0, 14]")
        if self.dissolved_oxygen < 0.0 or self.tds < 0.0 or self.ammonia < 0.0:
            raise ValueError(f"{self.stage_id.value}: negative concentration")


@dataclass
class Environment:
    air_temp: float = 24.0
    humidity: float = 60.0
    uv_light: bool = False  # dark placement flag honoured for S3/S4

    def __post_init__(self):
        if not 0.0 <= self.humidity <= 100.0:
            raise ValueError(f"humidity {self.humidity} outside [0, 100]")


class PumpKind(str, Enum):
    WATER = "water"
    AERATION = "aeration"


@dataclass
class PumpSpec:
    kind: PumpKind
    rate: float  # L/h of water, or L/min of air
    state: bool = False

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("pump rate must be positive")


# Standard freshwater DO saturation (mg/L) by temperature; strictly decreasing.
DO_SATURATION_TABLE = [
    (0.0, 14.6), (5.0, 12.8), (10.0, 11.3), (15.0, 10.1),
    (20.0, 9.1), (25.0, 8.3), (30.0, 7.6), (35.0, 7.0), (40.0, 6.4),
]

NOMINAL_AIR_RATE_LPM = 3.0  # aeration coefficient is calibrated at this air flow


@dataclass
class SimConfig:
    dt: float = 1.0
    k_aeration: float = 3e-4          # 1/s toward saturation while aerating
    k_do_consumption: float = 5e-4    # mg/L/s biological oxygen demand
    k_nitrification: float = 5e-4     # 1/s ammonia decay when DO allows
    k_tds_accretion: float = 2e-4     # ppm/s added in the fish tank
    k_ph_drift: float = 5e-6          # pH/s acidification in the fish tank
    do_saturation_curve: list[tuple[float, float]] = field(
        default_factory=lambda: list(DO_SATURATION_TABLE))
    rng_seed: int = 0
    # Environment profile: value = base + amplitude * sin(2*pi*t/period).
    water_temp_base: float = 22.0
    water_temp_amplitude: float = 1.5
    air_temp_base: float = 24.0
    air_temp_amplitude: float = 3.0
    humidity_base: float = 60.0
    humidity_amplitude: float = 8.0
    diurnal_period: float = 86400.0
    # Pump rates (L/h); the S4->S5 fill and S5 drain reproduce the 20 L
    # tank's ~2 min fill / ~2 h drain behaviour.
    transfer_rate: float = 900.0
    s5_fill_rate: float = 600.0
    s5_drain_rate: float = 10.0
    aeration_air_rate: float = 3.0    # L/min
    s1_capacity: float = 100.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        for name in ("k_aeration", "k_do_consumption", "k_nitrification",
                     "k_tds_accretion", "k_ph_drift"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        curve = self.do_saturation_curve
        if len(curve) < 2:
            raise ConfigError("do_saturation_curve needs at least two points")
        for (t0, s0), (t1, s1) in zip(curve, curve[1:]):
            if t1 <= t0 or s1 >= s0:
                raise ConfigError("DO saturation must be strictly decreasing in temperature")

    def do_saturation(self, water_temp: float) -> float:
        """Linear interpolation on the saturation table, clamped at the ends."""
        curve = self.do_saturation_curve
        if water_temp <= curve[0][0]:
            return curve[0][1]
        if water_temp >= curve[-1][0]:
            return curve[-1][1]
        for (t0, s0), (t1, s1) in zip(curve, curve[1:]):
            if water_temp <= t1:
                return s0 + (s1 - s0) * (water_temp - t0) / (t1 - t0)
        return curve[-1][1]

    @classmethod
    def from_section(cls, sec: Section | None) -> "SimConfig":
        if sec is None:
            return cls()
        cfg = cls(
            dt=parse_float(sec, "dt", 1.0),
            k_aeration=parse_float(sec, "k_aeration", 3e-4),
            k_do_consumption=parse_float(sec, "k_do_consumption", 5e-4),
            k_nitrification=parse_float(sec, "k_nitrification", 5e-4),
            k_tds_accretion=parse_float(sec, "k_tds_accretion", 2e-4),
            k_ph_drift=parse_float(sec, "k_ph_drift", 5e-6),
            rng_seed=parse_int(sec, "seed", 0),
            water_temp_base=parse_float(sec, "water_temp_base", 22.0),
            water_temp_amplitude=parse_float(sec, "water_temp_amplitude", 1.5),
            air_temp_base=parse_float(sec, "air_temp_base", 24.0),
            air_temp_amplitude=parse_float(sec, "air_temp_amplitude", 3.0),
            humidity_base=parse_float(sec, "humidity_base", 60.0),
            humidity_amplitude=parse_float(sec, "humidity_amplitude", 8.0),
            diurnal_period=parse_float(sec, "diurnal_period", 86400.0),
            transfer_rate=parse_float(sec, "transfer_rate", 900.0),
            s5_fill_rate=parse_float(sec, "s5_fill_rate", 600.0),
            s5_drain_rate=parse_float(sec, "s5_drain_rate", 10.0),
            aeration_air_rate=parse_float(sec, "aeration_air_rate", 3.0),
            s1_capacity=parse_float(sec, "s1_capacity", 100.0),
        )
        return cfg


@dataclass
class PlantEvent:
    t: float
    kind: str     # Overflow | DryRun | Intake | Reject
    detail: str


def transfer(src: TankState, dst: TankState, pump: PumpSpec, dt: float,
             events: list[PlantEvent] | None = None, t: float = 0.0) -> float:
    """Move water src->dst through a running pump; returns litres moved.

    The moved amount is limited by pump rate, source volume and destination
    headroom; the destination's quality vector becomes the volume-weighted
    mix of old and incoming water.
    """
    if pump.kind is not PumpKind.WATER:
        raise ValueError("transfer requires a water pump")
    if not pump.state:
        return 0.0
    if src.volume <= 0.0:
        if events is not None:
            events.append(PlantEvent(t, "DryRun", f"{src.stage_id.value} empty"))
        return 0.0
    headroom = dst.capacity - dst.volume
    desired = pump.rate / 3600.0 * dt
    moved = quantize_volume(min(desired, src.volume, headroom))
    if desired > headroom and events is not None:
        events.append(PlantEvent(
            t, "Overflow",
            f"{dst.stage_id.value} full: clamped {desired - headroom:.6f} L from "
            f"{src.stage_id.value}"))
    if moved <= 0.0:
        return 0.0
    _mix_into(dst, src, moved)
    src.volume -= moved
    dst.volume += moved
    return moved


def supply_to_stage1(s5: TankState, dt: float, rate: float = 10.0) -> float:
    """Gravity drain of the accumulation tank; returns litres delivered.

    Default 10 L/h empties a full 20 L tank in about two hours. Drains to
    zero and then idles; mixing into S1 is the loop's job.
    """
    if s5.volume <= 0.0:
        return 0.0
    delivered = quantize_volume(min(rate / 3600.0 * dt, s5.volume))
    s5.volume -= delivered
    return delivered


def nitrify(tank: TankState, dt: float, k: float, do_gate: float = 2.0) -> None:
    """First-order ammonia decay, shut off entirely below the DO gate."""
    if tank.stage_id not in DARK_STAGES:
        raise ValueError("nitrification runs in S3/S4 only")
    if tank.dissolved_oxygen < do_gate or tank.ammonia <= 0.0:
        return
    tank.ammonia *= math.exp(-k * dt)


def aerate(tank: TankState, dt: float, k: float, do_sat: float) -> None:
    """Exponential relaxation toward saturation; exact fixed point at DOsat."""
    tank.dissolved_oxygen = do_sat + (tank.dissolved_oxygen - do_sat) * math.exp(-k * dt)


def _mix_into(dst: TankState, src: TankState, moved: float) -> None:
    total = dst.volume + moved
    if total <= 0.0:
        return
    w_old = dst.volume / total
    w_new = moved / total
    dst.ph = w_old * dst.ph + w_new * src.ph
    dst.dissolved_oxygen = w_old * dst.dissolved_oxygen + w_new * src.dissolved_oxygen
    dst.tds = w_old * dst.tds + w_new * src.tds
    dst.ammonia = w_old * dst.ammonia + w_new * src.ammonia
    dst.water_temp = w_old * dst.water_temp + w_new * src.water_temp


# Transfer routes in fixed execution order: downstream first, so a tank
# frees headroom in the same step it receives make-up water.
ROUTES = [
    ("s2_to_s3", Stage.S2, Stage.S3),
    ("s3_to_s4", Stage.S3, Stage.S4),
    ("s4_to_s5", Stage.S4, Stage.S5),
    ("s1_to_s2", Stage.S1, Stage.S2),
    ("s1_to_s5", Stage.S1, Stage.S5),
]

DEFAULT_INITIAL_VOLUMES = {
    Stage.S1: 60.0, Stage.S2: 70.0, Stage.S3: 50.0, Stage.S4: 50.0, Stage.S5: 10.0,
}


class WaterLoop:
    """The whole five-tank world, advanced by a single clock owner."""

    def __init__(self, config: SimConfig | None = None,
                 initial_volumes: dict[Stage, float] | None = None):
        self.config = config or SimConfig()
        cfg = self.config
        volumes = dict(DEFAULT_INITIAL_VOLUMES)
        if initial_volumes:
            volumes.update(initial_volumes)
        caps = dict(CAPACITIES)
        caps[Stage.S1] = cfg.s1_capacity
        self.tanks = {
            st: TankState(st, volume=volumes[st], capacity=caps[st],
                          water_temp=cfg.water_temp_base)
            for st in Stage
        }
        self.env = Environment(air_temp=cfg.air_temp_base, humidity=cfg.humidity_base)
        self.pumps: dict[str, PumpSpec] = {
            "s1_to_s2": PumpSpec(PumpKind.WATER, cfg.transfer_rate),
            "s2_to_s3": PumpSpec(PumpKind.WATER, cfg.transfer_rate),
            "s3_to_s4": PumpSpec(PumpKind.WATER, cfg.transfer_rate),
            "s4_to_s5": PumpSpec(PumpKind.WATER, cfg.s5_fill_rate),
            "s1_to_s5": PumpSpec(PumpKind.WATER, cfg.s5_fill_rate),
        }
        for st in Stage:
            self.pumps[f"aer_{st.value.lower()}"] = PumpSpec(
                PumpKind.AERATION, cfg.aeration_air_rate)
        self._aeration = [(st, self.pumps[f"aer_{st.value.lower()}"]) for st in Stage]
        self._routes = [(name, self.tanks[src], self.tanks[dst], self.pumps[name])
                        for name, src, dst in ROUTES]
        self.failed_pumps: set[str] = set()
        self.t = 0.0
        self.events: list[PlantEvent] = []
        self.intake_total = 0.0
        self.reject_total = 0.0

    # -- pump control ------------------------------------------------------

    def set_pump(self, name: str, on: bool) -> None:
        self.pumps[name].state = on

    def pump_on(self, name: str) -> bool:
        return self.pumps[name].state and name not in self.failed_pumps

    # -- external water events ---------------------------------------------

    def intake(self, liters: float, ph: float = 7.2, do: float = 6.0,
               tds: float = 350.0, ammonia: float = 0.0) -> float:
        """Fresh water into the S1 reservoir; returns litres accepted."""
        s1 = self.tanks[Stage.S1]
        accepted = quantize_volume(min(max(liters, 0.0), s1.capacity - s1.volume))
        if accepted > 0.0:
            fresh = TankState(Stage.S1, volume=accepted, capacity=s1.capacity,
                              ph=ph, dissolved_oxygen=do, tds=tds, ammonia=ammonia,
                              water_temp=s1.water_temp)
            _mix_into(s1, fresh, accepted)
            s1.volume += accepted
            self.intake_total += accepted
            self.events.append(PlantEvent(self.t, "Intake", f"{accepted:.6f} L into S1"))
        return accepted

    def reject(self, liters: float) -> float:
        """Contaminated water out of the S1 reservoir; returns litres removed."""
        s1 = self.tanks[Stage.S1]
        removed = quantize_volume(min(max(liters, 0.0), s1.volume))
        if removed > 0.0:
            s1.volume -= removed
            self.reject_total += removed
            self.events.append(PlantEvent(self.t, "Reject", f"{removed:.6f} L from S1"))
        return removed

    # -- stepping ------------------------------------------------------------

    def step(self, dt: float | None = None) -> None:
        cfg = self.config
        dt = cfg.dt if dt is None else dt
        if dt <= 0 or dt > cfg.dt:
            raise ValueError(f"dt must be in (0, {cfg.dt}]")
        t_end = self.t + dt

        # (1) pump transfers, then the gravity drain S5->S1
        for name, src, dst, pump in self._routes:
            if pump.state and name not in self.failed_pumps:
                transfer(src, dst, pump, dt, events=self.events, t=t_end)
        delivered = supply_to_stage1(self.tanks[Stage.S5], dt, cfg.s5_drain_rate)
        if delivered > 0.0:
            s1 = self.tanks[Stage.S1]
            headroom = s1.capacity - s1.volume
            if delivered > headroom:
                # Gravity line backs up into S5 rather than spilling.
                overflow = delivered - headroom
                self.tanks[Stage.S5].volume += overflow
                delivered = headroom
                self.events.append(PlantEvent(t_end, "Overflow", "S1 full: drain backed up"))
            if delivered > 0.0:
                _mix_into(s1, self.tanks[Stage.S5], delivered)
                s1.volume += delivered

        # (2) aeration toward temperature-dependent saturation
        for st, pump in self._aeration:
            if pump.state and f"aer_{st.value.lower()}" not in self.failed_pumps:
                tank = self.tanks[st]
                k = cfg.k_aeration * (pump.rate / NOMINAL_AIR_RATE_LPM)
                aerate(tank, dt, k, cfg.do_saturation(tank.water_temp))

        # (3) biological oxygen demand
        for tank in self.tanks.values():
            tank.dissolved_oxygen = max(0.0, tank.dissolved_oxygen - cfg.k_do_consumption * dt)

        # (4) nitrification in the dark bacteria tanks
        for st in DARK_STAGES:
            nitrify(self.tanks[st], dt, cfg.k_nitrification)

        # (5) waste accretion in the fish tank
        fish = self.tanks[Stage.S2]
        fish.tds += cfg.k_tds_accretion * dt
        fish.ph = max(0.0, fish.ph - cfg.k_ph_drift * dt)

        # (6) environment-coupled observables
        phase = math.sin(2.0 * math.pi * t_end / cfg.diurnal_period)
        self.env.air_temp = cfg.air_temp_base + cfg.air_temp_amplitude * phase
        self.env.humidity = min(100.0, max(
            0.0, cfg.humidity_base + cfg.humidity_amplitude * phase))
        water_temp = cfg.water_temp_base + cfg.water_temp_amplitude * phase
        for tank in self.tanks.values():
            tank.water_temp = water_temp
            sat = cfg.do_saturation(water_temp)
            if tank.dissolved_oxygen > sat:
                tank.dissolved_oxygen = sat

        self.t = t_end

    # -- inspection ------------------------------------------------------------

    def total_volume(self) -> float:
        return sum(tank.volume for tank in self.tanks.values())

    def snapshot(self, stage: Stage) -> TankState:
        """Immutable-by-convention copy, safe to hand to other modules."""
        return copy.copy(self.tanks[stage])

    def drain_events(self) -> list[PlantEvent]:
        out, self.events = self.events, []
        return out
