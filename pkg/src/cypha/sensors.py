"""Sensor value generation and calibration curves.

Analog channels (pH, DO, TDS) are modelled at the voltage level: the true
tank value is pushed through the inverse calibration curve, bounded seeded
noise is added in the voltage domain, and consumers convert back with
the forward curve — exactly how the edge device sees the probes.

The pH calibration is the stock three-point curve: 1.5 V -> pH 4.0,
2.0 V -> pH 7.0, 3.0 V -> pH 9.0, linear between and beyond the anchors.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .plant import Environment, TankState

PH_ANCHORS = [(1.5, 4.0), (2.0, 7.0), (3.0, 9.0)]
VOLTS_FULL_SCALE = 5.0
DO_VOLTS_PER_MGL = 0.15     # 20 mg/L spans 3.0 V
TDS_VOLTS_PER_PPM = 0.002   # 2500 ppm spans 5.0 V
TEMP_SPAN_C = 50.0          # digital temperature channels' nominal span
HUMIDITY_SPAN = 100.0


def _piecewise(x: float, pts: list[tuple[float, float]]) -> float:
    """Piecewise-linear through pts, extrapolating on the outer segments."""
    if x <= pts[0][0]:
        (x0, y0), (x1, y1) = pts[0], pts[1]
    elif x >= pts[-1][0]:
        (x0, y0), (x1, y1) = pts[-2], pts[-1]
    else:
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if x <= x1:
                break
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


def voltage_to_ph(v: float) -> float:
    """Probe voltage to pH units, clamped to the physical scale."""
    return min(14.0, max(0.0, _piecewise(v, PH_ANCHORS)))


def ph_to_voltage(ph: float) -> float:
    """Inverse calibration used when synthesising probe output."""
    inv = [(p, v) for v, p in PH_ANCHORS]
    return min(VOLTS_FULL_SCALE, max(0.0, _piecewise(ph, inv)))


def voltage_to_do(v: float) -> float:
    return max(0.0, v / DO_VOLTS_PER_MGL)


def do_to_voltage(do: float) -> float:
    return min(VOLTS_FULL_SCALE, max(0.0, do * DO_VOLTS_PER_MGL))


def voltage_to_tds(v: float) -> float:
    return max(0.0, v / TDS_VOLTS_PER_PPM)


def tds_to_voltage(tds: float) -> float:
    return min(VOLTS_FULL_SCALE, max(0.0, tds * TDS_VOLTS_PER_PPM))


@dataclass(slots=True)
class RawReading:
    """One sampling instant: analog voltages plus digital channels."""

    ph_volts: float
    do_volts: float
    tds_volts: float
    water_temp: float
    air_temp: float
    humidity: float

    def to_engineering(self) -> dict[str, float]:
        return {
            "ph": voltage_to_ph(self.ph_volts),
            "do": voltage_to_do(self.do_volts),
            "tds": voltage_to_tds(self.tds_volts),
            "water_temp": self.water_temp,
            "air_temp": self.air_temp,
            "humidity": self.humidity,
        }


_CHANNELS = ("ph", "do", "tds", "water_temp", "air_temp", "humidity")


class SensorSuite:
    """Seeded, optionally faulty sensor bank for one stage.

    Noise is zero-mean uniform, bounded at +/- noise_frac of each channel's
    full scale (voltage scale for the analog probes). Identical seeds give
    identical reading streams.
    """

    def __init__(self, seed: int = 0, noise_frac: float = 0.01):
        if noise_frac < 0:
            raise ValueError("noise_frac must be non-negative")
        self._rng = random.Random(seed)
        self.noise_frac = noise_frac
        # channel -> ("stuck", value, until) | ("drift", rate, since, until)
        self._faults: dict[str, tuple] = {}

    def stick(self, channel: str, value: float, now: float, duration: float) -> None:
        self._check_channel(channel)
        self._faults[channel] = ("stuck", value, now + duration)

    def drift(self, channel: str, rate: float, now: float, duration: float) -> None:
        self._check_channel(channel)
        self._faults[channel] = ("drift", rate, now, now + duration)

    def clear_faults(self) -> None:
        self._faults.clear()

    @staticmethod
    def _check_channel(channel: str) -> None:
        if channel not in _CHANNELS:
            raise ValueError(f"unknown sensor channel {channel!r}")

    def _noise(self, scale: float) -> float:
        if self.noise_frac == 0.0:
            return 0.0
        # Same draw as uniform(-1, 1), without the method-call overhead.
        return (-1.0 + 2.0 * self._rng.random()) * self.noise_frac * scale

    def _apply_fault(self, channel: str, value: float, now: float) -> float:
        fault = self._faults.get(channel)
        if fault is None:
            return value
        if fault[0] == "stuck":
            _, stuck_value, until = fault
            if now <= until:
                return stuck_value
        else:
            _, rate, since, until = fault
            if now <= until:
                return value + rate * (now - since)
        del self._faults[channel]
        return value

    def read(self, tank: TankState, env: Environment, now: float = 0.0) -> RawReading:
        """Sample every channel once; always draws noise in a fixed order."""
        if self._faults:
            true_ph = self._apply_fault("ph", tank.ph, now)
            true_do = self._apply_fault("do", tank.dissolved_oxygen, now)
            true_tds = self._apply_fault("tds", tank.tds, now)
            true_wt = self._apply_fault("water_temp", tank.water_temp, now)
            true_at = self._apply_fault("air_temp", env.air_temp, now)
            true_rh = self._apply_fault("humidity", env.humidity, now)
        else:
            true_ph, true_do, true_tds = tank.ph, tank.dissolved_oxygen, tank.tds
            true_wt, true_at, true_rh = tank.water_temp, env.air_temp, env.humidity

        ph_v = ph_to_voltage(true_ph) + self._noise(VOLTS_FULL_SCALE)
        do_v = do_to_voltage(true_do) + self._noise(VOLTS_FULL_SCALE)
        tds_v = tds_to_voltage(true_tds) + self._noise(VOLTS_FULL_SCALE)
        return RawReading(
            ph_volts=min(VOLTS_FULL_SCALE, max(0.0, ph_v)),
            do_volts=min(VOLTS_FULL_SCALE, max(0.0, do_v)),
            tds_volts=min(VOLTS_FULL_SCALE, max(0.0, tds_v)),
            water_temp=true_wt + self._noise(TEMP_SPAN_C),
            air_temp=true_at + self._noise(TEMP_SPAN_C),
            humidity=min(100.0, max(0.0, true_rh + self._noise(HUMIDITY_SPAN))),
        )
