"""Calibration-curve and noise-model tests."""

import pytest
from hypothesis import given, settings, strategies as st

from cypha.plant import Environment, Stage, TankState
from cypha.sensors import (
    SensorSuite, VOLTS_FULL_SCALE, do_to_voltage, ph_to_voltage,
    tds_to_voltage, voltage_to_do, voltage_to_ph, voltage_to_tds,
)


class TestPhCalibration:
    def test_anchor_points(self):
        # Stock calibration: 1.5 V / 2.0 V / 3.0 V read as pH 4.0 / 7.0 / 9.0.
        assert voltage_to_ph(1.5) == pytest.approx(4.0, abs=1e-12)
        assert voltage_to_ph(2.0) == pytest.approx(7.0, abs=1e-12)
        assert voltage_to_ph(3.0) == pytest.approx(9.0, abs=1e-12)

    def test_interpolation_oracle(self):
        # Linear between (1.5, 4.0) and (2.0, 7.0):
        expected = 4.0 + (1.75 - 1.5) / (2.0 - 1.5) * (7.0 - 4.0)
        assert expected == 5.5
        assert voltage_to_ph(1.75) == pytest.approx(5.5, abs=1e-12)

    def test_extrapolation_clamped(self):
        assert voltage_to_ph(0.0) == 0.0    # raw extrapolation is negative
        assert voltage_to_ph(5.0) == 13.0   # slope 2 above the last anchor
        assert voltage_to_ph(6.0) == 14.0   # clamped at the scale top

    @given(st.floats(4.0, 9.0))
    @settings(max_examples=300)
    def test_round_trip_within_anchor_span(self, ph):
        assert voltage_to_ph(ph_to_voltage(ph)) == pytest.approx(ph, abs=1e-9)

    def test_inverse_anchors(self):
        assert ph_to_voltage(4.0) == pytest.approx(1.5, abs=1e-12)
        assert ph_to_voltage(7.0) == pytest.approx(2.0, abs=1e-12)
        assert ph_to_voltage(9.0) == pytest.approx(3.0, abs=1e-12)


class TestOtherChannels:
    @given(st.floats(0.0, 14.0))
    @settings(max_examples=100)
    def test_do_round_trip(self, do):
        assert voltage_to_do(do_to_voltage(do)) == pytest.approx(do, abs=1e-9)

    @given(st.floats(0.0, 2000.0))
    @settings(max_examples=100)
    def test_tds_round_trip(self, tds):
        assert voltage_to_tds(tds_to_voltage(tds)) == pytest.approx(tds, abs=1e-9)


def tank(**kw):
    defaults = dict(volume=50.0, capacity=80.0, ph=7.0,
                    dissolved_oxygen=4.0, tds=400.0)
    defaults.update(kw)
    return TankState(Stage.S2, **defaults)


class TestSensorSuite:
    def test_zero_noise_reproduces_truth(self):
        suite = SensorSuite(seed=1, noise_frac=0.0)
        raw = suite.read(tank(ph=7.0), Environment())
        assert raw.ph_volts == pytest.approx(2.0, abs=1e-12)
        eng = raw.to_engineering()
        assert eng["ph"] == pytest.approx(7.0, abs=1e-9)
        assert eng["do"] == pytest.approx(4.0, abs=1e-9)
        assert eng["tds"] == pytest.approx(400.0, abs=1e-9)

    def test_zero_noise_ph4(self):
        raw = SensorSuite(seed=1, noise_frac=0.0).read(tank(ph=4.0), Environment())
        assert raw.ph_volts == pytest.approx(1.5, abs=1e-12)

    def test_same_seed_same_stream(self):
        a = SensorSuite(seed=42)
        b = SensorSuite(seed=42)
        t = tank()
        env = Environment()
        for _ in range(50):
            assert a.read(t, env) == b.read(t, env)

    def test_different_seeds_differ(self):
        t = tank()
        env = Environment()
        a = SensorSuite(seed=1).read(t, env)
        b = SensorSuite(seed=2).read(t, env)
        assert a != b

    def test_noise_bounded(self):
        suite = SensorSuite(seed=7, noise_frac=0.01)
        t = tank()
        env = Environment(air_temp=24.0, humidity=60.0)
        for _ in range(500):
            raw = suite.read(t, env)
            assert abs(raw.ph_volts - 2.0) <= 0.01 * VOLTS_FULL_SCALE + 1e-12
            assert abs(raw.water_temp - t.water_temp) <= 0.5 + 1e-12
            assert abs(raw.humidity - 60.0) <= 1.0 + 1e-12

    def test_stuck_fault_freezes_channel(self):
        suite = SensorSuite(seed=3, noise_frac=0.0)
        suite.stick("ph", 6.9, now=0.0, duration=10.0)
        t = tank(ph=7.5)
        reading = suite.read(t, Environment(), now=5.0)
        assert reading.to_engineering()["ph"] == pytest.approx(6.9, abs=1e-9)
        reading = suite.read(t, Environment(), now=11.0)  # fault expired
        assert reading.to_engineering()["ph"] == pytest.approx(7.5, abs=1e-9)

    def test_drift_fault_ramps(self):
        suite = SensorSuite(seed=3, noise_frac=0.0)
        suite.drift("do", rate=0.1, now=0.0, duration=100.0)
        t = tank(dissolved_oxygen=4.0)
        reading = suite.read(t, Environment(), now=10.0)
        assert reading.to_engineering()["do"] == pytest.approx(5.0, abs=1e-9)

    def test_unknown_channel_rejected(self):
        with pytest.raises(ValueError):
            SensorSuite().stick("salinity", 1.0, 0.0, 1.0)
