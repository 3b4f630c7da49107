"""Controller tests: parsing, classification, the FSM, merging, logging."""

import itertools
import json
import random

import pytest

from cypha.broker import Broker
from cypha.client import BusClient
from cypha.controller import (
    NEXT_STATE, OUTPUT, START_STATE, CirculationSupervisor, Controller,
    ControllerConfig, FsmState, InputSymbol, TelemetryError, classify,
    fsm_step, merge_manual, parse_telemetry,
)
from cypha.datastore import DataStore
from cypha.edge import ActuatorCommand, SensorRecord
from cypha.gateway import Envelope, KeyTable, seal, verify


def record(**kw):
    defaults = dict(ts=1000.0, stage="S2", ph=7.0, tds=400.0, do=4.0,
                    water_temp=22.0, air_temp=24.0, humidity=60.0, wp=0, ap=0)
    defaults.update(kw)
    return SensorRecord(**defaults)


def payload(**kw):
    return record(**kw).to_json()


class TestParseTelemetry:
    def test_valid_payload(self):
        rec = parse_telemetry(payload())
        assert rec.ph == 7.0 and rec.stage == "S2"

    def test_ph_beyond_scale_rejected(self):
        with pytest.raises(TelemetryError) as err:
            parse_telemetry(payload(ph=15.2))
        assert err.value.kind == "OutOfPhysicalRange"

    def test_missing_field(self):
        obj = json.loads(payload())
        del obj["do"]
        with pytest.raises(TelemetryError) as err:
            parse_telemetry(json.dumps(obj).encode())
        assert err.value.kind == "MissingField"

    def test_malformed_json(self):
        with pytest.raises(TelemetryError) as err:
            parse_telemetry(b"{oops")
        assert err.value.kind == "MalformedJson"

    def test_non_numeric_field(self):
        obj = json.loads(payload())
        obj["ph"] = "acidic"
        with pytest.raises(TelemetryError) as err:
            parse_telemetry(json.dumps(obj).encode())
        assert err.value.kind == "MalformedJson"

    def test_pump_bit_out_of_domain(self):
        obj = json.loads(payload())
        obj["wp"] = 3
        with pytest.raises(TelemetryError) as err:
            parse_telemetry(json.dumps(obj).encode())
        assert err.value.kind == "OutOfPhysicalRange"


class TestClassify:
    CFG = ControllerConfig()

    def test_both_in_range(self):
        assert classify(record(ph=7.0, do=4.0), self.CFG) is InputSymbol.A

    def test_ph_out_do_in(self):
        assert classify(record(ph=6.0, do=4.0), self.CFG) is InputSymbol.C

    def test_both_out(self):
        assert classify(record(ph=6.0, do=2.0), self.CFG) is InputSymbol.D

    def test_ph_in_do_out(self):
        assert classify(record(ph=7.0, do=2.0), self.CFG) is InputSymbol.B

    def test_closed_interval_boundaries(self):
        assert classify(record(ph=6.5, do=3.5), self.CFG) is InputSymbol.A
        assert classify(record(ph=8.5, do=5.0), self.CFG) is InputSymbol.A

    def test_agrees_with_membership_oracle_bulk(self):
        rng = random.Random(8)
        cfg = self.CFG
        for _ in range(5000):
            ph = rng.uniform(0.0, 14.0)
            do = rng.uniform(0.0, 12.0)
            rec = record(ph=ph, do=do)
            ph_in = cfg.ph_permissible[0] <= ph <= cfg.ph_permissible[1]
            do_in = cfg.do_permissible[0] <= do <= cfg.do_permissible[1]
            expected = {(True, True): InputSymbol.A, (True, False): InputSymbol.B,
                        (False, True): InputSymbol.C,
                        (False, False): InputSymbol.D}[(ph_in, do_in)]
            assert classify(rec, cfg) is expected

    def test_config_driven_reclassification(self):
        rec = record(ph=6.2, do=4.0)
        default_cfg = ControllerConfig()
        wide_cfg = ControllerConfig(ph_permissible=(6.0, 8.5))
        assert classify(rec, default_cfg) is InputSymbol.C
        assert classify(rec, wide_cfg) is InputSymbol.A


# The expected machine, written out longhand as an independent oracle:
# from any state, symbol x moves to the state dedicated to x, and the
# output belongs to the state that was entered.
EXPECTED_NEXT = {"a": "q1", "b": "q2", "c": "q3", "d": "q4"}
EXPECTED_OUT = {"q1": (0, 0), "q2": (0, 1), "q3": (1, 0), "q4": (1, 1)}


class TestFsm:
    def test_start_state(self):
        assert START_STATE is FsmState.Q1

    def test_exhaustive_sixteen_transitions(self):
        cases = list(itertools.product(FsmState, InputSymbol))
        assert len(cases) == 16
        mismatches = []
        for state, symbol in cases:
            nxt, out = fsm_step(state, symbol)
            if nxt.value != EXPECTED_NEXT[symbol.value]:
                mismatches.append((state, symbol, nxt))
            if out != EXPECTED_OUT[nxt.value]:
                mismatches.append((state, symbol, out))
        assert mismatches == []

    def test_q1_self_loop_on_a(self):
        assert fsm_step(FsmState.Q1, InputSymbol.A) == (FsmState.Q1, (0, 0))

    def test_q1_c_to_q3_water_pump_on(self):
        assert fsm_step(FsmState.Q1, InputSymbol.C) == (FsmState.Q3, (1, 0))

    def test_q4_a_back_to_q1(self):
        assert fsm_step(FsmState.Q4, InputSymbol.A) == (FsmState.Q1, (0, 0))

    def test_moore_property_output_depends_only_on_state(self):
        for state, symbol in itertools.product(FsmState, InputSymbol):
            nxt, out = fsm_step(state, symbol)
            assert out == OUTPUT[nxt]

    def test_transitions_symbol_determined(self):
        for symbol in InputSymbol:
            targets = {fsm_step(s, symbol)[0] for s in FsmState}
            assert len(targets) == 1

    def test_actuation_semantics(self):
        # wp=1 iff pH out of range; ap=1 iff DO out of range.
        cfg = ControllerConfig()
        rng = random.Random(13)
        state = START_STATE
        for _ in range(2000):
            rec = record(ph=rng.uniform(0, 14), do=rng.uniform(0, 12))
            state, (wp, ap) = fsm_step(state, classify(rec, cfg))
            ph_out = not cfg.ph_permissible[0] <= rec.ph <= cfg.ph_permissible[1]
            do_out = not cfg.do_permissible[0] <= rec.do <= cfg.do_permissible[1]
            assert wp == int(ph_out)
            assert ap == int(do_out)


class TestMergeManual:
    def test_manual_overrides(self):
        manual = ActuatorCommand(1, 1, "manual", 0.0)
        assert merge_manual((0, 0), manual, now=10.0, manual_until=600.0) == (1, 1)

    def test_no_manual_passthrough(self):
        assert merge_manual((1, 0), None, now=0.0) == (1, 0)

    def test_expired_manual_passthrough(self):
        manual = ActuatorCommand(1, 1, "manual", 0.0)
        assert merge_manual((0, 1), manual, now=700.0, manual_until=600.0) == (0, 1)

    def test_manual_supremacy_all_combinations(self):
        for auto in itertools.product((0, 1), repeat=2):
            for bits in itertools.product((0, 1), repeat=2):
                manual = ActuatorCommand(bits[0], bits[1], "manual", 0.0)
                assert merge_manual(auto, manual, 0.0, 600.0) == bits


def make_controller(keys=None, cfg=None):
    keys = keys or KeyTable.default()
    broker = Broker()
    client = BusClient(broker, "controller")
    client.connect()
    store = DataStore()
    ctrl = Controller(cfg or ControllerConfig(), keys, client, store)
    ctrl.start()
    return broker, keys, ctrl, store


class TestControllerLoop:
    def send(self, broker, keys, rec):
        edge = BusClient(broker, "edge-feed")
        edge.connect()
        env = seal(keys, "cypha/stage2/sensing", rec.to_json(), "stage2")
        edge.publish("cypha/stage2/sensing", env.to_bytes())

    def test_symbol_stream_publishes_expected_outputs(self):
        broker, keys, ctrl, _ = make_controller()
        outs = []
        watcher = BusClient(broker, "watch")
        watcher.connect()

        def on_act(m):
            cmd = ActuatorCommand.from_json(verify(keys, Envelope.from_bytes(m.payload)))
            outs.append((cmd.wp, cmd.ap))

        watcher.subscribe("cypha/stage2/actuating", on_act, qos=1)
        # Stream a, a, c: composition of classify+fsm gives 00, 00, 10.
        self.send(broker, keys, record(ts=1000.0, ph=7.0, do=4.0))
        self.send(broker, keys, record(ts=1002.0, ph=7.0, do=4.0))
        self.send(broker, keys, record(ts=1004.0, ph=6.0, do=4.0))
        assert outs == [(0, 0), (0, 0), (1, 0)]
        assert ctrl.state is FsmState.Q3

    def test_state_topic_reports_fsm_and_bits(self):
        broker, keys, ctrl, _ = make_controller()
        states = []
        watcher = BusClient(broker, "watch")
        watcher.connect()

        def on_state(m):
            states.append(json.loads(verify(keys, Envelope.from_bytes(m.payload))))

        watcher.subscribe("cypha/controller/state", on_state)
        self.send(broker, keys, record(ph=6.0, do=2.0))
        assert states == [{"fsm": "q4", "wp": 1, "ap": 1}]

    def test_integrity_reject_counted_not_processed(self):
        broker, keys, ctrl, _ = make_controller()
        edge = BusClient(broker, "edge-feed")
        edge.connect()
        env = seal(keys, "cypha/stage2/sensing", payload(), "stage2")
        raw = bytearray(env.to_bytes())
        raw[-10] ^= 0x40
        edge.publish("cypha/stage2/sensing", bytes(raw))
        assert ctrl.counters["integrity_reject"] == 1
        assert ctrl.counters["records"] == 0

    def test_parse_errors_counted_separately(self):
        broker, keys, ctrl, _ = make_controller()
        edge = BusClient(broker, "edge-feed")
        edge.connect()
        for bad in (b"{oops", payload(ph=15.2)):
            env = seal(keys, "cypha/stage2/sensing", bad, "stage2")
            edge.publish("cypha/stage2/sensing", env.to_bytes())
        obj = json.loads(payload())
        del obj["humidity"]
        env = seal(keys, "cypha/stage2/sensing", json.dumps(obj).encode(), "stage2")
        edge.publish("cypha/stage2/sensing", env.to_bytes())
        assert ctrl.counters["MalformedJson"] == 1
        assert ctrl.counters["OutOfPhysicalRange"] == 1
        assert ctrl.counters["MissingField"] == 1

    def test_manual_latch_via_bus(self):
        broker, keys, ctrl, _ = make_controller()
        hmi = BusClient(broker, "hmi")
        hmi.connect()
        cmd = ActuatorCommand(1, 1, "manual", ts=1000.0)
        env = seal(keys, "cypha/stage2/manual", cmd.to_json(), "hmi")
        hmi.publish("cypha/stage2/manual", env.to_bytes(), qos=1)
        out = ctrl.handle_record(record(ts=1001.0, ph=7.0, do=4.0))  # auto says 00
        assert out == (1, 1)
        # After expiry the machine output resumes.
        out = ctrl.handle_record(record(ts=1000.0 + 601.0 + 1.0, ph=7.0, do=4.0))
        assert out == (0, 0)

    def test_log_decimation_interval(self):
        cfg = ControllerConfig(log_interval=8.64)
        broker, keys, ctrl, store = make_controller(cfg=cfg)
        t = 1000.0
        for k in range(500):  # 1000 s of records at 2 s cadence
            ctrl.handle_record(record(ts=t))
            t += 2.0
        # Due times every 8.64 s from the first record: 1 + floor(998/8.64)
        expected = 1 + int((2.0 * 499) // 8.64)
        assert len(store) == expected

    def test_thirty_thousand_rows_at_dataset_cadence(self):
        # 72 h of 2 s records decimated at 8.64 s -> 30,000 rows.
        cfg = ControllerConfig(log_interval=8.64)
        store_count = 0
        t0 = 1_700_000_000.0
        log_count = 0
        next_k = 0
        t = t0
        end = t0 + 259_200.0
        while t <= end:
            due = t0 + next_k * 8.64
            if t + 1e-6 >= due:
                next_k += 1
                store_count += 1
            t += 2.0
        assert abs(store_count - 30_000) <= 1


class TestSupervisor:
    def test_good_quality_resets_counter(self):
        sup = CirculationSupervisor(ControllerConfig())
        bad = record(ph=5.0)
        good = record(ph=7.0)
        assert sup.decide(bad).kind == "recirc"
        assert sup.decide(good).kind == "normal"
        assert sup.recirc_count == 0

    def test_reject_after_three_failed_cycles(self):
        sup = CirculationSupervisor(ControllerConfig(recirc_limit=3))
        bad = record(tds=900.0)
        assert sup.decide(bad).kind == "recirc"
        assert sup.decide(bad).kind == "recirc"
        assert sup.decide(bad).kind == "reject"
        # Counter restarts after rejection.
        assert sup.decide(bad).kind == "recirc"

    def test_no_record_means_normal(self):
        sup = CirculationSupervisor(ControllerConfig())
        assert sup.decide(None).kind == "normal"
