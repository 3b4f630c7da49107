"""Scenario execution: wire every module together under one virtual clock.

The orchestrator owns the only clock. Each simulated second it applies due
scenario events, advances the plant, fires scheduled work (sampling,
circulation) and pumps bus timers. Identical (scenario, seed) pairs give
byte-identical outputs; nothing in the stack reads wall time.
"""

from __future__ import annotations

import hashlib
import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

from .broker import Broker
from .clock import Scheduler, VirtualClock
from .client import BusClient
from .controller import (CirculationSupervisor, Controller, ControllerConfig,
                         classify, NEXT_STATE, OUTPUT)
from .datastore import DataStore, LogRow, import_csv
from .edge import (ActuatorCommand, AlertThresholds, SensorRecord, StageAgent,
                   SAMPLE_PERIOD)
from .gateway import Gateway, KeyTable, seal
from .plant import Stage, WaterLoop
from .scenario import Event, Scenario
from . import topics


@dataclass
class RunResult:
    out_dir: Path | None
    csv_path: Path | None
    rows: list[LogRow]
    summary: dict
    events_logged: list[str]


class ScenarioRun:
    """One fully-wired testbed instance; step it or run it to completion."""

    def __init__(self, scenario: Scenario, out_dir: str | Path | None = None):
        self.scenario = scenario
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

        self.clock = VirtualClock(epoch=scenario.start_epoch)
        self.scheduler = Scheduler(self.clock)
        seeds = random.Random(scenario.seed)
        agent_seeds = {st: seeds.randrange(2**31) for st in Stage}
        self.loss_seed = seeds.randrange(2**31)

        initial_volumes = {st: ov["volume"] for st, ov in scenario.initial_tanks.items()
                           if "volume" in ov}
        self.plant = WaterLoop(scenario.sim, initial_volumes or None)
        for st, ov in scenario.initial_tanks.items():
            tank = self.plant.tanks[st]
            for name, value in ov.items():
                if name == "volume":
                    continue
                setattr(tank, {"do": "dissolved_oxygen"}.get(name, name), value)

        self.keys = KeyTable.default()
        self.stage_bus = Broker()
        self.ctrl_bus = Broker()

        gw_stage = BusClient(self.stage_bus, "gateway-stage")
        gw_ctrl = BusClient(self.ctrl_bus, "gateway-ctrl")
        gw_stage.connect()
        gw_ctrl.connect()
        self.gateway = Gateway(self.keys, gw_stage, gw_ctrl)
        self.gateway.start()

        cfg = scenario.control
        thresholds = AlertThresholds(ph=cfg.ph_permissible, do=cfg.do_permissible,
                                     tds=cfg.tds_permissible,
                                     water_temp=cfg.water_temp_permissible)
        self.agents: dict[Stage, StageAgent] = {}
        for st in Stage:
            client = BusClient(self.stage_bus, f"edge-{st.value.lower()}")
            client.connect()
            self.agents[st] = StageAgent(
                st, self.plant, client, self.keys, seed=agent_seeds[st],
                thresholds=thresholds, noise_frac=scenario.sensor_noise_frac,
                manual_expiry=cfg.manual_expiry, wp_min_on=cfg.makeup_min_on)

        self.store = DataStore(self.out_dir if self.out_dir else None)
        ctrl_client = BusClient(self.ctrl_bus, "controller")
        ctrl_client.connect()
        self.controller = Controller(cfg, self.keys, ctrl_client, self.store)
        self.controller.start()

        self.hmi_client = BusClient(self.ctrl_bus, "hmi")
        self.hmi_client.connect()

        self.supervisor = CirculationSupervisor(cfg)
        self.event_log: list[str] = []
        self._pending_events = list(scenario.events)
        self._bus_clients = [gw_stage, gw_ctrl, ctrl_client, self.hmi_client] \
            + [a.client for a in self.agents.values()]
        self._fault_timers: list[tuple[float, str, dict]] = []

        for st in Stage:
            agent = self.agents[st]
            self.scheduler.call_every(
                SAMPLE_PERIOD,
                lambda a=agent: a.sample_and_publish(self.clock.now, self.clock.unix()),
                first=SAMPLE_PERIOD)
        self.scheduler.call_every(cfg.circulation_period, self._circulation_tick,
                                  first=cfg.circulation_period)

    # -- circulation policy ---------------------------------------------------

    def _circulation_tick(self) -> None:
        cfg = self.scenario.control
        decision = self.supervisor.decide(self.controller.last_record)
        self._log_event(f"circulation {decision.kind} (recirc_count={decision.recirc_count})")
        if decision.kind == "reject":
            self.plant.reject(cfg.reject_liters)
            self.plant.intake(cfg.reject_liters)
            self._log_event(
                f"water rejected; fresh intake of {cfg.reject_liters:g} L signalled")
            return
        if decision.kind == "recirc":
            self.plant.set_pump("s1_to_s5", True)
        else:
            self.plant.set_pump("s3_to_s4", True)
            self.plant.set_pump("s4_to_s5", True)
            self.agents[Stage.S2].set_circulation(True)
        self.scheduler.call_later(cfg.circulation_duration, self._circulation_end)

    def _circulation_end(self) -> None:
        self.plant.set_pump("s1_to_s5", False)
        self.plant.set_pump("s3_to_s4", False)
        self.plant.set_pump("s4_to_s5", False)
        self.agents[Stage.S2].set_circulation(False)

    # -- scenario events ---------------------------------------------------

    def _apply_event(self, e: Event) -> None:
        now = self.clock.now
        if e.action == "manual":
            if "release" in e.args:
                cmd = ActuatorCommand(0, 0, "manual", self.clock.unix(), release=True)
            else:
                cmd = ActuatorCommand(int(e.arg_float("wp")), int(e.arg_float("ap")),
                                      "manual", self.clock.unix())
            topic = topics.stage_topic("S2", "manual")
            env = seal(self.keys, topic, cmd.to_json(), "hmi")
            self.hmi_client.publish(topic, env.to_bytes(), qos=1)
            self._log_event(f"manual command wp={cmd.wp} ap={cmd.ap}"
                            + (" (release)" if cmd.release else ""))
        elif e.action == "fault":
            self._apply_fault(e, now)
        elif e.action == "set":
            stage = Stage(e.arg_str("stage").upper())
            tank = self.plant.tanks[stage]
            for name in ("ph", "do", "tds", "ammonia", "volume"):
                if name in e.args:
                    attr = {"do": "dissolved_oxygen"}.get(name, name)
                    setattr(tank, attr, e.arg_float(name))
            self._log_event(f"set {stage.value} state")
        elif e.action == "intake":
            self.plant.intake(e.arg_float("liters"))
        elif e.action == "reject":
            self.plant.reject(e.arg_float("liters"))
        elif e.action == "pump":
            self.plant.set_pump(e.arg_str("name"), e.arg_float("on") != 0.0)
            self._log_event(f"pump {e.arg_str('name')} -> {e.arg_float('on') != 0.0}")

    def _apply_fault(self, e: Event, now: float) -> None:
        kind = e.args["kind"]
        if kind in ("sensor_stuck", "sensor_drift"):
            stage = Stage(e.arg_str("stage").upper())
            sensors = self.agents[stage].sensors
            channel = e.arg_str("channel")
            duration = e.arg_float("duration")
            if kind == "sensor_stuck":
                tank = self.plant.tanks[stage]
                current = {"ph": tank.ph, "do": tank.dissolved_oxygen, "tds": tank.tds,
                           "water_temp": tank.water_temp,
                           "air_temp": self.plant.env.air_temp,
                           "humidity": self.plant.env.humidity}[channel]
                sensors.stick(channel, e.arg_float("value", current), now, duration)
            else:
                sensors.drift(channel, e.arg_float("rate"), now, duration)
            self._log_event(f"fault {kind} {stage.value}.{channel} for {duration:g} s")
        elif kind == "pump_failure":
            pump = e.arg_str("pump")
            duration = e.arg_float("duration")
            self.plant.failed_pumps.add(pump)
            self._fault_timers.append((now + duration, "pump_restore", {"pump": pump}))
            self._log_event(f"fault pump_failure {pump} for {duration:g} s")
        elif kind == "bus_loss":
            prob = e.arg_float("prob")
            window = e.arg_float("window")
            stage_arg = e.args.get("stage")
            agents = ([self.agents[Stage(stage_arg.upper())]] if stage_arg
                      else list(self.agents.values()))
            for i, agent in enumerate(agents):
                agent.client.loss.configure(prob, self.loss_seed + i)
            self._fault_timers.append((now + window, "bus_restore",
                                       {"stages": [a.stage for a in agents]}))
            self._log_event(f"fault bus_loss prob={prob:g} for {window:g} s")

    def _expire_faults(self, now: float) -> None:
        remaining = []
        for due, kind, args in self._fault_timers:
            if now < due:
                remaining.append((due, kind, args))
                continue
            if kind == "pump_restore":
                self.plant.failed_pumps.discard(args["pump"])
                self._log_event(f"pump {args['pump']} restored")
            elif kind == "bus_restore":
                for st in args["stages"]:
                    self.agents[st].client.loss.configure(0.0)
                self._log_event("bus loss window ended")
        self._fault_timers = remaining

    def _log_event(self, text: str) -> None:
        self.event_log.append(f"t={self.clock.now:.3f} {text}")

    # -- main loop ---------------------------------------------------------

    def run(self, realtime: bool = False) -> RunResult:
        scn = self.scenario
        dt = scn.sim.dt
        n_ticks = int(round(scn.duration / dt))
        wall_start = time.monotonic()
        plant_step = self.plant.step
        run_until = self.scheduler.run_until
        stage_time = self.stage_bus.process_time
        ctrl_time = self.ctrl_bus.process_time
        clients = self._bus_clients
        plant = self.plant
        for k in range(1, n_ticks + 1):
            t = k * dt
            while self._pending_events and self._pending_events[0].t <= t:
                self._apply_event(self._pending_events.pop(0))
            if self._fault_timers:
                self._expire_faults(t)
            plant_step(dt)
            run_until(t)
            stage_time(t)
            ctrl_time(t)
            for client in clients:
                client.process_time(t)
            if plant.events:
                for ev in plant.drain_events():
                    self.event_log.append(f"t={ev.t:.3f} {ev.kind}: {ev.detail}")
            if realtime:
                target = wall_start + t / scn.speed
                delay = target - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
        return self._finish(time.monotonic() - wall_start)

    def _finish(self, wall_elapsed: float) -> RunResult:
        rows = self.store.rows
        summary = self._summarize(rows, wall_elapsed)
        csv_path = None
        if self.out_dir is not None:
            csv_path = self.store.export_csv(self.out_dir / "data.csv")
            summary["csv_bytes"] = csv_path.stat().st_size
            summary["csv_sha256"] = hashlib.sha256(csv_path.read_bytes()).hexdigest()
            (self.out_dir / "events.log").write_text(
                "".join(line + "\n" for line in self.event_log))
            (self.out_dir / "summary.json").write_text(
                json.dumps(summary, indent=2, sort_keys=True) + "\n")
        self.store.close()
        return RunResult(self.out_dir, csv_path, rows, summary, self.event_log)

    def _summarize(self, rows: list[LogRow], wall_elapsed: float) -> dict:
        summary: dict = {
            "rows": len(rows),
            "duration_s": self.scenario.duration,
            "wall_seconds": round(wall_elapsed, 3),
            "seed": self.scenario.seed,
        }
        params = ("ph", "tds", "do", "water_temp", "air_temp", "humidity")
        for name in params:
            values = [getattr(r, name) for r in rows]
            if values:
                summary[name] = {"min": min(values), "max": max(values),
                                 "mean": sum(values) / len(values)}
        if rows:
            summary["wp_duty"] = sum(r.wp for r in rows) / len(rows)
            summary["ap_duty"] = sum(r.ap for r in rows) / len(rows)
        summary["alert_transitions"] = {
            st.value: self.agents[st].alert_transitions for st in Stage}
        summary["gateway"] = dict(self.gateway.counters)
        summary["controller"] = dict(self.controller.counters)
        summary["plant"] = {
            "total_volume": self.plant.total_volume(),
            "intake_total": self.plant.intake_total,
            "reject_total": self.plant.reject_total,
        }
        summary["circulation"] = {
            "cycles": len(self.supervisor.decisions),
            "recirc": sum(1 for d in self.supervisor.decisions if d.kind == "recirc"),
            "rejects": sum(1 for d in self.supervisor.decisions if d.kind == "reject"),
        }
        return summary


def run_scenario(scenario: Scenario, out_dir: str | Path | None = None,
                 realtime: bool = False) -> RunResult:
    return ScenarioRun(scenario, out_dir).run(realtime=realtime)


# -- replay ---------------------------------------------------------------


@dataclass
class ReplayReport:
    rows: int
    mismatches: list[dict] = field(default_factory=list)
    violations: list[dict] = field(default_factory=list)

    @property
    def mismatch_count(self) -> int:
        return len(self.mismatches)


def replay(csv_path: str | Path, cfg: ControllerConfig | None = None) -> ReplayReport:
    """Re-run classification + FSM over a logged CSV and diff the pump bits.

    Because transitions are symbol-determined, the expected output for a
    row depends only on that row's readings, so a decimated log replays
    exactly. Rows written under an active manual override will differ; a
    clean automatic run reports zero mismatches.
    """
    cfg = cfg or ControllerConfig()
    rows = import_csv(csv_path)
    report = ReplayReport(rows=len(rows))
    ranges = {"ph": cfg.ph_permissible, "do": cfg.do_permissible,
              "tds": cfg.tds_permissible, "water_temp": cfg.water_temp_permissible}
    for i, row in enumerate(rows):
        rec = SensorRecord(ts=row.timestamp, stage="S2", ph=row.ph, tds=row.tds,
                           do=row.do, water_temp=row.water_temp,
                           air_temp=row.air_temp, humidity=row.humidity,
                           wp=row.wp, ap=row.ap)
        symbol = classify(rec, cfg)
        expected = OUTPUT[NEXT_STATE[symbol]]
        if (row.wp, row.ap) != expected:
            report.mismatches.append({
                "row": i, "timestamp": row.timestamp,
                "logged": [row.wp, row.ap], "expected": list(expected),
            })
        for name, (lo, hi) in ranges.items():
            value = getattr(row, name)
            if not lo <= value <= hi:
                report.violations.append(
                    {"row": i, "timestamp": row.timestamp, "param": name,
                     "value": value})
    return report
