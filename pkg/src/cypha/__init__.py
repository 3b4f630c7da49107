"""CyPhA testbed: a cyber-physical aquaponics system in software.

A five-stage water loop simulated in discrete time, per-stage edge agents,
an MQTT-subset pub/sub bus, an integrity-enforcing gateway, a Moore-machine
controller and an append-only telemetry store, all driven by one virtual
clock for accelerated, deterministic runs.
"""

from .broker import Broker, Message
from .client import BusClient
from .clock import Scheduler, VirtualClock
from .controller import (CirculationSupervisor, Controller, ControllerConfig,
                         FsmState, InputSymbol, classify, fsm_step, merge_manual,
                         parse_telemetry)
from .datastore import DataStore, LogRow, import_csv
from .edge import (ActuatorCommand, AlertState, AlertThresholds, SensorRecord,
                   StageAgent, update_alert)
from .gateway import Envelope, Gateway, IntegrityError, KeyTable, seal, verify
from .plant import (Environment, PumpKind, PumpSpec, SimConfig, Stage, TankState,
                    WaterLoop, nitrify, supply_to_stage1, transfer)
from .runner import ReplayReport, RunResult, ScenarioRun, replay, run_scenario
from .scenario import Scenario
from .sensors import RawReading, SensorSuite, voltage_to_ph, ph_to_voltage

__version__ = "0.1.0"

__all__ = [
    "Broker", "Message", "BusClient", "Scheduler", "VirtualClock",
    "CirculationSupervisor", "Controller", "ControllerConfig", "FsmState",
    "InputSymbol", "classify", "fsm_step", "merge_manual", "parse_telemetry",
    "DataStore", "LogRow", "import_csv",
    "ActuatorCommand", "AlertState", "AlertThresholds", "SensorRecord",
    "StageAgent", "update_alert",
    "Envelope", "Gateway", "IntegrityError", "KeyTable", "seal", "verify",
    "Environment", "PumpKind", "PumpSpec", "SimConfig", "Stage", "TankState",
    "WaterLoop", "nitrify", "supply_to_stage1", "transfer",
    "ReplayReport", "RunResult", "ScenarioRun", "replay", "run_scenario",
    "Scenario", "RawReading", "SensorSuite", "voltage_to_ph", "ph_to_voltage",
    "__version__",
]
