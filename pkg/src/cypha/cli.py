"""Command-line entry point.

    cypha run    --scenario FILE [--speed K] [--seed N] --out DIR [--realtime]
    cypha replay --log data.csv [--scenario FILE]
    cypha serve  [--port 1883] [--ws-port 8080] [--scenario FILE] [--speed K]
"""

from __future__ import annotations

import argparse
import sys

from .configio import ConfigError
from .controller import ControllerConfig
from .runner import replay, run_scenario
from .scenario import Scenario


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cypha", description="Cyber-physical aquaponics testbed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario at accelerated virtual time")
    p_run.add_argument("--scenario", required=True, help="scenario file")
    p_run.add_argument("--speed", type=float, default=None,
                       help="override the scenario's acceleration factor")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario's RNG seed")
    p_run.add_argument("--out", default="cypha-out", help="output directory")
    p_run.add_argument("--realtime", action="store_true",
                       help="pace simulated time against the wall clock (sim = wall * speed)")

    p_replay = sub.add_parser("replay", help="recompute actuator decisions from a CSV log")
    p_replay.add_argument("--log", required=True, help="CSV log produced by 'cypha run'")
    p_replay.add_argument("--scenario", default=None,
                          help="scenario/config file providing the permissible ranges")

    p_serve = sub.add_parser("serve", help="live mode: MQTT port + HMI WebSocket bridge")
    p_serve.add_argument("--port", type=int, default=1883, help="MQTT TCP port")
    p_serve.add_argument("--ws-port", type=int, default=8080, help="HMI WebSocket/HTTP port")
    p_serve.add_argument("--scenario", default=None, help="scenario file (default: demo loop)")
    p_serve.add_argument("--speed", type=float, default=None,
                         help="simulated seconds per wall second")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "replay":
            return _cmd_replay(args)
        if args.command == "serve":
            return _cmd_serve(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def _load_scenario(path: str, speed: float | None = None,
                   seed: int | None = None) -> Scenario:
    scenario = Scenario.from_file(path)
    if speed is not None:
        scenario.speed = speed
    if seed is not None:
        scenario.seed = seed
        scenario.sim.rng_seed = seed
    return scenario


def _cmd_run(args) -> int:
    scenario = _load_scenario(args.scenario, args.speed, args.seed)
    result = run_scenario(scenario, out_dir=args.out, realtime=args.realtime)
    s = result.summary
    print(f"rows logged: {s['rows']}")
    if "csv_bytes" in s:
        print(f"csv: {result.csv_path} ({s['csv_bytes']} bytes)")
        print(f"csv sha256: {s['csv_sha256']}")
    print(f"wall time: {s['wall_seconds']} s for {s['duration_s']:g} simulated s")
    if "wp_duty" in s:
        print(f"duty cycles: wp={s['wp_duty']:.3f} ap={s['ap_duty']:.3f}")
    print(f"gateway: {s['gateway']}")
    return 0


def _cmd_replay(args) -> int:
    cfg = None
    if args.scenario:
        cfg = _load_scenario(args.scenario).control
    else:
        cfg = ControllerConfig()
    report = replay(args.log, cfg)
    print(f"rows: {report.rows}")
    print(f"actuator mismatches: {report.mismatch_count}")
    for m in report.mismatches[:10]:
        print(f"  row {m['row']} t={m['timestamp']:.3f}: "
              f"logged {m['logged']} expected {m['expected']}")
    print(f"safety-range violations: {len(report.violations)}")
    for v in report.violations[:10]:
        print(f"  row {v['row']} t={v['timestamp']:.3f}: {v['param']}={v['value']:.3f}")
    return 0 if report.mismatch_count == 0 else 1


def _cmd_serve(args) -> int:
    from .serve import serve  # deferred: pulls in the network front ends

    scenario = _load_scenario(args.scenario, args.speed) if args.scenario else None
    if scenario is not None and args.speed is not None:
        scenario.speed = args.speed
    serve(port=args.port, ws_port=args.ws_port, scenario=scenario)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
