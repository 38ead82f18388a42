"""Command-line front door.

Subcommands:
  run    simulate one scenario, print the report, optionally write the trace
         (and a figure of the observed values)
  check  parse and validate a config without running it
  sweep  run every .cfg in a directory and print one summary line each

Exit codes for run: 0 = reached quiescence with no alerts, 2 = alerts were
raised, 3 = the run deadlocked, 1 = configuration or internal error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .report import render_report, save_figure
from .scenario import (
    ConfigParseError,
    ScenarioConfig,
    build_scenario,
    parse_config,
    resolve_config_text,
)
from .trace import render_trace


def _load_config(path: str) -> ScenarioConfig:
    text = resolve_config_text(path)
    return parse_config(text)


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    system = cfg.system
    if args.seed is not None:
        system = replace(system, seed=args.seed)
    if args.max_events is not None:
        system = replace(system, max_events=args.max_events)
    cfg = replace(cfg, system=system)
    if args.trace is not None:
        cfg = replace(cfg, trace_path=args.trace)
    return cfg


def exit_code_for(report) -> int:
    if report.deadlocked:
        return 3
    if report.monitor_alerts:
        return 2
    return 0


def _cmd_run(args) -> int:
    try:
        cfg = _load_config(args.config)
    except FileNotFoundError:
        print(f"error: no such config: {args.config}", file=sys.stderr)
        return 1
    except ConfigParseError as err:
        for issue in err.issues:
            print(f"error: {issue}", file=sys.stderr)
        return 1
    cfg = _apply_overrides(cfg, args)
    monitor_override = None
    if args.monitor is not None:
        monitor_override = args.monitor == "on"
    try:
        system = build_scenario(cfg, monitor_override=monitor_override)
        report = system.run()
        if cfg.trace_path:
            with open(cfg.trace_path, "w", encoding="utf-8") as handle:
                handle.write(render_trace(report.records))
        sys.stdout.write(render_report(cfg, report))
        if args.plot:
            save_figure(cfg, report, args.plot)
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return exit_code_for(report)


def _cmd_check(args) -> int:
    try:
        cfg = _load_config(args.config)
    except FileNotFoundError:
        print(f"error: no such config: {args.config}", file=sys.stderr)
        return 1
    except ConfigParseError as err:
        for issue in err.issues:
            print(f"error: {issue}", file=sys.stderr)
        return 1
    attack = cfg.attack.kind if cfg.attack else "none"
    print(
        f"ok: {cfg.system.num_cores} cores "
        f"({cfg.system.num_chiplets}x{cfg.system.cores_per_chiplet}), "
        f"{cfg.system.num_mcs} mcs, {len(cfg.workloads)} workloads, "
        f"attack={attack}, monitor={'on' if cfg.monitor.enabled else 'off'}"
    )
    return 0


def _cmd_sweep(args) -> int:
    if not os.path.isdir(args.dir):
        print(f"error: no such directory: {args.dir}", file=sys.stderr)
        return 1
    names = sorted(n for n in os.listdir(args.dir) if n.endswith(".cfg"))
    if not names:
        print(f"error: no .cfg files in {args.dir}", file=sys.stderr)
        return 1
    failed = False
    for name in names:
        path = os.path.join(args.dir, name)
        try:
            cfg = parse_config(resolve_config_text(path))
            report = build_scenario(cfg).run()
        except (ConfigParseError, OSError) as err:
            print(f"{name}: error: {err}")
            failed = True
            continue
        print(
            f"{name}: exit={exit_code_for(report)} "
            f"cycles={report.cycles_elapsed} "
            f"messages={report.messages_delivered} "
            f"alerts={len(report.monitor_alerts)} "
            f"deadlock={'yes' if report.deadlocked else 'no'}"
        )
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cohsim",
        description="Coherence-protocol simulator with Trojan attack scenarios",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario")
    p_run.add_argument("--config", required=True,
                       help="config path or shipped demo name")
    p_run.add_argument("--trace", help="write the event trace to this file")
    p_run.add_argument("--seed", type=int, help="override [system] seed")
    p_run.add_argument("--max-events", type=int, dest="max_events",
                       help="override [system] max_events")
    p_run.add_argument("--monitor", choices=("on", "off"),
                       help="force the monitor on or off")
    p_run.add_argument("--plot", help="save observed-value bar charts to this image")
    p_run.set_defaults(func=_cmd_run)

    p_check = sub.add_parser("check", help="validate a config without running")
    p_check.add_argument("--config", required=True)
    p_check.set_defaults(func=_cmd_check)

    p_sweep = sub.add_parser("sweep", help="run every .cfg in a directory")
    p_sweep.add_argument("--dir", required=True)
    p_sweep.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
