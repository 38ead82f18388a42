"""Shared helpers for the test suite."""

from __future__ import annotations

from cohsim.scenario import build_scenario, parse_config, read_builtin_config


def load_builtin(name: str):
    return parse_config(read_builtin_config(name))


def run_builtin(name: str, monitor_override=None, **system_kwargs):
    """Parse a shipped config, run it, return (cfg, report)."""
    cfg = load_builtin(name)
    system = build_scenario(cfg, monitor_override=monitor_override, **system_kwargs)
    return cfg, system.run()


def msg_records(report):
    return [r for r in report.records if r.kind == "MSG"]


def cpu_records(report, core_name: str | None = None):
    out = [r for r in report.records if r.kind == "CPU"]
    if core_name is not None:
        out = [r for r in out if r.get("core") == core_name]
    return out
