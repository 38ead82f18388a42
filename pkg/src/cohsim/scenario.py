"""Scenario configuration: a flat sectioned key=value file format.

A config starts with a ``format=1`` header, then sections ``[system]``,
``[workload.N]`` (one per bound program), optional ``[attack]`` and
``[monitor]``.  Values are integers (decimal or 0x hex), booleans
(true/false), node tokens (core3, mc1) or hex byte strings, depending on the
key.  Parsing collects every problem with its line number and field name
instead of stopping at the first.

``render_config`` produces the canonical text for a config; parse and render
round-trip exactly.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace
from importlib import resources

from .fabric import System, SystemConfig, build_system
from .monitor import Monitor
from .protocol import NodeId, core, mc
from .trojan import (
    AttackKind,
    Diverting,
    Forging,
    Masquerading,
    Modifying,
    PassiveReading,
    TriggerKind,
    TriggerMode,
)
from .workloads import (
    WorkloadBinding,
    random_workload,
    reader_workload,
    victim_array_workload,
)

FORMAT_HEADER = "format=1"

_SECTION_RE = re.compile(r"^\[([a-z_.0-9]+)\]$")
_NODE_RE = re.compile(r"^(core|mc)(\d+)$")


@dataclass(frozen=True)
class Issue:
    line: int
    field: str
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.field}: {self.message}"


class ConfigParseError(ValueError):
    def __init__(self, issues: list[Issue]):
        super().__init__("; ".join(str(i) for i in issues))
        self.issues = issues


@dataclass(frozen=True)
class WorkloadSpec:
    index: int
    kind: str  # victim_array | random
    core: int
    start: int = 0
    base: int = 0
    n: int = 0
    seed: int = 0
    pool: tuple[int, ...] = ()
    ops: int = 0


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    core: int
    fake_sender: int = 0
    variant: str = ""
    divert_to: str = ""
    target: int = 0
    payload: bytes = b""
    trigger: str = "on_invalidation"
    trigger_n: int = 1
    offset: int = 0


@dataclass(frozen=True)
class MonitorConfig:
    enabled: bool = True
    cpu_visibility: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    system: SystemConfig
    workloads: tuple[WorkloadSpec, ...] = ()
    attack: AttackSpec | None = None
    monitor: MonitorConfig = MonitorConfig()
    trace_path: str | None = None


# --- low-level text handling ---------------------------------------------

def _split_sections(text: str, issues: list[Issue]):
    """Returns list of (section_name, header_line, {key: (value, line)})."""
    sections = []
    current = None
    saw_header = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not saw_header:
            if line == FORMAT_HEADER:
                saw_header = True
                continue
            issues.append(Issue(line_no, "format",
                                f"first line must be '{FORMAT_HEADER}'"))
            saw_header = True  # report once, keep going
        m = _SECTION_RE.match(line)
        if m:
            current = (m.group(1), line_no, {})
            sections.append(current)
            continue
        if "=" not in line:
            issues.append(Issue(line_no, "syntax", "expected key=value"))
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if current is None:
            issues.append(Issue(line_no, key, "key outside any section"))
            continue
        if key in current[2]:
            issues.append(Issue(line_no, key, "duplicate key"))
            continue
        current[2][key] = (value, line_no)
    return sections


class _Block:
    """One parsed section with typed accessors that record issues."""

    def __init__(self, name: str, line: int, pairs: dict, issues: list[Issue]):
        self.name = name
        self.line = line
        self.pairs = dict(pairs)
        self.issues = issues

    def take(self, key: str, default=None, required: bool = False):
        if key in self.pairs:
            value, _ = self.pairs.pop(key)
            return value
        if required:
            self.issues.append(Issue(self.line, key, "missing required key"))
        return default

    def take_int(self, key: str, default=None, required: bool = False,
                 minimum: int | None = None):
        raw = self.take(key, None, required)
        if raw is None:
            return default
        try:
            value = int(raw, 0)
        except ValueError:
            self.issues.append(Issue(self.line, key, f"not an integer: {raw!r}"))
            return default
        if minimum is not None and value < minimum:
            self.issues.append(Issue(self.line, key, f"must be >= {minimum}"))
            return default
        return value

    def take_bool(self, key: str, default=None, required: bool = False):
        raw = self.take(key, None, required)
        if raw is None:
            return default
        if raw in ("true", "1", "yes", "on"):
            return True
        if raw in ("false", "0", "no", "off"):
            return False
        self.issues.append(Issue(self.line, key, f"not a boolean: {raw!r}"))
        return default

    def finish(self):
        for key, (_, line_no) in self.pairs.items():
            self.issues.append(Issue(line_no, key, "unknown key"))


def _parse_node(token: str, block: _Block, key: str) -> str:
    if token.isdigit():
        return f"core{token}"
    if _NODE_RE.match(token):
        return token
    block.issues.append(Issue(block.line, key, f"not a node: {token!r}"))
    return ""


def node_from_token(token: str) -> NodeId:
    m = _NODE_RE.match(token)
    kind, index = m.group(1), int(m.group(2))
    return core(index) if kind == "core" else mc(index)


# --- parsing ---------------------------------------------------------------

def parse_config(text: str) -> ScenarioConfig:
    issues: list[Issue] = []
    sections = _split_sections(text, issues)

    system = SystemConfig()
    monitor = MonitorConfig()
    trace_path = None
    workload_specs: list[WorkloadSpec] = []
    attack: AttackSpec | None = None
    seen_system = False

    for name, line_no, pairs in sections:
        block = _Block(name, line_no, pairs, issues)
        if name == "system":
            seen_system = True
            system = SystemConfig(
                num_chiplets=block.take_int("num_chiplets", 2, minimum=1),
                cores_per_chiplet=block.take_int("cores_per_chiplet", 4, minimum=1),
                num_mcs=block.take_int("num_mcs", 2, minimum=1),
                line_size=block.take_int("line_size", 8, minimum=1),
                latency_intra=block.take_int("latency_intra", 2, minimum=1),
                latency_inter=block.take_int("latency_inter", 10, minimum=1),
                latency_mc=block.take_int("latency_mc", 15, minimum=1),
                nack_retry_delay=block.take_int("nack_retry_delay", 20, minimum=1),
                seed=block.take_int("seed", 0, minimum=0),
                max_events=block.take_int("max_events", 1_000_000, minimum=1),
                stall_window=block.take_int("stall_window", 1000, minimum=1),
            )
            if system.num_mcs & (system.num_mcs - 1) != 0:
                issues.append(Issue(line_no, "num_mcs", "must be a power of two"))
            trace_path = block.take("trace", None)
            block.finish()
        elif name.startswith("workload."):
            suffix = name.split(".", 1)[1]
            if not suffix.isdigit():
                issues.append(Issue(line_no, name, "workload sections are [workload.N]"))
                continue
            workload_specs.append(_parse_workload(int(suffix), block))
        elif name == "attack":
            attack = _parse_attack(block)
        elif name == "monitor":
            monitor = MonitorConfig(
                enabled=block.take_bool("enabled", True),
                cpu_visibility=block.take_bool("cpu_visibility", True),
            )
            block.finish()
        else:
            issues.append(Issue(line_no, name, "unknown section"))

    if not seen_system:
        issues.append(Issue(0, "system", "missing [system] section"))

    cfg = ScenarioConfig(
        system=system,
        workloads=tuple(sorted(workload_specs, key=lambda w: w.index)),
        attack=attack,
        monitor=monitor,
        trace_path=trace_path,
    )
    _cross_validate(cfg, issues)
    if issues:
        raise ConfigParseError(issues)
    return cfg


def _parse_workload(index: int, block: _Block) -> WorkloadSpec:
    kind = block.take("kind", "", required=True)
    spec = WorkloadSpec(
        index=index,
        kind=kind,
        core=block.take_int("core", 0, required=True, minimum=0),
        start=block.take_int("start", 0, minimum=0),
    )
    if kind in ("victim_array", "reader"):
        spec = replace(
            spec,
            base=block.take_int("base", 0, minimum=0),
            n=block.take_int("n", 16, required=True, minimum=1),
        )
    elif kind == "random":
        pool_raw = block.take("pool", "", required=True)
        pool = []
        for part in filter(None, (p.strip() for p in pool_raw.split(","))):
            try:
                pool.append(int(part, 0))
            except ValueError:
                block.issues.append(Issue(block.line, "pool", f"bad address {part!r}"))
        spec = replace(
            spec,
            seed=block.take_int("seed", 0, minimum=0),
            pool=tuple(pool),
            ops=block.take_int("ops", 0, required=True, minimum=0),
        )
    else:
        block.issues.append(Issue(block.line, "kind", f"unknown workload kind {kind!r}"))
    block.finish()
    return spec


def _parse_attack(block: _Block) -> AttackSpec:
    kind = block.take("kind", "", required=True)
    spec = AttackSpec(
        kind=kind,
        core=block.take_int("core", 0, required=True, minimum=0),
    )
    if kind == "masquerading":
        variant = block.take("variant", "response")
        if variant not in ("response", "request"):
            block.issues.append(Issue(block.line, "variant", f"unknown variant {variant!r}"))
        spec = replace(
            spec,
            fake_sender=block.take_int("fake_sender", 0, required=True, minimum=0),
            variant=variant,
        )
    elif kind == "modifying":
        variant = block.take("variant", "rewrite")
        if variant not in ("rewrite", "forward"):
            block.issues.append(Issue(block.line, "variant", f"unknown variant {variant!r}"))
        spec = replace(spec, variant=variant)
    elif kind == "diverting":
        token = block.take("divert_to", "", required=True)
        spec = replace(spec, divert_to=_parse_node(token or "", block, "divert_to"))
    elif kind == "forging":
        payload_raw = block.take("payload", "", required=True)
        payload = b""
        try:
            payload = bytes.fromhex(payload_raw or "")
        except ValueError:
            block.issues.append(Issue(block.line, "payload", f"not hex bytes: {payload_raw!r}"))
        trigger_raw = block.take("trigger", "on_invalidation")
        trigger, trigger_n = trigger_raw, 1
        if trigger_raw.startswith("on_nth:"):
            trigger = "on_nth"
            try:
                trigger_n = int(trigger_raw.split(":", 1)[1])
            except ValueError:
                trigger_n = 0
            if trigger_n < 1:
                block.issues.append(Issue(block.line, "trigger", "on_nth:<n> needs n >= 1"))
                trigger_n = 1
        elif trigger_raw not in ("immediate", "on_invalidation"):
            block.issues.append(Issue(block.line, "trigger", f"unknown trigger {trigger_raw!r}"))
        spec = replace(
            spec,
            target=block.take_int("target", 0, required=True, minimum=0),
            payload=payload,
            trigger=trigger,
            trigger_n=trigger_n,
            offset=block.take_int("offset", 0, minimum=0),
        )
    elif kind != "passive_reading":
        block.issues.append(Issue(block.line, "kind", f"unknown attack kind {kind!r}"))
    block.finish()
    return spec


def _cross_validate(cfg: ScenarioConfig, issues: list[Issue]) -> None:
    num_cores = cfg.system.num_cores
    line_size = cfg.system.line_size
    bound: set[int] = set()
    for spec in cfg.workloads:
        where = f"workload.{spec.index}"
        if spec.core >= num_cores:
            issues.append(Issue(0, f"{where}.core", f"core{spec.core} does not exist"))
        if spec.core in bound:
            issues.append(Issue(0, f"{where}.core", f"core{spec.core} bound twice"))
        bound.add(spec.core)
        if spec.kind in ("victim_array", "reader") and spec.base % line_size != 0:
            issues.append(Issue(0, f"{where}.base", "must be line-aligned"))
        if spec.kind == "random":
            for addr in spec.pool:
                if addr % line_size != 0:
                    issues.append(Issue(0, f"{where}.pool", f"{addr:#x} not line-aligned"))
    attack = cfg.attack
    if attack is None:
        return
    if attack.core >= num_cores:
        issues.append(Issue(0, "attack.core", f"core{attack.core} does not exist"))
    if attack.kind == "masquerading" and attack.fake_sender >= num_cores:
        issues.append(Issue(0, "fake_sender", f"core{attack.fake_sender} does not exist"))
    if attack.kind == "diverting" and attack.divert_to:
        node = node_from_token(attack.divert_to)
        limit = num_cores if node.is_core else cfg.system.num_mcs
        if node.index >= limit:
            issues.append(Issue(0, "divert_to", f"{attack.divert_to} does not exist"))
    if attack.kind == "forging":
        if attack.target % line_size != 0:
            issues.append(Issue(0, "target", "must be line-aligned"))
        if len(attack.payload) != line_size:
            issues.append(Issue(
                0, "payload",
                f"must be exactly {line_size} bytes, got {len(attack.payload)}",
            ))
        if attack.offset >= line_size:
            issues.append(Issue(0, "offset", "must be inside the line"))


# --- rendering ---------------------------------------------------------------

def render_config(cfg: ScenarioConfig) -> str:
    lines = [FORMAT_HEADER, "[system]"]
    sysc = cfg.system
    for key in (
        "num_chiplets", "cores_per_chiplet", "num_mcs", "line_size",
        "latency_intra", "latency_inter", "latency_mc", "nack_retry_delay",
        "seed", "max_events", "stall_window",
    ):
        lines.append(f"{key}={getattr(sysc, key)}")
    if cfg.trace_path is not None:
        lines.append(f"trace={cfg.trace_path}")
    for spec in cfg.workloads:
        lines.append(f"[workload.{spec.index}]")
        lines.append(f"kind={spec.kind}")
        lines.append(f"core={spec.core}")
        lines.append(f"start={spec.start}")
        if spec.kind in ("victim_array", "reader"):
            lines.append(f"base={spec.base:#x}")
            lines.append(f"n={spec.n}")
        else:
            lines.append(f"seed={spec.seed}")
            lines.append(f"pool={','.join(format(a, '#x') for a in spec.pool)}")
            lines.append(f"ops={spec.ops}")
    attack = cfg.attack
    if attack is not None:
        lines.append("[attack]")
        lines.append(f"kind={attack.kind}")
        lines.append(f"core={attack.core}")
        if attack.kind == "masquerading":
            lines.append(f"fake_sender={attack.fake_sender}")
            lines.append(f"variant={attack.variant}")
        elif attack.kind == "modifying":
            lines.append(f"variant={attack.variant}")
        elif attack.kind == "diverting":
            lines.append(f"divert_to={attack.divert_to}")
        elif attack.kind == "forging":
            lines.append(f"target={attack.target:#x}")
            lines.append(f"payload={attack.payload.hex()}")
            if attack.trigger == "on_nth":
                lines.append(f"trigger=on_nth:{attack.trigger_n}")
            else:
                lines.append(f"trigger={attack.trigger}")
            lines.append(f"offset={attack.offset}")
    lines.append("[monitor]")
    lines.append(f"enabled={'true' if cfg.monitor.enabled else 'false'}")
    lines.append(f"cpu_visibility={'true' if cfg.monitor.cpu_visibility else 'false'}")
    return "\n".join(lines) + "\n"


# --- scenario construction ----------------------------------------------------

def make_binding(spec: WorkloadSpec, line_size: int) -> WorkloadBinding:
    if spec.kind == "victim_array":
        return victim_array_workload(
            spec.base, spec.n, core(spec.core), line_size, start=spec.start
        )
    if spec.kind == "reader":
        return reader_workload(
            spec.base, spec.n, core(spec.core), line_size, start=spec.start
        )
    return random_workload(
        spec.seed, core(spec.core), list(spec.pool), spec.ops,
        line_size, start=spec.start,
    )


def make_attack(spec: AttackSpec) -> AttackKind:
    if spec.kind == "passive_reading":
        return PassiveReading()
    if spec.kind == "masquerading":
        return Masquerading(fake_sender=core(spec.fake_sender), variant=spec.variant)
    if spec.kind == "modifying":
        return Modifying(variant=spec.variant)
    if spec.kind == "diverting":
        return Diverting(divert_to=node_from_token(spec.divert_to))
    trigger_kind = {
        "immediate": TriggerKind.IMMEDIATE,
        "on_invalidation": TriggerKind.ON_INVALIDATION,
        "on_nth": TriggerKind.ON_NTH_OBSERVATION,
    }[spec.trigger]
    return Forging(
        target=spec.target,
        payload=spec.payload,
        trigger=TriggerMode(trigger_kind, spec.trigger_n),
        offset=spec.offset,
    )


def build_scenario(cfg: ScenarioConfig, monitor_override: bool | None = None,
                   **system_kwargs) -> System:
    """Build a ready-to-run system from a parsed scenario."""
    system = build_system(cfg.system, **system_kwargs)
    for spec in cfg.workloads:
        system.attach_workload(make_binding(spec, cfg.system.line_size))
    if cfg.attack is not None:
        system.attach_trojan(cfg.attack.core, make_attack(cfg.attack))
    enabled = cfg.monitor.enabled if monitor_override is None else monitor_override
    if enabled:
        system.attach_monitor(Monitor(
            cpu_visibility=cfg.monitor.cpu_visibility,
            line_size=cfg.system.line_size,
        ))
    return system


# --- shipped demo configs -------------------------------------------------------

def builtin_config_names() -> list[str]:
    root = resources.files(__package__).joinpath("configs")
    return sorted(
        entry.name for entry in root.iterdir() if entry.name.endswith(".cfg")
    )


def read_builtin_config(name: str) -> str:
    if not name.endswith(".cfg"):
        name += ".cfg"
    return (
        resources.files(__package__).joinpath("configs").joinpath(name)
        .read_text(encoding="utf-8")
    )


def resolve_config_text(path_or_name: str) -> str:
    """Accept a filesystem path or a shipped demo name (e.g. forging_demo)."""
    if os.path.isfile(path_or_name):
        with open(path_or_name, encoding="utf-8") as handle:
            return handle.read()
    base = os.path.basename(path_or_name)
    candidate = base if base.endswith(".cfg") else base + ".cfg"
    if path_or_name == base and candidate in builtin_config_names():
        return read_builtin_config(candidate)
    raise FileNotFoundError(path_or_name)
