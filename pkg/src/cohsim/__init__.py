"""Deterministic simulator of coherence-level hardware Trojan attacks on a
chiplet system: MOESI-style hybrid broadcast-directory protocol, an
interception framework at a compromised core's network boundary, five attack
behaviors, and an interposer-vantage runtime monitor."""

from .fabric import (
    ConfigError,
    SimReport,
    System,
    SystemConfig,
    build_system,
    run,
)
from .monitor import Alert, AlertKind, GoldenModel, Monitor, check_data_value, check_swmr
from .protocol import (
    CacheLineEntry,
    CacheState,
    CoherenceMessage,
    CpuOp,
    DirState,
    FatalProtocolError,
    GlobalDirectoryEntry,
    MessageType,
    NodeId,
    NodeKind,
    OpKind,
    ProtocolError,
    addr_to_home,
    cache_apply_cpu_op,
    cache_apply_msg,
    core,
    dir_apply_msg,
    mc,
)
from .scenario import (
    ConfigParseError,
    ScenarioConfig,
    build_scenario,
    builtin_config_names,
    parse_config,
    read_builtin_config,
    render_config,
)
from .trace import TraceRecord, emit_trace_record, render_trace
from .trojan import (
    AttackKind,
    Diverting,
    Forging,
    Masquerading,
    Modifying,
    PassiveReading,
    TriggerKind,
    TriggerMode,
    TrojanPhase,
    TrojanState,
    forging_step,
    intercept_inbound,
    intercept_outbound,
)
from .workloads import (
    WorkloadBinding,
    decode_value,
    encode_value,
    random_workload,
    victim_array_workload,
)

__version__ = "0.1.0"
