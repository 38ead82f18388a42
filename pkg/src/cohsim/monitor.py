"""Interposer-vantage coherence monitor.

The monitor taps every message hop and CPU operation record the engine emits,
maintains a golden memory model from completed stores, and raises alerts for:

- SwmrViolation: more than one exclusive copy, or an exclusive copy
  coexisting with sharers, at a quiescent point;
- DataValueViolation: a load observed (or memory holds) a value different
  from the last committed store;
- WritebackProvenance: a dirty writeback from a core that performed no store
  to that line since it last acquired ownership;
- OwnershipWithoutDemand: an exclusive grant to a core with no pending CPU
  op for that address;
- IllegalDirectoryMessage: a hop the directory flagged as outside its table;
- Deadlock: the run ended with transactions still pending.

``cpu_visibility`` models how much the observer can see: with it off, the
checks that need per-core CPU logs (WritebackProvenance,
OwnershipWithoutDemand) are disabled and only packet-level and value checks
remain.  The monitor is read-only with respect to the simulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .protocol import CacheState
from .trace import TraceRecord


class AlertKind(Enum):
    SWMR_VIOLATION = "SwmrViolation"
    DATA_VALUE_VIOLATION = "DataValueViolation"
    WRITEBACK_PROVENANCE = "WritebackProvenance"
    OWNERSHIP_WITHOUT_DEMAND = "OwnershipWithoutDemand"
    ILLEGAL_DIRECTORY_MESSAGE = "IllegalDirectoryMessage"
    DEADLOCK = "Deadlock"


@dataclass(frozen=True)
class Alert:
    kind: AlertKind
    cycle: int
    address: int
    details: str = ""


@dataclass
class GoldenModel:
    """Reference memory: exactly the completed CPU stores, in completion order."""

    committed: dict[int, tuple[bytes, str, int]] = field(default_factory=dict)
    store_log: dict[str, list[tuple[int, int, bytes]]] = field(default_factory=dict)
    access_log: dict[str, list[tuple[int, int, str]]] = field(default_factory=dict)

    def commit_store(self, core: str, addr: int, data: bytes, cycle: int) -> None:
        self.committed[addr] = (data, core, cycle)
        self.store_log.setdefault(core, []).append((cycle, addr, data))

    def record_access(self, core: str, addr: int, op: str, cycle: int) -> None:
        self.access_log.setdefault(core, []).append((cycle, addr, op))

    def expected(self, addr: int, line_size: int) -> bytes:
        if addr in self.committed:
            return self.committed[addr][0]
        return bytes(line_size)


def check_data_value(
    core: str, addr: int, observed: bytes, golden: GoldenModel,
    cycle: int, line_size: int,
) -> Alert | None:
    want = golden.expected(addr, line_size)
    if observed != want:
        return Alert(
            AlertKind.DATA_VALUE_VIOLATION, cycle, addr,
            details=f"{core}:got={observed.hex()},want={want.hex()}",
        )
    return None


def check_swmr(states: dict[str, CacheState], addr: int, cycle: int) -> Alert | None:
    """Single-writer-multiple-reader check over one address's quiescent snapshot."""
    exclusive = sorted(c for c, s in states.items() if s in (CacheState.M, CacheState.E))
    shared = sorted(c for c, s in states.items() if s in (CacheState.S, CacheState.O))
    if len(exclusive) > 1 or (exclusive and shared):
        holders = ",".join(
            f"{c}={states[c].value}" for c in exclusive + shared
        )
        return Alert(AlertKind.SWMR_VIOLATION, cycle, addr, details=holders)
    return None


class Monitor:
    def __init__(self, cpu_visibility: bool = True, line_size: int = 8):
        self.cpu_visibility = cpu_visibility
        self.line_size = line_size
        self.golden = GoldenModel()
        self.alerts: list[Alert] = []
        # per-core op currently in flight, from CPU issue/complete records
        self._pending: dict[str, tuple[int, str]] = {}
        # cycle each (core, addr) last received an exclusive grant
        self._grant_cycle: dict[tuple[str, int], int] = {}

    # -- event tap ---------------------------------------------------------

    def observe(self, record: TraceRecord) -> list[Alert]:
        new: list[Alert] = []
        if record.kind == "MSG":
            new.extend(self._observe_msg(record))
        elif record.kind == "CPU":
            new.extend(self._observe_cpu(record))
        self.alerts.extend(new)
        return new

    def _observe_msg(self, record: TraceRecord) -> list[Alert]:
        out: list[Alert] = []
        addr = int(record.get("addr"), 16)
        msg_type = record.get("type")
        src = record.get("src")
        dst = record.get("dst")
        if record.get("legal") == "0":
            out.append(Alert(
                AlertKind.ILLEGAL_DIRECTORY_MESSAGE, record.cycle, addr,
                details=f"{msg_type}:from={src}",
            ))
        if msg_type == "DATA_E" and dst.startswith("core"):
            if self.cpu_visibility:
                pending = self._pending.get(dst)
                if pending is None or pending[0] != addr:
                    out.append(Alert(
                        AlertKind.OWNERSHIP_WITHOUT_DEMAND, record.cycle, addr,
                        details=f"grant_to={dst}",
                    ))
            self._grant_cycle[(dst, addr)] = record.cycle
        if msg_type == "WB_EXCLUSIVE_DIRTY" and src.startswith("core") and self.cpu_visibility:
            if not self._store_since_grant(src, addr):
                out.append(Alert(
                    AlertKind.WRITEBACK_PROVENANCE, record.cycle, addr,
                    details=f"writer={src}",
                ))
        return out

    def _store_since_grant(self, core: str, addr: int) -> bool:
        grant = self._grant_cycle.get((core, addr))
        if grant is None:
            return False
        return any(
            cycle >= grant and a == addr
            for cycle, a, _ in self.golden.store_log.get(core, [])
        )

    def _observe_cpu(self, record: TraceRecord) -> list[Alert]:
        out: list[Alert] = []
        core = record.get("core")
        addr = int(record.get("addr"), 16)
        op = record.get("op")
        stage = record.get("stage")
        if stage == "issue":
            self.golden.record_access(core, addr, op, record.cycle)
            self._pending[core] = (addr, op)
            return out
        # completion retires the pending op and updates/checks the golden model
        self._pending.pop(core, None)
        data = bytes.fromhex(record.get("data") or "")
        if op == "store":
            self.golden.commit_store(core, addr, data, record.cycle)
        else:
            alert = check_data_value(
                core, addr, data, self.golden, record.cycle, self.line_size
            )
            if alert:
                out.append(alert)
        return out

    # -- end-of-run audit ----------------------------------------------------

    def final_audit(self, system, deadlocked: bool, cycle: int) -> list[Alert]:
        out: list[Alert] = []
        touched: set[int] = set(self.golden.committed)
        for core in system.cores:
            touched.update(core.cache)
        for slice_ in system.mcs:
            touched.update(slice_.entries)
        for addr in sorted(touched):
            states = {
                str(core.node_id): core.cache[addr].state
                for core in system.cores
                if addr in core.cache
            }
            alert = check_swmr(states, addr, cycle)
            if alert:
                out.append(alert)
            effective = system.effective_line(addr)
            want = self.golden.expected(addr, self.line_size)
            if effective != want:
                out.append(Alert(
                    AlertKind.DATA_VALUE_VIOLATION, cycle, addr,
                    details=f"memory:got={effective.hex()},want={want.hex()}",
                ))
        if deadlocked:
            pending = [
                (str(c.node_id), c.pending_addr)
                for c in system.cores
                if c.pending_op is not None
            ]
            name, addr = pending[0] if pending else ("none", 0)
            out.append(Alert(
                AlertKind.DEADLOCK, cycle, addr, details=f"stuck={name}"
            ))
        self.alerts.extend(out)
        return out
