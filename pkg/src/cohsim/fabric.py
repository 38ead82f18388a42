"""Deterministic discrete-event engine tying the pieces together.

Topology is abstracted to latency classes: hops between cores on the same
chiplet cost latency_intra, cross-chiplet core-to-core hops cost
latency_inter, and any hop touching a memory controller costs latency_mc.
Delivery on each (source, destination) channel is FIFO.  Events are processed
in (time, seq) order with seq assigned at scheduling time, so identical
inputs always produce identical traces.

Each core runs its bound program in order with one outstanding operation:
misses park the op until the fill resolves, NACKed requests are retried
after a fixed backoff.  A compromised core's traffic passes through the
Trojan filters in both directions.  Every delivered hop and CPU step is
offered to the monitor and appended to the trace.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field, replace

from .monitor import Alert, Monitor
from .protocol import (
    CacheLineEntry,
    CacheState,
    CoherenceMessage,
    CpuOp,
    FatalProtocolError,
    GlobalDirectoryEntry,
    MessageType,
    NodeId,
    OpKind,
    ProtocolError,
    addr_to_home,
    cache_apply_cpu_op,
    cache_apply_msg,
    core,
    dir_apply_msg,
    mc,
)
from .trace import TraceRecord, fmt_addr, make_record
from .trojan import (
    Block,
    Forging,
    Inject,
    Modify,
    Pass,
    TickAfterAcks,
    TriggerKind,
    TrojanPhase,
    TrojanState,
    forging_step,
    intercept_inbound,
    intercept_outbound,
)
from .workloads import WorkloadBinding, decode_value


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


@dataclass
class SystemConfig:
    num_chiplets: int = 2
    cores_per_chiplet: int = 4
    num_mcs: int = 2
    line_size: int = 8
    latency_intra: int = 2
    latency_inter: int = 10
    latency_mc: int = 15
    nack_retry_delay: int = 20
    seed: int = 0
    max_events: int = 1_000_000
    stall_window: int = 1000

    @property
    def num_cores(self) -> int:
        return self.num_chiplets * self.cores_per_chiplet

    def validate(self) -> None:
        for name in (
            "num_chiplets", "cores_per_chiplet", "num_mcs", "line_size",
            "latency_intra", "latency_inter", "latency_mc",
            "nack_retry_delay", "stall_window",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.num_mcs & (self.num_mcs - 1) != 0:
            raise ConfigError("num_mcs", "must be a power of two")
        if self.max_events < 1:
            raise ConfigError("max_events", "must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed", "must be >= 0")


@dataclass
class Core:
    node_id: NodeId
    chiplet: int
    cache: dict[int, CacheLineEntry] = field(default_factory=dict)
    binding: WorkloadBinding | None = None
    pc: int = 0
    pending_op: CpuOp | None = None
    trojan: TrojanState | None = None

    @property
    def pending_addr(self) -> int | None:
        return self.pending_op.address if self.pending_op else None


@dataclass
class DirectorySlice:
    node_id: NodeId
    entries: dict[int, GlobalDirectoryEntry] = field(default_factory=dict)


@dataclass
class SimReport:
    cycles_elapsed: int
    messages_delivered: int
    events_processed: int
    deadlocked: bool
    protocol_errors: list[ProtocolError]
    per_core_load_results: dict[tuple[int, int], int]
    per_core_loads: dict[int, list[tuple[int, int]]]
    monitor_alerts: list[Alert]
    effective_memory: dict[int, bytes]
    records: list[TraceRecord]
    trojan_phase: str | None = None
    trojan_snoop: list[tuple[int, int, str]] = field(default_factory=list)
    trojan_blocked: int = 0


class System:
    """One simulation instance: topology, event queue, attachments, stats."""

    def __init__(self, config: SystemConfig,
                 latency_overrides: dict[tuple[str, str], int] | None = None):
        config.validate()
        self.config = config
        self.cores = [
            Core(node_id=core(i), chiplet=i // config.cores_per_chiplet)
            for i in range(config.num_cores)
        ]
        self.mcs = [DirectorySlice(node_id=mc(i)) for i in range(config.num_mcs)]
        self.rng = random.Random(config.seed)
        self.latency_overrides = latency_overrides or {}
        self.clock = 0
        self.records: list[TraceRecord] = []
        self.protocol_errors: list[ProtocolError] = []
        self.monitor: Monitor | None = None
        self.probe = None  # optional callable(system) run after every event
        self._heap: list[tuple[int, int, str, object]] = []
        self._seq = 0
        self._txn = 0
        self._channel_clock: dict[tuple[NodeId, NodeId], int] = {}
        self.hop_log: list[tuple[NodeId, NodeId, int, int, MessageType, int]] = []
        self.messages_delivered = 0
        self.events_processed = 0
        self.per_core_load_results: dict[tuple[int, int], int] = {}
        self.per_core_loads: dict[int, list[tuple[int, int]]] = {}
        self._pending_count = 0
        self._last_progress = 0

    # -- construction ------------------------------------------------------

    def attach_workload(self, binding: WorkloadBinding) -> None:
        idx = binding.core.index
        if not binding.core.is_core or idx >= len(self.cores):
            raise ConfigError("core", f"no such core {binding.core}")
        self.cores[idx].binding = binding

    def attach_trojan(self, core_index: int, kind) -> TrojanState:
        if core_index >= len(self.cores):
            raise ConfigError("core", f"no such core core{core_index}")
        state = TrojanState(
            kind=kind,
            self_core=core(core_index),
            num_mcs=self.config.num_mcs,
            line_size=self.config.line_size,
            retry_delay=self.config.nack_retry_delay,
        )
        self.cores[core_index].trojan = state
        return state

    def attach_monitor(self, monitor: Monitor) -> None:
        self.monitor = monitor

    # -- helpers -------------------------------------------------------------

    def home_of(self, addr: int) -> NodeId:
        return addr_to_home(addr, self.config.num_mcs, self.config.line_size)

    def memory_line(self, addr: int) -> bytes:
        slice_ = self.mcs[self.home_of(addr).index]
        entry = slice_.entries.get(addr)
        if entry is None:
            return bytes(self.config.line_size)
        return entry.mem_data

    def effective_line(self, addr: int) -> bytes:
        """Memory as an audit sees it: a dirty cached copy wins over the home."""
        for c in self.cores:
            entry = c.cache.get(addr)
            if entry is not None and entry.state in (CacheState.M, CacheState.O):
                return entry.data
        return self.memory_line(addr)

    def effective_memory(self) -> dict[int, bytes]:
        touched: set[int] = set()
        for c in self.cores:
            touched.update(c.cache)
        for slice_ in self.mcs:
            touched.update(slice_.entries)
        return {addr: self.effective_line(addr) for addr in sorted(touched)}

    def latency(self, src: NodeId, dst: NodeId) -> int:
        override = self.latency_overrides.get((str(src), str(dst)))
        if override is not None:
            return override
        if src.is_mc or dst.is_mc:
            return self.config.latency_mc
        if self.cores[src.index].chiplet == self.cores[dst.index].chiplet:
            return self.config.latency_intra
        return self.config.latency_inter

    def _next_txn(self) -> int:
        self._txn += 1
        return self._txn

    def _schedule(self, time: int, tag: str, payload) -> None:
        heapq.heappush(self._heap, (time, self._seq, tag, payload))
        self._seq += 1

    def _emit(self, record: TraceRecord) -> None:
        self.records.append(record)
        if self.monitor is not None and record.kind in ("MSG", "CPU"):
            for alert in self.monitor.observe(record):
                self.records.append(make_record(
                    alert.cycle, "ALERT",
                    alert_kind=alert.kind.value,
                    addr=fmt_addr(alert.address),
                    details=alert.details or None,
                ))

    # -- transport ----------------------------------------------------------

    def _send(self, msg: CoherenceMessage, now: int, extra_delay: int = 0,
              origin: NodeId | None = None) -> None:
        """Put a message on the fabric from the node that physically emits it.

        ``origin`` is the emitting node and defaults to msg.sender; the two
        differ only for FWD_GETS (the home rewrites the sender field to the
        requestor but transmits the hop itself) and Trojan-fabricated traffic
        claiming another sender.  Channels and latencies follow the physical
        origin, which keeps a forward FIFO-ordered with the invalidations the
        same home emits.
        """
        if origin is None:
            origin = msg.sender
        if msg.txn_id == 0:
            msg = replace(msg, txn_id=self._next_txn())
        msg.validate(self.config.line_size)
        channel = (origin, msg.destination)
        arrival = now + extra_delay + self.latency(origin, msg.destination)
        # a channel never reorders: a hop may not overtake one already in flight
        arrival = max(arrival, self._channel_clock.get(channel, 0))
        self._channel_clock[channel] = arrival
        self.hop_log.append(
            (origin, msg.destination, now, arrival, msg.msg_type, msg.address)
        )
        self._schedule(arrival, "deliver", msg)

    def _send_from_core(self, c: Core, msg: CoherenceMessage, now: int) -> None:
        if c.trojan is None:
            self._send(msg, now, origin=c.node_id)
            return
        action, _ = intercept_outbound(c.trojan, msg)
        survivor = self._apply_filter_action(c, action, msg, now)
        if survivor is not None:
            self._send(survivor, now, origin=c.node_id)

    def _apply_filter_action(self, c: Core, action, msg: CoherenceMessage | None,
                             now: int) -> CoherenceMessage | None:
        """Run one filter verdict; returns the message that should proceed."""
        if isinstance(action, Pass):
            return msg
        if isinstance(action, Block):
            self._emit_trojan_action(c, "block", msg, now)
            return None
        if isinstance(action, Modify):
            self._emit_trojan_action(c, "modify", action.replacement, now)
            return action.replacement
        if isinstance(action, Inject):
            for extra in action.extra:
                self._emit_trojan_action(c, "inject", extra, now)
                self._send(extra, now, extra_delay=action.delay, origin=c.node_id)
            if isinstance(action.then, Block):
                self._emit_trojan_action(c, "block", msg, now)
                return None
            return msg
        raise FatalProtocolError(f"unknown filter action {action!r}")

    def _emit_trojan_action(self, c: Core, action: str,
                            msg: CoherenceMessage | None, now: int) -> None:
        self._emit(make_record(
            now, "TROJAN",
            core=str(c.node_id),
            action=action,
            type=msg.msg_type.value if msg else None,
            addr=fmt_addr(msg.address) if msg else None,
        ))

    def _emit_trojan_phase(self, c: Core, now: int) -> None:
        self._emit(make_record(
            now, "TROJAN", core=str(c.node_id), phase=c.trojan.phase.value
        ))

    def _run_forging_tick(self, c: Core, now: int) -> None:
        """Phase1_Complete immediately chains into the writeback phase."""
        trojan = c.trojan
        if trojan is None or not isinstance(trojan.kind, Forging):
            return
        if trojan.phase is not TrojanPhase.PHASE1_COMPLETE:
            return
        actions, _ = forging_step(trojan, TickAfterAcks())
        for action in actions:
            self._apply_filter_action(c, action, None, now)
        self._emit_trojan_phase(c, now)

    # -- event handlers -------------------------------------------------------

    def _deliver(self, msg: CoherenceMessage, now: int) -> None:
        self.messages_delivered += 1
        if msg.destination.is_mc:
            self._deliver_to_mc(msg, now)
        else:
            self._deliver_to_core(msg, now)

    def _deliver_to_mc(self, msg: CoherenceMessage, now: int) -> None:
        slice_ = self.mcs[msg.destination.index]
        entry = slice_.entries.setdefault(
            msg.address, GlobalDirectoryEntry.unowned(self.config.line_size)
        )
        new_entry, emitted, legal = dir_apply_msg(entry, msg, self.config.num_cores)
        slice_.entries[msg.address] = new_entry
        self._emit(make_record(
            now, "MSG",
            src=str(msg.sender), dst=str(msg.destination),
            type=msg.msg_type.value, addr=fmt_addr(msg.address),
            data=msg.payload, acks=msg.acks_expected,
            inj=True if msg.injected else None,
            legal=legal,
        ))
        for out in emitted:
            self._send(out, now, origin=msg.destination)

    def _deliver_to_core(self, msg: CoherenceMessage, now: int) -> None:
        c = self.cores[msg.destination.index]
        # the hop is on the fabric and visible to the interposer even if the
        # implant swallows it before the cache controller looks at it
        self._emit(make_record(
            now, "MSG",
            src=str(msg.sender), dst=str(msg.destination),
            type=msg.msg_type.value, addr=fmt_addr(msg.address),
            data=msg.payload, acks=msg.acks_expected,
            inj=True if msg.injected else None,
        ))
        survivor = msg
        if c.trojan is not None:
            snoops_before = len(c.trojan.snoop_log)
            phase_before = c.trojan.phase
            action, _ = intercept_inbound(c.trojan, msg, now)
            if len(c.trojan.snoop_log) > snoops_before:
                self._emit_trojan_action(c, "snoop", msg, now)
            survivor = self._apply_filter_action(c, action, msg, now)
            if c.trojan.phase is not phase_before:
                self._emit_trojan_phase(c, now)
            self._run_forging_tick(c, now)
        if survivor is not None:
            self._deliver_to_cache(c, survivor, now)

    def _deliver_to_cache(self, c: Core, msg: CoherenceMessage, now: int) -> None:
        entry = c.cache.setdefault(
            msg.address, CacheLineEntry.invalid(self.config.line_size)
        )
        new_entry, emitted, error = cache_apply_msg(entry, msg, c.node_id)
        c.cache[msg.address] = new_entry
        if error is not None:
            self.protocol_errors.append(error)
        for out in emitted:
            self._send_from_core(c, out, now)
        if msg.msg_type is MessageType.NACK and not new_entry.state.stable:
            self._schedule(now + self.config.nack_retry_delay, "retry",
                           (c.node_id.index, msg.address))
            return
        if (new_entry.state.stable and c.pending_op is not None
                and c.pending_op.address == msg.address):
            self._apply_cpu(c, c.pending_op, now)

    def _issue_next(self, core_index: int, now: int) -> None:
        c = self.cores[core_index]
        if c.binding is None or c.pending_op is not None:
            return
        if c.pc >= len(c.binding.program):
            return
        op = c.binding.program[c.pc]
        self._emit(make_record(
            now, "CPU",
            core=str(c.node_id), op=op.kind.value,
            addr=fmt_addr(op.address), stage="issue",
            data=op.value if op.kind is OpKind.STORE else None,
        ))
        self._apply_cpu(c, op, now)

    def _apply_cpu(self, c: Core, op: CpuOp, now: int) -> None:
        entry = c.cache.setdefault(
            op.address, CacheLineEntry.invalid(self.config.line_size)
        )
        new_entry, emitted, value = cache_apply_cpu_op(
            entry, op, c.node_id, self.home_of(op.address), op.address
        )
        c.cache[op.address] = new_entry
        if value is None:
            c.pending_op = op
            self._pending_count += 1
            self._last_progress = now
            for out in emitted:
                self._send_from_core(c, out, now)
            return
        self._complete_op(c, op, value, now)

    def _complete_op(self, c: Core, op: CpuOp, value: bytes, now: int) -> None:
        self._emit(make_record(
            now, "CPU",
            core=str(c.node_id), op=op.kind.value,
            addr=fmt_addr(op.address), stage="complete",
            data=value,
        ))
        idx = c.node_id.index
        if op.kind is OpKind.LOAD:
            line_index = op.address // self.config.line_size
            observed = decode_value(value)
            c.binding.results[c.pc] = observed
            self.per_core_load_results[(idx, line_index)] = observed
            self.per_core_loads.setdefault(idx, []).append((line_index, observed))
        entry = c.cache[op.address]
        if entry.pending_inval:
            # the fill raced an invalidation: the one permitted use is done
            c.cache[op.address] = replace(
                entry, state=CacheState.I, dirty=False, pending_inval=False
            )
        if c.pending_op is not None:
            self._pending_count -= 1
        c.pending_op = None
        self._last_progress = now
        c.pc += 1
        if c.pc < len(c.binding.program):
            self._schedule(now + 1, "cpu", idx)

    def _retry(self, core_index: int, addr: int, now: int) -> None:
        c = self.cores[core_index]
        entry = c.cache.get(addr)
        if entry is None or entry.state.stable:
            return
        request_type = {
            CacheState.IS_D: MessageType.GETS,
            CacheState.IM_AD: MessageType.GETX,
            CacheState.MI_A: MessageType.PUTX,
        }[entry.state]
        msg = CoherenceMessage(request_type, c.node_id, self.home_of(addr), addr)
        self._send_from_core(c, msg, now)

    # -- main loop ------------------------------------------------------------

    def run(self) -> SimReport:
        for c in self.cores:
            if c.binding is not None and c.binding.program:
                self._schedule(c.binding.start, "cpu", c.node_id.index)
            if c.trojan is not None and isinstance(c.trojan.kind, Forging):
                if c.trojan.kind.trigger.kind is TriggerKind.IMMEDIATE:
                    actions, _ = forging_step(c.trojan, TickAfterAcks())
                    for action in actions:
                        self._apply_filter_action(c, action, None, 0)
                    if c.trojan.phase is not TrojanPhase.DORMANT:
                        self._emit_trojan_phase(c, 0)

        stalled = False
        while self._heap and self.events_processed < self.config.max_events:
            time, _, tag, payload = heapq.heappop(self._heap)
            self.clock = time
            # ops pending with no completion for a whole window means the
            # run is wedged (possibly livelocked on retries); stop reporting
            if (self._pending_count > 0
                    and time - self._last_progress > self.config.stall_window):
                stalled = True
                break
            self.events_processed += 1
            if tag == "deliver":
                self._deliver(payload, time)
            elif tag == "cpu":
                self._issue_next(payload, time)
            else:
                self._retry(payload[0], payload[1], time)
            if self.probe is not None:
                self.probe(self)

        deadlocked = stalled or (
            not self._heap and any(c.pending_op is not None for c in self.cores)
        )

        if self.monitor is not None:
            for alert in self.monitor.final_audit(self, deadlocked, self.clock):
                self.records.append(make_record(
                    alert.cycle, "ALERT",
                    alert_kind=alert.kind.value,
                    addr=fmt_addr(alert.address),
                    details=alert.details or None,
                ))

        alerts = list(self.monitor.alerts) if self.monitor else []
        self.records.append(make_record(
            self.clock, "END",
            cycles=self.clock,
            messages=self.messages_delivered,
            errors=len(self.protocol_errors),
            alerts=len(alerts),
            deadlock=deadlocked,
        ))

        trojan_state = next(
            (c.trojan for c in self.cores if c.trojan is not None), None
        )
        return SimReport(
            cycles_elapsed=self.clock,
            messages_delivered=self.messages_delivered,
            events_processed=self.events_processed,
            deadlocked=deadlocked,
            protocol_errors=list(self.protocol_errors),
            per_core_load_results=dict(self.per_core_load_results),
            per_core_loads={k: list(v) for k, v in self.per_core_loads.items()},
            monitor_alerts=alerts,
            effective_memory=self.effective_memory(),
            records=list(self.records),
            trojan_phase=trojan_state.phase.value if trojan_state else None,
            trojan_snoop=[
                (t, a, mt.value) for t, a, mt in trojan_state.snoop_log
            ] if trojan_state else [],
            trojan_blocked=trojan_state.blocked_count if trojan_state else 0,
        )


def build_system(config: SystemConfig, **kwargs) -> System:
    return System(config, **kwargs)


def run(system: System) -> SimReport:
    return system.run()
