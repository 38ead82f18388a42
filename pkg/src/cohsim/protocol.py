"""Pure state machines for a simplified MOESI-Hammer hybrid broadcast-directory
protocol.

Two sides are modeled: the cache controller of a core (local directory) and a
home directory slice at a memory controller.  Both transition functions are
side-effect free: they take a state value and a stimulus and return the new
state plus the messages to emit.  All sequencing, timing and delivery is owned
by the fabric engine; these functions can be driven from unit tests, an
interleaving explorer or the event loop alike.

Directory scheme is Hammer-minimal: the home tracks only an owner and a busy
transaction, there is no sharer list, and every exclusive request (GETX)
broadcasts invalidations to all other cores.  Invalidation acknowledgements
flow back to the home, which aggregates them and answers the requestor with a
single DATA_E.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum


class NodeKind(Enum):
    CORE = "core"
    MC = "mc"


@dataclass(frozen=True)
class NodeId:
    """A protocol endpoint: a core or a memory controller (directory slice)."""

    kind: NodeKind
    index: int

    def __str__(self) -> str:
        return f"{self.kind.value}{self.index}"

    @property
    def is_core(self) -> bool:
        return self.kind is NodeKind.CORE

    @property
    def is_mc(self) -> bool:
        return self.kind is NodeKind.MC


def core(index: int) -> NodeId:
    return NodeId(NodeKind.CORE, index)


def mc(index: int) -> NodeId:
    return NodeId(NodeKind.MC, index)


class MessageType(Enum):
    GETS = "GETS"
    GETX = "GETX"
    PUTX = "PUTX"
    INV = "INV"
    ACK = "ACK"
    NACK = "NACK"
    DATA_S = "DATA_S"
    DATA_E = "DATA_E"
    FWD_GETS = "FWD_GETS"
    FWD_GETX = "FWD_GETX"
    WB_ACK = "WB_ACK"
    WB_EXCLUSIVE_DIRTY = "WB_EXCLUSIVE_DIRTY"
    WB_CLEAN = "WB_CLEAN"


# Types that must carry a full line of data.  ACK may additionally carry a
# dirty line piggybacked toward the home when an owner is invalidated.
PAYLOAD_TYPES = frozenset(
    {MessageType.DATA_S, MessageType.DATA_E, MessageType.WB_EXCLUSIVE_DIRTY}
)

# Requests a directory answers with NACK while the line is busy.
REQUEST_TYPES = frozenset({MessageType.GETS, MessageType.GETX, MessageType.PUTX})


@dataclass(frozen=True)
class CoherenceMessage:
    """One coherence packet on the fabric.

    ``payload`` is a full cache line for data-bearing types (and optionally on
    an ACK that surrenders a dirty line).  ``acks_expected`` is only set on
    DATA_E and reports how many invalidation acks the home aggregated before
    granting.  ``txn_id`` tags the transaction; the fabric assigns fresh ids
    to new requests and responses inherit the id of the message that caused
    them.  ``injected`` marks packets fabricated by a Trojan rather than by a
    cache controller.
    """

    msg_type: MessageType
    sender: NodeId
    destination: NodeId
    address: int
    payload: bytes | None = None
    acks_expected: int | None = None
    txn_id: int = 0
    injected: bool = False

    def validate(self, line_size: int) -> None:
        if self.msg_type in PAYLOAD_TYPES:
            if self.payload is None or len(self.payload) != line_size:
                raise FatalProtocolError(
                    f"{self.msg_type.value} requires a {line_size}-byte payload"
                )
        elif self.msg_type is MessageType.ACK:
            if self.payload is not None and len(self.payload) != line_size:
                raise FatalProtocolError("ACK piggyback payload has wrong length")
        elif self.payload is not None:
            raise FatalProtocolError(f"{self.msg_type.value} must not carry data")
        if self.acks_expected is not None and self.msg_type is not MessageType.DATA_E:
            raise FatalProtocolError("acks_expected is only valid on DATA_E")


class CacheState(Enum):
    M = "M"
    O = "O"
    E = "E"
    S = "S"
    I = "I"  # noqa: E741 - protocol name
    IS_D = "IS_D"    # GETS issued, awaiting data
    IM_AD = "IM_AD"  # GETX issued, awaiting data (+ aggregated acks)
    MI_A = "MI_A"    # PUTX issued, awaiting WB_ACK

    @property
    def stable(self) -> bool:
        return self in _STABLE

    @property
    def readable(self) -> bool:
        return self in _READABLE

    @property
    def writable(self) -> bool:
        return self in _WRITABLE


_STABLE = frozenset({CacheState.M, CacheState.O, CacheState.E, CacheState.S, CacheState.I})
_READABLE = frozenset({CacheState.M, CacheState.O, CacheState.E, CacheState.S})
_WRITABLE = frozenset({CacheState.M, CacheState.E})


@dataclass
class CacheLineEntry:
    """Per-core record of one line: MOESI state plus the line contents.

    ``dirty`` remembers whether the local copy diverged from memory; it picks
    between WB_EXCLUSIVE_DIRTY and WB_CLEAN when a writeback completes.
    ``pending_acks`` is reserved for non-aggregated ack accounting and stays 0
    under the home-aggregated flow.  ``pending_inval`` marks a line whose
    invalidation arrived while a forwarded fill was still in flight: the fill
    may be used once to complete the stalled load (the read is serialized
    before the invalidating write) and the line must then drop to I instead
    of lingering as a stale sharer.
    """

    state: CacheState = CacheState.I
    data: bytes = b""
    pending_acks: int = 0
    dirty: bool = False
    pending_inval: bool = False

    @staticmethod
    def invalid(line_size: int) -> "CacheLineEntry":
        return CacheLineEntry(state=CacheState.I, data=bytes(line_size))


class OpKind(Enum):
    LOAD = "load"
    STORE = "store"


@dataclass(frozen=True)
class CpuOp:
    kind: OpKind
    address: int
    value: bytes | None = None  # full line, stores only

    def __post_init__(self):
        if self.kind is OpKind.STORE and self.value is None:
            raise ValueError("store needs a value")


class DirState(Enum):
    UNOWNED = "Unowned"
    OWNED = "Owned"
    BUSY_GETX = "BusyGETX"
    BUSY_GETS = "BusyGETS"
    BUSY_WB = "BusyWB"


BUSY_STATES = frozenset({DirState.BUSY_GETX, DirState.BUSY_GETS, DirState.BUSY_WB})


@dataclass
class GlobalDirectoryEntry:
    """Home-directory view of one line: owner/busy tracking plus the memory copy."""

    dstate: DirState = DirState.UNOWNED
    node: NodeId | None = None  # owner for OWNED/BUSY_WB, requestor for BUSY_*
    mem_data: bytes = b""
    acks_pending: int = 0

    @staticmethod
    def unowned(line_size: int) -> "GlobalDirectoryEntry":
        return GlobalDirectoryEntry(mem_data=bytes(line_size))


class FatalProtocolError(Exception):
    """Contract violation inside the simulator itself (not attack-induced)."""


def addr_to_home(addr: int, num_mcs: int, line_size: int) -> NodeId:
    """Map a line-aligned address to its home directory slice.

    Slice index = (addr / line_size) mod num_mcs; stable for the whole run.
    """
    return mc((addr // line_size) % num_mcs)


@dataclass(frozen=True)
class ProtocolError:
    """An attack-observable illegal (state, message) pairing at a cache.

    These are data, not exceptions: incoherence induced by an attack shows up
    as entries in the run report, never as an abort.
    """

    node: NodeId
    address: int
    state: CacheState
    msg_type: MessageType

    def describe(self) -> str:
        return f"{self.node}: {self.msg_type.value} in {self.state.value} @ {self.address:#x}"


def cache_apply_cpu_op(
    entry: CacheLineEntry,
    op: CpuOp,
    self_id: NodeId,
    home: NodeId,
    addr: int,
) -> tuple[CacheLineEntry, list[CoherenceMessage], bytes | None]:
    """Apply a CPU load/store to a stable cache line.

    Returns (new entry, emitted messages, completed value).  The completed
    value is the line read by a load or the line written by a store; None
    means the op missed and a request went to the home (the caller stalls the
    core and re-applies once the transient resolves).

    state | load                 | store
    ------+----------------------+---------------------------
    M,O   | hit                  | O: GETX -> IM_AD   M: hit
    E     | hit                  | hit (silent E->M)
    S     | hit                  | GETX -> IM_AD
    I     | GETS -> IS_D         | GETX -> IM_AD
    """
    if not entry.state.stable:
        raise FatalProtocolError(
            f"cpu op applied to transient state {entry.state.value} at {addr:#x}"
        )
    st = entry.state
    if op.kind is OpKind.LOAD:
        if st in _READABLE:
            return entry, [], entry.data
        # I: cold read miss
        new = replace(entry, state=CacheState.IS_D)
        msg = CoherenceMessage(MessageType.GETS, self_id, home, addr)
        return new, [msg], None
    # store
    if st in _WRITABLE:
        new = replace(entry, state=CacheState.M, data=op.value, dirty=True)
        return new, [], op.value
    # I, S or O: upgrade; any local copy is self-invalidated into the request
    new = replace(entry, state=CacheState.IM_AD)
    msg = CoherenceMessage(MessageType.GETX, self_id, home, addr)
    return new, [msg], None


def cache_begin_evict(
    entry: CacheLineEntry, self_id: NodeId, home: NodeId, addr: int
) -> tuple[CacheLineEntry, list[CoherenceMessage]]:
    """Start a voluntary writeback of an owned line (M, O or E -> MI_A + PUTX).

    No workload generates evictions (caches here are unbounded); this is the
    entry path a genuine eviction would take and what the forging Trojan
    mimics.
    """
    if entry.state not in (CacheState.M, CacheState.O, CacheState.E):
        raise FatalProtocolError(f"evict from {entry.state.value}")
    dirty = entry.dirty or entry.state in (CacheState.M, CacheState.O)
    new = replace(entry, state=CacheState.MI_A, dirty=dirty)
    return new, [CoherenceMessage(MessageType.PUTX, self_id, home, addr)]


def cache_apply_msg(
    entry: CacheLineEntry,
    msg: CoherenceMessage,
    self_id: NodeId,
) -> tuple[CacheLineEntry, list[CoherenceMessage], ProtocolError | None]:
    """Apply an inbound coherence message to a core's line.

    Returns (new entry, emitted messages, protocol error).  Pairs outside the
    transition table leave the entry untouched and report a ProtocolError
    record; the simulation keeps going (that is precisely how attack-induced
    incoherence becomes visible).

    msg       | M,O          | E            | S      | I,IS_D,IM_AD | MI_A
    ----------+--------------+--------------+--------+--------------+---------
    INV       | I, ACK+data  | I, ACK       | I, ACK | ACK          | error
    DATA_S    | error        | error        | error  | IS_D: -> S   | error
    DATA_E    | error        | error        | error  | IS_D: -> E   | error
              |              |              |        | IM_AD: -> M  |
    FWD_GETS  | O, DATA_S    | O, DATA_S    | error  | IM_AD: NACK  | error
    FWD_GETX  | I, DATA_E    | I, DATA_E    | error  | error        | error
    WB_ACK    | error        | error        | error  | error        | I, WB_*
    NACK      | error        | error        | error  | IS_D/IM_AD:  | absorbed
              |              |              |        |   absorbed   |

    INV in IS_D additionally sets pending_inval: the invalidating write is
    serialized after our read request, so the forwarded DATA_S may satisfy
    the stalled load exactly once before the line drops to I (the engine
    performs that drop after op completion).  A DATA_E fill clears the flag:
    a grant from the home postdates the invalidation that set it.
    """
    st = entry.state
    home = msg.sender  # INV/WB_ACK/NACK arrive from the home slice
    mt = msg.msg_type

    if mt is MessageType.INV:
        if st in (CacheState.M, CacheState.O):
            ack = CoherenceMessage(
                MessageType.ACK, self_id, home, msg.address,
                payload=entry.data, txn_id=msg.txn_id,
            )
            new = replace(entry, state=CacheState.I, dirty=False, pending_inval=False)
            return new, [ack], None
        if st in (CacheState.E, CacheState.S):
            ack = CoherenceMessage(
                MessageType.ACK, self_id, home, msg.address, txn_id=msg.txn_id
            )
            new = replace(entry, state=CacheState.I, dirty=False, pending_inval=False)
            return new, [ack], None
        if st in (CacheState.I, CacheState.IS_D, CacheState.IM_AD):
            ack = CoherenceMessage(
                MessageType.ACK, self_id, home, msg.address, txn_id=msg.txn_id
            )
            if st is CacheState.IS_D:
                return replace(entry, pending_inval=True), [ack], None
            return entry, [ack], None
        return entry, [], ProtocolError(self_id, msg.address, st, mt)

    if mt is MessageType.DATA_S:
        if st is CacheState.IS_D:
            return replace(entry, state=CacheState.S, data=msg.payload, dirty=False), [], None
        return entry, [], ProtocolError(self_id, msg.address, st, mt)

    if mt is MessageType.DATA_E:
        if st is CacheState.IS_D:
            new = replace(
                entry, state=CacheState.E, data=msg.payload,
                dirty=False, pending_inval=False,
            )
            return new, [], None
        if st is CacheState.IM_AD:
            # acks were aggregated at the home; the grant completes the upgrade
            new = replace(
                entry, state=CacheState.M, data=msg.payload,
                dirty=True, pending_inval=False,
            )
            return new, [], None
        return entry, [], ProtocolError(self_id, msg.address, st, mt)

    if mt is MessageType.FWD_GETS:
        requestor = msg.sender  # home rewrites the sender field to the requestor
        if st in (CacheState.M, CacheState.E, CacheState.O):
            data = CoherenceMessage(
                MessageType.DATA_S, self_id, requestor, msg.address,
                payload=entry.data, txn_id=msg.txn_id,
            )
            return replace(entry, state=CacheState.O), [data], None
        if st is CacheState.IM_AD:
            # the forward crossed our own upgrade; bounce the requestor so it
            # retries against the home once the upgrade settles
            nack = CoherenceMessage(
                MessageType.NACK, self_id, requestor, msg.address, txn_id=msg.txn_id
            )
            return entry, [nack], None
        return entry, [], ProtocolError(self_id, msg.address, st, mt)

    if mt is MessageType.FWD_GETX:
        requestor = msg.sender
        if st in (CacheState.M, CacheState.O, CacheState.E):
            data = CoherenceMessage(
                MessageType.DATA_E, self_id, requestor, msg.address,
                payload=entry.data, acks_expected=0, txn_id=msg.txn_id,
            )
            new = replace(entry, state=CacheState.I, dirty=False, pending_inval=False)
            return new, [data], None
        return entry, [], ProtocolError(self_id, msg.address, st, mt)

    if mt is MessageType.WB_ACK:
        if st is CacheState.MI_A:
            if entry.dirty:
                wb = CoherenceMessage(
                    MessageType.WB_EXCLUSIVE_DIRTY, self_id, home, msg.address,
                    payload=entry.data, txn_id=msg.txn_id,
                )
            else:
                wb = CoherenceMessage(
                    MessageType.WB_CLEAN, self_id, home, msg.address, txn_id=msg.txn_id
                )
            return replace(entry, state=CacheState.I, dirty=False), [wb], None
        return entry, [], ProtocolError(self_id, msg.address, st, mt)

    if mt is MessageType.NACK:
        if st in (CacheState.IS_D, CacheState.IM_AD, CacheState.MI_A):
            # request bounced off a busy home; the fabric owns the retry timer
            return entry, [], None
        return entry, [], ProtocolError(self_id, msg.address, st, mt)

    # GETS/GETX/PUTX/ACK/WB_* addressed at a core have no meaning
    return entry, [], ProtocolError(self_id, msg.address, st, mt)


def dir_apply_msg(
    entry: GlobalDirectoryEntry,
    msg: CoherenceMessage,
    num_cores: int,
) -> tuple[GlobalDirectoryEntry, list[CoherenceMessage], bool]:
    """Apply one message at the home directory slice.

    Returns (new entry, emitted messages, legal).  Every (dstate, type,
    sender) triple outside the table still gets a deterministic answer (NACK
    to the sender, or silence for an inbound NACK/ACK) but is flagged
    legal=False; illegality is data for the monitor, never an exception.
    """
    self_mc = msg.destination
    st = entry.dstate
    mt = msg.msg_type
    sender = msg.sender

    def nack() -> list[CoherenceMessage]:
        return [CoherenceMessage(MessageType.NACK, self_mc, sender, msg.address, txn_id=msg.txn_id)]

    # Busy line: bounce requests, that is part of the protocol.
    if st in BUSY_STATES and mt in REQUEST_TYPES:
        return entry, nack(), True

    if mt is MessageType.GETS and sender.is_core:
        if st is DirState.UNOWNED:
            grant = CoherenceMessage(
                MessageType.DATA_E, self_mc, sender, msg.address,
                payload=entry.mem_data, acks_expected=0, txn_id=msg.txn_id,
            )
            new = replace(entry, dstate=DirState.OWNED, node=sender)
            return new, [grant], True
        if st is DirState.OWNED and sender != entry.node:
            # forward with the sender field rewritten to the requestor; the
            # owner answers it directly with DATA_S (requestor shares
            # implicitly, no sharer list is kept)
            fwd = CoherenceMessage(
                MessageType.FWD_GETS, sender, entry.node, msg.address, txn_id=msg.txn_id
            )
            return entry, [fwd], True
        return entry, nack(), False

    if mt is MessageType.GETX and sender.is_core:
        if st in (DirState.UNOWNED, DirState.OWNED):
            invs = [
                CoherenceMessage(MessageType.INV, self_mc, core(i), msg.address, txn_id=msg.txn_id)
                for i in range(num_cores)
                if core(i) != sender
            ]
            pending = len(invs)
            if pending == 0:
                # single-core system: nothing to invalidate, grant at once
                grant = CoherenceMessage(
                    MessageType.DATA_E, self_mc, sender, msg.address,
                    payload=entry.mem_data, acks_expected=0, txn_id=msg.txn_id,
                )
                new = replace(entry, dstate=DirState.OWNED, node=sender)
                return new, [grant], True
            new = replace(entry, dstate=DirState.BUSY_GETX, node=sender, acks_pending=pending)
            return new, invs, True
        return entry, nack(), False

    if mt is MessageType.ACK:
        if st is DirState.BUSY_GETX:
            mem = msg.payload if msg.payload is not None else entry.mem_data
            pending = entry.acks_pending - 1
            if pending == 0:
                grant = CoherenceMessage(
                    MessageType.DATA_E, self_mc, entry.node, msg.address,
                    payload=mem, acks_expected=num_cores - 1, txn_id=msg.txn_id,
                )
                new = replace(
                    entry, dstate=DirState.OWNED, mem_data=mem, acks_pending=0
                )
                return new, [grant], True
            new = replace(entry, mem_data=mem, acks_pending=pending)
            return new, [], True
        # stray ack; answering it would only breed more strays
        return entry, [], False

    if mt is MessageType.PUTX and sender.is_core:
        if st is DirState.OWNED and sender == entry.node:
            wb_ack = CoherenceMessage(
                MessageType.WB_ACK, self_mc, sender, msg.address, txn_id=msg.txn_id
            )
            new = replace(entry, dstate=DirState.BUSY_WB, node=sender)
            return new, [wb_ack], True
        return entry, nack(), False

    if mt is MessageType.WB_EXCLUSIVE_DIRTY:
        if st is DirState.BUSY_WB and sender == entry.node:
            new = replace(
                entry, dstate=DirState.UNOWNED, node=None, mem_data=msg.payload
            )
            return new, [], True
        return entry, nack(), False

    if mt is MessageType.WB_CLEAN:
        if st is DirState.BUSY_WB and sender == entry.node:
            new = replace(entry, dstate=DirState.UNOWNED, node=None)
            return new, [], True
        return entry, nack(), False

    if mt is MessageType.NACK:
        # never answer a NACK: a misdelivered one must not ping-pong
        return entry, [], False

    # INV/DATA_*/FWD_*/WB_ACK at a directory, or requests from a non-core
    return entry, nack(), False
