"""Hardware-Trojan interception layer at a compromised core's network boundary.

The Trojan sits between the core's network interface and its local state
directory: every inbound message can be passed, blocked, rewritten or
augmented with injected traffic before the cache controller sees it, and
likewise for outbound messages.  Five attack behaviors are provided:

- passive reading: snoop invalidation addresses, never touch traffic;
- masquerading: answer invalidations with an acknowledgment carrying a fake
  sender (response variant), or rewrite the sender of the core's own
  exclusive requests (request variant, which strands the response);
- modifying: rewrite an outgoing DATA_S into DATA_E (rewrite variant), or
  swallow an inbound forward and invalidate the requestor (forward variant);
- diverting: resend an inbound invalidation to a different destination;
- forging: a two-phase state machine that first acquires directory-recognized
  ownership of a target line with an injected GETX while hiding the response
  from the host core, then writes attacker data to memory through a
  legal-looking eviction (PUTX / WB_ACK / WB_EXCLUSIVE_DIRTY).

Every message the forging attack injects is legal at the directory; the host
core's own state for the target never leaves I.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from .protocol import (
    CacheState,
    CoherenceMessage,
    MessageType,
    NodeId,
    addr_to_home,
)


# --- filter actions -----------------------------------------------------

@dataclass(frozen=True)
class Pass:
    pass


@dataclass(frozen=True)
class Block:
    pass


@dataclass(frozen=True)
class Modify:
    replacement: CoherenceMessage


@dataclass(frozen=True)
class Inject:
    """Emit extra messages, then apply `then` to the intercepted one.

    `delay` postpones the injected sends (cycles); used for retry backoff
    when a forged request bounces off a busy directory.
    """

    extra: tuple[CoherenceMessage, ...]
    then: Pass | Block = Pass()
    delay: int = 0


FilterAction = Pass | Block | Modify | Inject

PASS = Pass()
BLOCK = Block()


# --- attack configuration -----------------------------------------------

class TriggerKind(Enum):
    IMMEDIATE = "immediate"
    ON_INVALIDATION = "on_invalidation"
    ON_NTH_OBSERVATION = "on_nth_observation"


@dataclass(frozen=True)
class TriggerMode:
    kind: TriggerKind
    n: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("trigger n must be >= 1")


@dataclass(frozen=True)
class PassiveReading:
    pass


@dataclass(frozen=True)
class Masquerading:
    fake_sender: NodeId
    variant: str = "response"  # response: fake ACK; request: rewrite GETX sender


@dataclass(frozen=True)
class Modifying:
    variant: str = "rewrite"  # rewrite: DATA_S -> DATA_E; forward: swallow FWD_GETS


@dataclass(frozen=True)
class Diverting:
    divert_to: NodeId


@dataclass(frozen=True)
class Forging:
    target: int
    payload: bytes
    trigger: TriggerMode = TriggerMode(TriggerKind.ON_INVALIDATION)
    offset: int = 0


AttackKind = PassiveReading | Masquerading | Modifying | Diverting | Forging


class TrojanPhase(Enum):
    DORMANT = "Dormant"
    PHASE1_AWAIT_DATA = "Phase1_AwaitData"
    PHASE1_COMPLETE = "Phase1_Complete"
    PHASE2_AWAIT_WB_ACK = "Phase2_AwaitWbAck"
    DONE = "Done"


_PHASE_ORDER = {p: i for i, p in enumerate(TrojanPhase)}


@dataclass
class TrojanState:
    """Registers of the implanted logic.

    shadow_state/shadow_data imitate what the host core's local directory
    would hold had it performed the forged transaction itself; the host
    directory is kept blind instead.
    """

    kind: AttackKind
    self_core: NodeId
    num_mcs: int = 1
    line_size: int = 8
    retry_delay: int = 20
    phase: TrojanPhase = TrojanPhase.DORMANT
    shadow_state: CacheState = CacheState.I
    shadow_data: bytes = b""
    acks_seen: int = 0
    observations: int = 0
    snoop_log: list[tuple[int, int, MessageType]] = field(default_factory=list)
    blocked_count: int = 0

    def home_of(self, addr: int) -> NodeId:
        return addr_to_home(addr, self.num_mcs, self.line_size)

    def advance(self, phase: TrojanPhase) -> None:
        if _PHASE_ORDER[phase] < _PHASE_ORDER[self.phase]:
            raise ValueError(f"phase regression {self.phase} -> {phase}")
        self.phase = phase


# --- forging stimuli ----------------------------------------------------

@dataclass(frozen=True)
class Observed:
    msg: CoherenceMessage


@dataclass(frozen=True)
class TickAfterAcks:
    pass


@dataclass(frozen=True)
class WbAckArrived:
    msg: CoherenceMessage


ForgingStimulus = Observed | TickAfterAcks | WbAckArrived


def _overlay(received: bytes, payload: bytes, offset: int, line_size: int) -> bytes:
    buf = bytearray(received.ljust(line_size, b"\x00")[:line_size])
    end = min(line_size, offset + len(payload))
    buf[offset:end] = payload[: end - offset]
    return bytes(buf)


def _forged_getx(state: TrojanState) -> CoherenceMessage:
    attack: Forging = state.kind
    return CoherenceMessage(
        MessageType.GETX, state.self_core, state.home_of(attack.target),
        attack.target, injected=True,
    )


def _forged_putx(state: TrojanState) -> CoherenceMessage:
    attack: Forging = state.kind
    return CoherenceMessage(
        MessageType.PUTX, state.self_core, state.home_of(attack.target),
        attack.target, injected=True,
    )


def _forged_writeback(state: TrojanState) -> CoherenceMessage:
    attack: Forging = state.kind
    return CoherenceMessage(
        MessageType.WB_EXCLUSIVE_DIRTY, state.self_core,
        state.home_of(attack.target), attack.target,
        payload=state.shadow_data, injected=True,
    )


def _trigger_satisfied(state: TrojanState, msg: CoherenceMessage) -> bool:
    attack: Forging = state.kind
    trig = attack.trigger
    if msg.address != attack.target:
        return False
    if trig.kind is TriggerKind.ON_INVALIDATION:
        return msg.msg_type is MessageType.INV
    if trig.kind is TriggerKind.ON_NTH_OBSERVATION:
        return state.observations >= trig.n
    return False


def forging_step(
    state: TrojanState, stimulus: ForgingStimulus
) -> tuple[list[FilterAction], TrojanState]:
    """Advance the two-phase forging state machine.

    Phase 1: on trigger, inject GETX for the target; when the directory's
    DATA_E grant arrives, hide it from the host, mirror ownership in the
    shadow registers and lay the attack payload over the received line.
    Phase 2: inject PUTX; answer the WB_ACK with a WB_EXCLUSIVE_DIRTY
    carrying the shadow data.  While a phase is in flight, every inbound
    message for the target is blocked so the host directory stays at I.
    """
    attack = state.kind
    assert isinstance(attack, Forging)

    if state.phase is TrojanPhase.DORMANT:
        if isinstance(stimulus, TickAfterAcks):
            if attack.trigger.kind is TriggerKind.IMMEDIATE:
                state.advance(TrojanPhase.PHASE1_AWAIT_DATA)
                return [Inject((_forged_getx(state),), then=PASS)], state
            return [PASS], state
        if isinstance(stimulus, Observed):
            msg = stimulus.msg
            if msg.address == attack.target:
                state.observations += 1
            if _trigger_satisfied(state, msg):
                state.advance(TrojanPhase.PHASE1_AWAIT_DATA)
                # the triggering message still reaches the host core: its
                # acknowledgment is what lets the victim's own transaction
                # finish normally
                return [Inject((_forged_getx(state),), then=PASS)], state
            return [PASS], state
        return [PASS], state

    if state.phase is TrojanPhase.PHASE1_AWAIT_DATA:
        if isinstance(stimulus, Observed) and stimulus.msg.address == attack.target:
            msg = stimulus.msg
            if msg.msg_type is MessageType.DATA_E:
                state.shadow_state = CacheState.M
                state.shadow_data = _overlay(
                    msg.payload, attack.payload, attack.offset, state.line_size
                )
                state.acks_seen = msg.acks_expected or 0
                state.blocked_count += 1
                state.advance(TrojanPhase.PHASE1_COMPLETE)
                return [BLOCK], state
            if msg.msg_type is MessageType.NACK:
                # directory busy with the victim's own transaction; back off
                state.blocked_count += 1
                return [Inject((_forged_getx(state),), then=BLOCK,
                               delay=state.retry_delay)], state
            state.blocked_count += 1
            return [BLOCK], state
        return [PASS], state

    if state.phase is TrojanPhase.PHASE1_COMPLETE:
        if isinstance(stimulus, TickAfterAcks):
            state.advance(TrojanPhase.PHASE2_AWAIT_WB_ACK)
            return [Inject((_forged_putx(state),), then=PASS)], state
        if isinstance(stimulus, Observed) and stimulus.msg.address == attack.target:
            state.blocked_count += 1
            return [BLOCK], state
        return [PASS], state

    if state.phase is TrojanPhase.PHASE2_AWAIT_WB_ACK:
        if isinstance(stimulus, (Observed, WbAckArrived)):
            msg = stimulus.msg
            if msg.address == attack.target:
                if msg.msg_type is MessageType.WB_ACK:
                    state.blocked_count += 1
                    state.advance(TrojanPhase.DONE)
                    return [Inject((_forged_writeback(state),), then=BLOCK)], state
                if msg.msg_type is MessageType.NACK:
                    state.blocked_count += 1
                    return [Inject((_forged_putx(state),), then=BLOCK,
                                   delay=state.retry_delay)], state
                state.blocked_count += 1
                return [BLOCK], state
        return [PASS], state

    # Done: the implant goes quiet
    return [PASS], state


# --- boundary filters ---------------------------------------------------

def intercept_inbound(
    state: TrojanState, msg: CoherenceMessage, now: int
) -> tuple[FilterAction, TrojanState]:
    """Filter one message arriving at the compromised core."""
    kind = state.kind

    if isinstance(kind, PassiveReading):
        if msg.msg_type is MessageType.INV:
            state.snoop_log.append((now, msg.address, msg.msg_type))
        return PASS, state

    if isinstance(kind, Masquerading):
        if kind.variant == "response" and msg.msg_type is MessageType.INV:
            fake_ack = CoherenceMessage(
                MessageType.ACK, kind.fake_sender, msg.sender, msg.address,
                txn_id=msg.txn_id, injected=True,
            )
            state.blocked_count += 1
            return Inject((fake_ack,), then=BLOCK), state
        return PASS, state

    if isinstance(kind, Modifying):
        if kind.variant == "forward" and msg.msg_type is MessageType.FWD_GETS:
            # the forward's sender field names the original requestor; kill
            # its fill and knock out whatever it thinks it is waiting for
            requestor = msg.sender
            forged_inv = CoherenceMessage(
                MessageType.INV, state.home_of(msg.address), requestor,
                msg.address, txn_id=msg.txn_id, injected=True,
            )
            state.blocked_count += 1
            return Inject((forged_inv,), then=BLOCK), state
        return PASS, state

    if isinstance(kind, Diverting):
        if msg.msg_type is MessageType.INV:
            diverted = replace(msg, destination=kind.divert_to, injected=True)
            state.blocked_count += 1
            return Inject((diverted,), then=BLOCK), state
        return PASS, state

    if isinstance(kind, Forging):
        if msg.msg_type is MessageType.WB_ACK and state.phase is TrojanPhase.PHASE2_AWAIT_WB_ACK:
            actions, state = forging_step(state, WbAckArrived(msg))
        else:
            actions, state = forging_step(state, Observed(msg))
        return actions[0], state

    return PASS, state


def intercept_outbound(
    state: TrojanState, msg: CoherenceMessage
) -> tuple[FilterAction, TrojanState]:
    """Filter one message the compromised core is sending."""
    kind = state.kind

    if isinstance(kind, Masquerading):
        if kind.variant == "request" and msg.msg_type is MessageType.GETX:
            return Modify(replace(msg, sender=kind.fake_sender)), state
        return PASS, state

    if isinstance(kind, Modifying):
        if kind.variant == "rewrite" and msg.msg_type is MessageType.DATA_S:
            return Modify(replace(msg, msg_type=MessageType.DATA_E)), state
        return PASS, state

    return PASS, state
