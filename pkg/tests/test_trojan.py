"""Interception filters and the two-phase forging state machine."""

import pytest

from cohsim.protocol import CacheState, CoherenceMessage, MessageType, core, mc
from cohsim.trojan import (
    Block,
    Diverting,
    Forging,
    Inject,
    Masquerading,
    Modify,
    Modifying,
    Pass,
    PassiveReading,
    TickAfterAcks,
    TriggerKind,
    TriggerMode,
    TrojanPhase,
    TrojanState,
    WbAckArrived,
    Observed,
    forging_step,
    intercept_inbound,
    intercept_outbound,
)

LINE = 8
SELF = core(7)
HOME = mc(0)
TARGET = 0x0
VICTIM_LINE = bytes([0x01] + [0x00] * 7)
ATTACK_LINE = bytes([0x05] + [0x00] * 7)


def make_state(kind, num_mcs=2):
    return TrojanState(kind=kind, self_core=SELF, num_mcs=num_mcs,
                       line_size=LINE, retry_delay=20)


def inbound(mt, sender=HOME, addr=TARGET, payload=None, acks=None, txn=4):
    return CoherenceMessage(mt, sender, SELF, addr, payload=payload,
                            acks_expected=acks, txn_id=txn)


# --- passive reading ---------------------------------------------------------

def test_passive_snoops_only_invalidations():
    state = make_state(PassiveReading())
    action, _ = intercept_inbound(state, inbound(MessageType.INV, addr=0x40), now=9)
    assert isinstance(action, Pass)
    action, _ = intercept_inbound(
        state, inbound(MessageType.DATA_S, payload=VICTIM_LINE), now=10
    )
    assert isinstance(action, Pass)
    assert state.snoop_log == [(9, 0x40, MessageType.INV)]


def test_passive_never_touches_outbound():
    state = make_state(PassiveReading())
    msg = CoherenceMessage(MessageType.GETX, SELF, HOME, TARGET)
    action, _ = intercept_outbound(state, msg)
    assert isinstance(action, Pass)


# --- masquerading ---------------------------------------------------------------

def test_masquerading_response_forges_an_ack_and_swallows_the_inv():
    state = make_state(Masquerading(fake_sender=core(2), variant="response"))
    action, _ = intercept_inbound(state, inbound(MessageType.INV, txn=11), now=0)
    assert isinstance(action, Inject)
    assert isinstance(action.then, Block)
    (fake,) = action.extra
    assert fake.msg_type is MessageType.ACK
    assert fake.sender == core(2)
    assert fake.destination == HOME
    assert fake.txn_id == 11
    assert fake.injected
    assert state.blocked_count == 1


def test_masquerading_request_rewrites_the_getx_sender():
    state = make_state(Masquerading(fake_sender=core(2), variant="request"))
    msg = CoherenceMessage(MessageType.GETX, SELF, HOME, TARGET)
    action, _ = intercept_outbound(state, msg)
    assert isinstance(action, Modify)
    assert action.replacement.sender == core(2)
    assert action.replacement.msg_type is MessageType.GETX
    # reads are left alone
    gets = CoherenceMessage(MessageType.GETS, SELF, HOME, TARGET)
    action, _ = intercept_outbound(state, gets)
    assert isinstance(action, Pass)


# --- modifying ---------------------------------------------------------------

def test_modifying_rewrite_upgrades_outgoing_data():
    state = make_state(Modifying(variant="rewrite"))
    data = CoherenceMessage(MessageType.DATA_S, SELF, core(1), TARGET,
                            payload=VICTIM_LINE)
    action, _ = intercept_outbound(state, data)
    assert isinstance(action, Modify)
    assert action.replacement.msg_type is MessageType.DATA_E
    assert action.replacement.payload == VICTIM_LINE


def test_modifying_forward_swallows_the_fwd_and_invalidates_the_requestor():
    state = make_state(Modifying(variant="forward"), num_mcs=2)
    fwd = inbound(MessageType.FWD_GETS, sender=core(1), addr=0x8)
    action, _ = intercept_inbound(state, fwd, now=0)
    assert isinstance(action, Inject)
    assert isinstance(action.then, Block)
    (inv,) = action.extra
    assert inv.msg_type is MessageType.INV
    assert inv.destination == core(1)
    # the forged INV claims to come from the target's home slice
    assert inv.sender == mc(1)
    assert inv.injected


# --- diverting ---------------------------------------------------------------

def test_diverting_redirects_invalidations():
    state = make_state(Diverting(divert_to=core(2)))
    action, _ = intercept_inbound(state, inbound(MessageType.INV, txn=3), now=0)
    assert isinstance(action, Inject)
    assert isinstance(action.then, Block)
    (moved,) = action.extra
    assert moved.destination == core(2)
    assert moved.msg_type is MessageType.INV
    assert moved.txn_id == 3
    assert moved.injected
    # everything else passes
    action, _ = intercept_inbound(
        state, inbound(MessageType.DATA_E, payload=VICTIM_LINE, acks=0), now=1
    )
    assert isinstance(action, Pass)


# --- forging ---------------------------------------------------------------

def forging_state(trigger=TriggerMode(TriggerKind.ON_INVALIDATION), offset=0,
                  payload=ATTACK_LINE):
    return make_state(Forging(target=TARGET, payload=payload,
                              trigger=trigger, offset=offset))


def test_forging_full_phase_walk():
    state = forging_state()

    # dormant: unrelated traffic passes
    action, _ = intercept_inbound(
        state, inbound(MessageType.INV, addr=0x80), now=0
    )
    assert isinstance(action, Pass)
    assert state.phase is TrojanPhase.DORMANT

    # trigger: INV for the target injects a GETX and still passes the INV on
    action, _ = intercept_inbound(state, inbound(MessageType.INV), now=5)
    assert isinstance(action, Inject)
    assert isinstance(action.then, Pass)
    (getx,) = action.extra
    assert getx.msg_type is MessageType.GETX
    assert getx.sender == SELF
    assert getx.destination == HOME
    assert getx.injected
    assert state.phase is TrojanPhase.PHASE1_AWAIT_DATA

    # grant: hidden from the host, shadow registers mirror ownership
    grant = inbound(MessageType.DATA_E, payload=VICTIM_LINE, acks=7)
    action, _ = intercept_inbound(state, grant, now=40)
    assert isinstance(action, Block)
    assert state.phase is TrojanPhase.PHASE1_COMPLETE
    assert state.shadow_state is CacheState.M
    assert state.shadow_data == ATTACK_LINE
    assert state.acks_seen == 7

    # phase 2 opens with an injected writeback request
    actions, _ = forging_step(state, TickAfterAcks())
    (action,) = actions
    assert isinstance(action, Inject)
    (putx,) = action.extra
    assert putx.msg_type is MessageType.PUTX
    assert state.phase is TrojanPhase.PHASE2_AWAIT_WB_ACK

    # the WB_ACK is answered with the shadow data and never reaches the host
    action, _ = intercept_inbound(state, inbound(MessageType.WB_ACK), now=80)
    assert isinstance(action, Inject)
    assert isinstance(action.then, Block)
    (wb,) = action.extra
    assert wb.msg_type is MessageType.WB_EXCLUSIVE_DIRTY
    assert wb.payload == ATTACK_LINE
    assert wb.injected
    assert state.phase is TrojanPhase.DONE

    # done: back to passing everything
    action, _ = intercept_inbound(state, inbound(MessageType.INV), now=99)
    assert isinstance(action, Pass)


def test_forging_retries_after_a_busy_nack():
    state = forging_state()
    intercept_inbound(state, inbound(MessageType.INV), now=0)
    action, _ = intercept_inbound(state, inbound(MessageType.NACK), now=10)
    assert isinstance(action, Inject)
    assert isinstance(action.then, Block)
    assert action.delay == 20
    (retry,) = action.extra
    assert retry.msg_type is MessageType.GETX
    assert state.phase is TrojanPhase.PHASE1_AWAIT_DATA


def test_forging_blocks_all_target_traffic_mid_phase():
    state = forging_state()
    intercept_inbound(state, inbound(MessageType.INV), now=0)
    action, _ = intercept_inbound(state, inbound(MessageType.INV), now=3)
    assert isinstance(action, Block)
    # other addresses keep flowing
    action, _ = intercept_inbound(state, inbound(MessageType.INV, addr=0x80), now=4)
    assert isinstance(action, Pass)


def test_forging_immediate_trigger_fires_without_traffic():
    state = forging_state(trigger=TriggerMode(TriggerKind.IMMEDIATE))
    actions, _ = forging_step(state, TickAfterAcks())
    (action,) = actions
    assert isinstance(action, Inject)
    assert action.extra[0].msg_type is MessageType.GETX
    assert state.phase is TrojanPhase.PHASE1_AWAIT_DATA


def test_forging_on_nth_observation_trigger():
    state = forging_state(trigger=TriggerMode(TriggerKind.ON_NTH_OBSERVATION, n=2))
    action, _ = intercept_inbound(state, inbound(MessageType.INV), now=0)
    assert isinstance(action, Pass)
    assert state.phase is TrojanPhase.DORMANT
    action, _ = intercept_inbound(state, inbound(MessageType.INV), now=1)
    assert isinstance(action, Inject)
    assert state.phase is TrojanPhase.PHASE1_AWAIT_DATA


def test_trigger_mode_validates_n():
    with pytest.raises(ValueError):
        TriggerMode(TriggerKind.ON_NTH_OBSERVATION, n=0)


def test_payload_overlay_at_an_offset():
    state = forging_state(offset=6, payload=b"\xaa\xbb")
    intercept_inbound(state, inbound(MessageType.INV), now=0)
    grant = inbound(MessageType.DATA_E, payload=bytes([0x11] * LINE), acks=0)
    intercept_inbound(state, grant, now=1)
    assert state.shadow_data == bytes([0x11] * 6 + [0xAA, 0xBB])


def test_payload_overlay_truncates_at_the_line_end():
    state = forging_state(offset=7, payload=b"\xaa\xbb\xcc")
    intercept_inbound(state, inbound(MessageType.INV), now=0)
    grant = inbound(MessageType.DATA_E, payload=bytes(LINE), acks=0)
    intercept_inbound(state, grant, now=1)
    assert state.shadow_data == bytes(7) + b"\xaa"


def test_phase_ordering_is_monotone():
    state = forging_state()
    state.advance(TrojanPhase.PHASE2_AWAIT_WB_ACK)
    state.advance(TrojanPhase.PHASE2_AWAIT_WB_ACK)  # same phase is fine
    state.advance(TrojanPhase.DONE)
    with pytest.raises(ValueError):
        state.advance(TrojanPhase.PHASE1_AWAIT_DATA)


def test_forging_blocked_count_tracks_swallowed_messages():
    state = forging_state()
    intercept_inbound(state, inbound(MessageType.INV), now=0)           # trigger, passes
    intercept_inbound(state, inbound(MessageType.INV), now=1)           # blocked
    grant = inbound(MessageType.DATA_E, payload=VICTIM_LINE, acks=0)
    intercept_inbound(state, grant, now=2)                              # blocked
    forging_step(state, TickAfterAcks())
    intercept_inbound(state, inbound(MessageType.WB_ACK), now=3)        # blocked
    assert state.blocked_count == 3
    assert state.phase is TrojanPhase.DONE


def test_wb_ack_stimulus_routing():
    state = forging_state()
    state.advance(TrojanPhase.PHASE2_AWAIT_WB_ACK)
    state.shadow_data = ATTACK_LINE
    actions, _ = forging_step(state, WbAckArrived(inbound(MessageType.WB_ACK)))
    (action,) = actions
    assert isinstance(action, Inject)
    assert action.extra[0].msg_type is MessageType.WB_EXCLUSIVE_DIRTY


def test_forging_phase2_backs_off_on_nack():
    state = forging_state()
    state.advance(TrojanPhase.PHASE2_AWAIT_WB_ACK)
    state.shadow_data = ATTACK_LINE
    actions, _ = forging_step(state, Observed(inbound(MessageType.NACK)))
    (action,) = actions
    assert isinstance(action, Inject)
    assert action.delay == 20
    assert action.extra[0].msg_type is MessageType.PUTX
    assert state.phase is TrojanPhase.PHASE2_AWAIT_WB_ACK
