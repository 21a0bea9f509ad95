"""One simulated VoIP call with a mid-call interface switch.

Topology: a two-interface mobile node (MN) talks to a wired correspondent
node (CN). Each MN interface has its own uplink and downlink access link;
the CN and the registrar sit together on an ideal core, so the access links
are the only modeled hops.

Timeline: REGISTER at t=0 (all Up interfaces, q-weighted), CN's INVITE at
200 ms forwarded through the registrar's priority list, media on
[call_start, call_start+duration], switching trigger at
call_start + switch_offset, watchdog 10 s later.

A media packet's fate is sealed at generation time: the route (including
whether the required MN interface is Closed) is evaluated when the packet
is generated, and the delivery outcome is computed at the moment it is
offered to the link. Packets already in flight when an interface closes are
therefore still delivered, while packets generated between the close and
the CN's destination switch are the hard procedure's losses.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .core import (
    DL,
    LOSS_CLOSED,
    UL,
    Address,
    CodecProfile,
    IfaceState,
    InterfaceDescriptor,
    InternalInvariantError,
    SimTime,
    SimulationError,
)
from .handoff import (
    HandoffLog,
    HandoffPhase,
    HandoffProcedure,
    HandoffState,
    cn_on_reinvite,
    media_route,
    mn_on_ok,
    mn_trigger,
)
from .simnet import Engine, Link, LinkState, RngStream
from .sip import (
    ForwardTransaction,
    Registrar,
    ReregTrigger,
    SessionDescriptor,
    SignalingConfig,
    SignalingLog,
    SipMessage,
    SipMethod,
    build_register,
    needs_reregistration,
)
from .traffic import (
    DEFAULT_HEADER_OVERHEAD_BYTES,
    MediaPacket,
    PacketTrace,
    start_stream,
)

MN_URI = "mn"
CN_URI = "cn"
CN_IFACE = "cn0"
MEDIA_PORT = 5004


@dataclass(frozen=True)
class LinkParams:
    """Per-direction access link parameters for one MN interface."""

    bitrate_kbps: Optional[float]
    prop_delay_us: Union[int, tuple[int, int]]
    queue_capacity_pkts: int = 50
    loss_prob: float = 0.0


@dataclass
class CallSpec:
    """Everything one repetition needs; immutable during the run."""

    codec: CodecProfile
    procedure: HandoffProcedure
    switch_from: str
    switch_to: str
    interfaces: list[InterfaceDescriptor]
    links: dict[str, LinkParams]
    call_start_us: SimTime = 1_000_000
    call_duration_us: SimTime = 60_000_000
    switch_offset_us: SimTime = 30_000_000
    switch_jitter_us: SimTime = 0
    header_overhead_bytes: int = DEFAULT_HEADER_OVERHEAD_BYTES
    signaling: SignalingConfig = field(default_factory=SignalingConfig)
    watchdog_us: SimTime = 10_000_000
    seed: int = 1
    run_id: str = "run"
    log_events: bool = False
    down_links: frozenset[str] = frozenset()
    # Force-drop plan for the handoff handshake: {(method, occurrence)} with
    # method in {"REINVITE", "OK"}, occurrence counting that method's sends
    # during the handoff (0 = first send, 1 = first retransmission, ...).
    signaling_drop_plan: frozenset[tuple[str, int]] = frozenset()

    def validate(self) -> list[str]:
        bad: list[str] = []
        iface_ids = [i.iface_id for i in self.interfaces]
        if len(set(iface_ids)) != len(iface_ids):
            bad.append("duplicate interface ids")
        for name in (self.switch_from, self.switch_to):
            if name not in iface_ids:
                bad.append(f"switch interface {name!r} not among interfaces")
            if name not in self.links:
                bad.append(f"no link parameters for interface {name!r}")
        if self.switch_from == self.switch_to:
            bad.append("switch_from equals switch_to")
        if self.call_duration_us <= 0:
            bad.append("call duration must be positive")
        if not 0 < self.switch_offset_us < self.call_duration_us:
            bad.append("switch offset must fall inside the call")
        if self.header_overhead_bytes < 0:
            bad.append("header overhead must be non-negative")
        return bad


@dataclass
class RunResult:
    """Everything a run produced: trace, logs, and the final session state."""

    run_id: str
    trace: PacketTrace
    signaling: SignalingLog
    handoff_log: HandoffLog
    event_log: list[str]
    state: HandoffState
    aborted: bool
    abort_reason: Optional[str]
    t_trigger: Optional[SimTime]
    t_cn_switch: Optional[SimTime]
    t_completed: Optional[SimTime]
    closed_old_at: Optional[SimTime]
    setup_transaction: Optional[ForwardTransaction]
    registrar: Registrar


class _CallRuntime:
    """Wires endpoints, links, and logs for one run."""

    def __init__(self, spec: CallSpec):
        bad = spec.validate()
        if bad:
            raise SimulationError("invalid call spec: " + "; ".join(bad))
        self.spec = spec
        self.engine = Engine(log_events=spec.log_events)
        self.rng = RngStream(spec.seed)
        self.trace = PacketTrace()
        self.signaling = SignalingLog()
        self.handoff_log = HandoffLog()
        self._msg_ids = itertools.count(1)

        self.links_ul: dict[str, Link] = {}
        self.links_dl: dict[str, Link] = {}
        for iface, lp in spec.links.items():
            self.links_ul[iface] = Link(
                self.engine, f"{iface}-ul", lp.bitrate_kbps, lp.prop_delay_us,
                lp.queue_capacity_pkts, lp.loss_prob,
                self.rng.substream(f"link/{iface}-ul"))
            self.links_dl[iface] = Link(
                self.engine, f"{iface}-dl", lp.bitrate_kbps, lp.prop_delay_us,
                lp.queue_capacity_pkts, lp.loss_prob,
                self.rng.substream(f"link/{iface}-dl"))
        for link_id in spec.down_links:
            for link in (*self.links_ul.values(), *self.links_dl.values()):
                if link.link_id == link_id:
                    link.set_state(LinkState.DOWN)

        mn_addresses = {i.iface_id: i.address for i in spec.interfaces}
        self.cn_address = Address(CN_URI, CN_IFACE, MEDIA_PORT)
        self.state = HandoffState(
            old_iface=spec.switch_from, new_iface=spec.switch_to,
            mn_addresses=mn_addresses, cn_address=self.cn_address,
            iface_states={i.iface_id: i.state for i in spec.interfaces})
        self.iface_by_address = {a: i for i, a in mn_addresses.items()}

        self.registrar = Registrar(self.engine, self._registrar_send,
                                   spec.signaling)
        self.setup_transaction: Optional[ForwardTransaction] = None
        self.aborted = False
        self.abort_reason: Optional[str] = None
        self.closed_old_at: Optional[SimTime] = None

        # Setup-phase handshake bookkeeping.
        self._invite_id = 0
        self._mn_established = False
        self._cn_established = False
        self._mn_seen_invites: set[int] = set()
        self._setup_ok: Optional[SipMessage] = None
        self._setup_ok_acked = False
        self._setup_ok_rtx_left = spec.signaling.max_retransmissions

        # Handoff handshake bookkeeping.
        self._reinvite: Optional[SipMessage] = None
        self._reinvite_rtx_left = spec.signaling.max_retransmissions
        self._handoff_ok: Optional[SipMessage] = None
        self._handoff_ok_acked = False
        self._handoff_ok_rtx_left = spec.signaling.max_retransmissions
        self._drop_counts = {"REINVITE": 0, "OK": 0}

    # -- signaling plumbing ------------------------------------------------

    def _next_id(self) -> int:
        return next(self._msg_ids)

    def _forced_drop(self, msg: SipMessage) -> bool:
        """Consult the drop plan for handoff-handshake sends."""
        if msg.method is SipMethod.REINVITE:
            key = "REINVITE"
        elif (msg.method is SipMethod.OK and self._reinvite is not None
                and msg.in_reply_to == self._reinvite.msg_id):
            key = "OK"
        else:
            return False
        occurrence = self._drop_counts[key]
        self._drop_counts[key] = occurrence + 1
        return (key, occurrence) in self.spec.signaling_drop_plan

    def _mn_send(self, msg: SipMessage) -> None:
        """MN emits a signaling message over its via_iface uplink."""
        iface = msg.via_iface
        if self.state.iface_states[iface] is IfaceState.CLOSED:
            raise InternalInvariantError(
                f"MN tried to send {msg.method.value} from Closed "
                f"interface {iface}")
        if self._forced_drop(msg):
            self.signaling.record(self.engine.now, msg, "dropped:forced")
            return
        arrival, cause = self.links_ul[iface].transmit(
            msg.size_bytes,
            on_arrive=lambda t, m=msg: self._core_receive(m),
            note=f"sip-{msg.method.value}")
        outcome = (f"delivered@{arrival}" if cause is None
                   else f"dropped:{cause}")
        self.signaling.record(self.engine.now, msg, outcome)

    def _cn_send(self, msg: SipMessage) -> None:
        """CN emits a signaling message over the via_iface downlink."""
        if self._forced_drop(msg):
            self.signaling.record(self.engine.now, msg, "dropped:forced")
            return
        arrival, cause = self.links_dl[msg.via_iface].transmit(
            msg.size_bytes,
            on_arrive=lambda t, m=msg: self._mn_receive(m),
            note=f"sip-{msg.method.value}")
        outcome = (f"delivered@{arrival}" if cause is None
                   else f"dropped:{cause}")
        self.signaling.record(self.engine.now, msg, outcome)

    def _registrar_send(self, msg: SipMessage, contact: Address) -> None:
        attempt = replace(msg, via_iface=self.iface_by_address[contact])
        self._cn_send(attempt)

    # -- setup phase -------------------------------------------------------

    def _send_register(self) -> None:
        msg = build_register(MN_URI, self.spec.interfaces,
                             config=self.spec.signaling,
                             msg_id=self._next_id())
        self._mn_send(msg)

    def _send_invite(self) -> None:
        session = SessionDescriptor(media_src=self.cn_address,
                                    media_dst=None,
                                    codec=self.spec.codec.name)
        invite = SipMessage(method=SipMethod.INVITE, from_uri=CN_URI,
                            to_uri=MN_URI, via_iface=CN_IFACE,
                            size_bytes=self.spec.signaling.invite_bytes,
                            session=session, msg_id=self._next_id())
        self._invite_id = invite.msg_id
        # CN and registrar share the core: hand over without a link hop.
        self.setup_transaction = self.registrar.forward_with_fallback(invite)

    def _core_receive(self, msg: SipMessage) -> None:
        """Arrival at the wired core (registrar + CN)."""
        if msg.method is SipMethod.REGISTER:
            self.registrar.handle_register(msg)
            return
        if msg.method is SipMethod.OK and msg.in_reply_to == self._invite_id:
            answered_from = self.state.mn_addresses.get(msg.via_iface)
            self.registrar.deliver_answer(msg, from_address=answered_from)
            if not self._cn_established:
                self._cn_established = True
                ack = SipMessage(method=SipMethod.ACK, from_uri=CN_URI,
                                 to_uri=MN_URI, via_iface=msg.via_iface,
                                 size_bytes=self.spec.signaling.ack_bytes,
                                 msg_id=self._next_id(),
                                 in_reply_to=msg.msg_id)
                self._cn_send(ack)
            return
        if msg.method is SipMethod.REINVITE:
            self._cn_on_reinvite(msg)
            return
        if msg.method is SipMethod.OK and self._reinvite is not None \
                and msg.in_reply_to == self._reinvite.msg_id:
            return  # stray duplicate answer, transaction level only
        if msg.method is SipMethod.ACK:
            self._handoff_ok_acked = True
            return

    def _mn_receive(self, msg: SipMessage) -> None:
        if msg.method is SipMethod.INVITE:
            self._mn_on_invite(msg)
        elif msg.method is SipMethod.OK:
            self._mn_on_handoff_ok(msg)
        elif msg.method is SipMethod.ACK:
            if msg.in_reply_to == (self._setup_ok.msg_id
                                   if self._setup_ok else -1):
                self._setup_ok_acked = True
                self._mn_established = True

    def _mn_on_invite(self, msg: SipMessage) -> None:
        if msg.msg_id in self._mn_seen_invites and self._setup_ok is not None:
            self._mn_send(self._setup_ok)
            return
        self._mn_seen_invites.add(msg.msg_id)
        media_addr = self.state.mn_addresses[self.spec.switch_from]
        session = SessionDescriptor(media_src=media_addr,
                                    media_dst=self.cn_address,
                                    codec=self.spec.codec.name)
        ok = SipMessage(method=SipMethod.OK, from_uri=MN_URI, to_uri=CN_URI,
                        via_iface=msg.via_iface,
                        size_bytes=self.spec.signaling.ok_bytes,
                        session=session, msg_id=self._next_id(),
                        in_reply_to=msg.msg_id)
        self._setup_ok = ok
        self._mn_send(ok)
        if self._setup_ok_rtx_left > 0:
            self.engine.schedule_in(
                self.spec.signaling.rtx_interval_ms * 1000,
                self._setup_ok_rtx, kind="sip-rtx", subject="setup-ok")

    def _setup_ok_rtx(self) -> None:
        if not self._setup_ok_acked and self._setup_ok_rtx_left > 0:
            self._setup_ok_rtx_left -= 1
            self._mn_send(self._setup_ok)
            if self._setup_ok_rtx_left > 0:
                self.engine.schedule_in(
                    self.spec.signaling.rtx_interval_ms * 1000,
                    self._setup_ok_rtx, kind="sip-rtx", subject="setup-ok")

    def _setup_guard(self) -> None:
        if not (self._mn_established and self._cn_established):
            self._abort("setup-incomplete")

    # -- handoff phase -----------------------------------------------------

    def _on_trigger(self) -> None:
        t = self.engine.now
        if needs_reregistration(ReregTrigger.MID_CALL_SWITCH):
            self._send_register()  # structurally unreachable by design
        before = self.state.phase.value
        actions = mn_trigger(self.state, self.spec.procedure, t)
        for action in actions:
            self._apply_mn_action(action, before, "trigger")

    def _apply_mn_action(self, action: tuple, phase_before: str,
                         transition: str) -> None:
        t = self.engine.now
        kind = action[0]
        if kind == "send-reinvite":
            new_iface = action[1]
            self.handoff_log.record(t, "MN", transition, phase_before,
                                    self.state.phase.value)
            session = SessionDescriptor(
                media_src=self.state.mn_addresses[new_iface],
                media_dst=self.cn_address, codec=self.spec.codec.name)
            msg = SipMessage(method=SipMethod.REINVITE, from_uri=MN_URI,
                             to_uri=CN_URI, via_iface=new_iface,
                             size_bytes=self.spec.signaling.invite_bytes,
                             session=session, msg_id=self._next_id())
            self._reinvite = msg
            self._mn_send(msg)
            if self._reinvite_rtx_left > 0:
                self.engine.schedule_in(
                    self.spec.signaling.rtx_interval_ms * 1000,
                    self._reinvite_rtx, kind="sip-rtx", subject="reinvite")
        elif kind == "close-iface":
            self.closed_old_at = t
            self.handoff_log.record(t, "MN", f"close-{action[1]}",
                                    self.state.phase.value,
                                    self.state.phase.value)
        elif kind == "set-uplink":
            self.handoff_log.record(t, "MN", f"uplink-{action[1]}",
                                    self.state.phase.value,
                                    self.state.phase.value)
        elif kind == "warn":
            self.handoff_log.record(t, "MN", f"warn:{action[1]}",
                                    phase_before, self.state.phase.value)

    def _reinvite_rtx(self) -> None:
        if (self.state.phase is HandoffPhase.SWITCHING
                and self._reinvite_rtx_left > 0):
            self._reinvite_rtx_left -= 1
            self._mn_send(self._reinvite)
            if self._reinvite_rtx_left > 0:
                self.engine.schedule_in(
                    self.spec.signaling.rtx_interval_ms * 1000,
                    self._reinvite_rtx, kind="sip-rtx", subject="reinvite")

    def _cn_on_reinvite(self, msg: SipMessage) -> None:
        t = self.engine.now
        actions = cn_on_reinvite(self.state, msg, t)
        for action in actions:
            if action[0] == "send-ok":
                ok = SipMessage(method=SipMethod.OK, from_uri=CN_URI,
                                to_uri=MN_URI, via_iface=action[1],
                                size_bytes=self.spec.signaling.ok_bytes,
                                msg_id=self._next_id(),
                                in_reply_to=msg.msg_id)
                first = self._handoff_ok is None
                self._handoff_ok = ok
                self._cn_send(ok)
                if first and self._handoff_ok_rtx_left > 0:
                    self.engine.schedule_in(
                        self.spec.signaling.rtx_interval_ms * 1000,
                        self._handoff_ok_rtx, kind="sip-rtx",
                        subject="handoff-ok")
            elif action[0] == "set-cn-dst":
                self.handoff_log.record(t, "CN", "dst-switch",
                                        self.state.phase.value,
                                        self.state.phase.value)
            elif action[0] == "warn":
                self.handoff_log.record(t, "CN", f"warn:{action[1]}",
                                        self.state.phase.value,
                                        self.state.phase.value)

    def _handoff_ok_rtx(self) -> None:
        if not self._handoff_ok_acked and self._handoff_ok_rtx_left > 0:
            self._handoff_ok_rtx_left -= 1
            self._cn_send(self._handoff_ok)
            if self._handoff_ok_rtx_left > 0:
                self.engine.schedule_in(
                    self.spec.signaling.rtx_interval_ms * 1000,
                    self._handoff_ok_rtx, kind="sip-rtx",
                    subject="handoff-ok")

    def _mn_on_handoff_ok(self, msg: SipMessage) -> None:
        if self._reinvite is None or msg.in_reply_to != self._reinvite.msg_id:
            return
        t = self.engine.now
        if self.state.phase is HandoffPhase.SWITCHING:
            before = self.state.phase.value
            actions = mn_on_ok(self.state, self.spec.procedure, t)
            for action in actions:
                self._apply_mn_action(action, before, "ok")
            self.handoff_log.record(t, "MN", "ok", before,
                                    self.state.phase.value)
        # ACK in all cases, including re-answering a retransmitted OK.
        ack = SipMessage(method=SipMethod.ACK, from_uri=MN_URI, to_uri=CN_URI,
                         via_iface=self.state.new_iface,
                         size_bytes=self.spec.signaling.ack_bytes,
                         msg_id=self._next_id(), in_reply_to=msg.msg_id)
        self._mn_send(ack)

    def _watchdog(self) -> None:
        if self.state.phase is HandoffPhase.SWITCHING:
            self.handoff_log.record(self.engine.now, "MN", "watchdog-abort",
                                    self.state.phase.value, "Aborted")
            self._abort("watchdog")

    def _abort(self, reason: str) -> None:
        self.aborted = True
        self.abort_reason = reason
        self.engine.stop()

    # -- media -------------------------------------------------------------

    def _emit_ul(self, pkt: MediaPacket) -> None:
        route = media_route(self.state, UL)
        if route is None:
            self.trace.record(pkt.stream_id, UL, pkt.seq, pkt.gen_time,
                              self.state.ul_media_iface, None, LOSS_CLOSED)
            return
        src, _dst = route
        iface = src.iface
        if self.state.iface_states[iface] is IfaceState.CLOSED:
            raise InternalInvariantError(
                f"media emission from Closed interface {iface}")
        arrival, cause = self.links_ul[iface].transmit(pkt.size_bytes)
        self.trace.record(pkt.stream_id, UL, pkt.seq, pkt.gen_time, iface,
                          arrival, cause)

    def _emit_dl(self, pkt: MediaPacket) -> None:
        route = media_route(self.state, DL)
        if route is None:
            self.trace.record(pkt.stream_id, DL, pkt.seq, pkt.gen_time,
                              CN_IFACE, None, LOSS_CLOSED)
            return
        _src, dst = route
        arrival, cause = self.links_dl[dst.iface].transmit(pkt.size_bytes)
        self.trace.record(pkt.stream_id, DL, pkt.seq, pkt.gen_time, CN_IFACE,
                          arrival, cause)

    # -- run ---------------------------------------------------------------

    def run(self) -> RunResult:
        spec = self.spec
        call_end = spec.call_start_us + spec.call_duration_us
        t_trigger = spec.call_start_us + spec.switch_offset_us
        if spec.switch_jitter_us:
            t_trigger += self.rng.substream("trigger").randint(
                -spec.switch_jitter_us, spec.switch_jitter_us)

        self.engine.schedule(0, self._send_register, kind="sip-send",
                             subject="register")
        self.engine.schedule(200_000, self._send_invite, kind="sip-send",
                             subject="invite")
        self.engine.schedule(spec.call_start_us, self._setup_guard,
                             kind="setup-guard", subject="")
        start_stream(self.engine, "ul", UL, spec.codec, spec.call_start_us,
                     call_end, self._emit_ul, spec.header_overhead_bytes)
        start_stream(self.engine, "dl", DL, spec.codec, spec.call_start_us,
                     call_end, self._emit_dl, spec.header_overhead_bytes)
        self.engine.schedule(t_trigger, self._on_trigger, kind="handoff",
                             subject="trigger")
        self.engine.schedule(t_trigger + spec.watchdog_us, self._watchdog,
                             kind="handoff", subject="watchdog")

        horizon = max(call_end, t_trigger + spec.watchdog_us) + 1_000_000
        self.engine.run_until(horizon)

        return RunResult(
            run_id=spec.run_id, trace=self.trace, signaling=self.signaling,
            handoff_log=self.handoff_log, event_log=self.engine.event_log,
            state=self.state, aborted=self.aborted,
            abort_reason=self.abort_reason,
            t_trigger=self.state.t_trigger,
            t_cn_switch=self.state.t_cn_switch,
            t_completed=self.state.t_completed,
            closed_old_at=self.closed_old_at,
            setup_transaction=self.setup_transaction,
            registrar=self.registrar)


def run_call(spec: CallSpec) -> RunResult:
    """Simulate one call end to end; deterministic in spec.seed."""
    return _CallRuntime(spec).run()
