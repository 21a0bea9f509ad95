"""SIP signaling model: messages, the registrar's q-weight priority list,
serial forwarding with fallback, and re-registration trigger rules."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

from .core import Address, IfaceState, InterfaceDescriptor, SimulationError
from .simnet import Engine


class SipError(SimulationError):
    """Misuse of the signaling model (wrong method, nothing to register)."""


class SipMethod(enum.Enum):
    REGISTER = "REGISTER"
    INVITE = "INVITE"
    REINVITE = "REINVITE"
    OK = "OK"
    ACK = "ACK"


@dataclass(frozen=True)
class SessionDescriptor:
    """Media endpoints negotiated by INVITE/REINVITE/OK.

    media_src is where the sender wants to receive media; media_dst is the
    peer endpoint it will send to (None in an initial offer, before the
    peer's endpoint is known).
    """

    media_src: Address
    media_dst: Optional[Address]
    codec: str


@dataclass(frozen=True)
class Contact:
    """One registered address with its priority weight."""

    address: Address
    q_weight: float


@dataclass(frozen=True)
class SipMessage:
    method: SipMethod
    from_uri: str
    to_uri: str
    via_iface: str
    size_bytes: int
    contacts: tuple[Contact, ...] = ()
    session: Optional[SessionDescriptor] = None
    msg_id: int = 0
    in_reply_to: int = 0

    def __post_init__(self):
        if self.method is SipMethod.REGISTER:
            if not self.contacts:
                raise SipError("REGISTER must carry at least one contact")
            for c in self.contacts:
                if not 0.0 <= c.q_weight <= 1.0:
                    raise SipError(f"contact q weight {c.q_weight} outside [0, 1]")


@dataclass(frozen=True)
class SignalingConfig:
    """Message sizes and the reliability/fallback timers.

    One retransmission 500 ms after each unanswered send, and 2 s per
    priority entry before falling back to the next one.
    """

    invite_bytes: int = 700
    register_bytes: int = 450
    ok_bytes: int = 450
    ack_bytes: int = 450
    rtx_interval_ms: int = 500
    max_retransmissions: int = 1
    fallback_timeout_ms: int = 2000

    def size_for(self, method: SipMethod) -> int:
        if method in (SipMethod.INVITE, SipMethod.REINVITE):
            return self.invite_bytes
        if method is SipMethod.OK:
            return self.ok_bytes
        if method is SipMethod.REGISTER:
            return self.register_bytes
        return self.ack_bytes


@dataclass(frozen=True)
class RegistrarBinding:
    """Priority-ordered contact list for one URI, highest q first."""

    uri: str
    entries: tuple[Contact, ...]


class ReregTrigger(enum.Enum):
    POWER_ON = "PowerOn"
    NEW_INTERFACE_UP = "NewInterfaceUp"
    PRIORITY_CHANGE = "PriorityChange"
    MID_CALL_SWITCH = "MidCallSwitch"


def needs_reregistration(trigger: ReregTrigger) -> bool:
    """Mid-call switches are signaled to the peer only, never the registrar."""
    return trigger is not ReregTrigger.MID_CALL_SWITCH


def build_register(uri: str, interfaces: list[InterfaceDescriptor],
                   registrar_uri: str = "registrar",
                   config: SignalingConfig = SignalingConfig(),
                   msg_id: int = 0) -> SipMessage:
    """REGISTER carrying one contact per Up interface, sent via the
    highest-weight Up interface. Down and Closed interfaces are excluded."""
    up = [i for i in interfaces if i.state is IfaceState.UP]
    if not up:
        raise SipError(f"{uri}: no Up interface, nothing to register")
    via = max(up, key=lambda i: i.q_weight).iface_id
    contacts = tuple(Contact(i.address, i.q_weight) for i in up)
    return SipMessage(method=SipMethod.REGISTER, from_uri=uri,
                      to_uri=registrar_uri, via_iface=via,
                      size_bytes=config.register_bytes, contacts=contacts,
                      msg_id=msg_id)


def apply_register(msg: SipMessage) -> RegistrarBinding:
    """Replace the URI's binding wholesale: contacts sorted by descending
    q weight, ties keeping the message's contact order."""
    if msg.method is not SipMethod.REGISTER:
        raise SipError(f"apply_register needs REGISTER, got {msg.method.value}")
    ordered = tuple(sorted(msg.contacts, key=lambda c: -c.q_weight))
    return RegistrarBinding(uri=msg.from_uri, entries=ordered)


# Forward transaction outcomes.
PENDING = "pending"
DELIVERED = "delivered"
UNREACHABLE = "unreachable"


class ForwardTransaction:
    """Progress of one forwarded message through the priority list."""

    def __init__(self, msg: SipMessage,
                 on_complete: Optional[Callable[["ForwardTransaction"], None]] = None):
        self.msg = msg
        self.status = PENDING
        self.via_address: Optional[Address] = None
        self.attempts: list[tuple[Address, int]] = []
        self.completed_at: Optional[int] = None
        self.on_complete = on_complete

    def _finish(self, status: str, now: int) -> None:
        self.status = status
        self.completed_at = now
        if self.on_complete is not None:
            self.on_complete(self)


class SignalingLog:
    """One line per SIP message offered to a link."""

    def __init__(self):
        self.lines: list[str] = []

    def record(self, time_us: int, msg: SipMessage, outcome: str) -> None:
        self.lines.append(
            f"({time_us}, {msg.method.value}, {msg.from_uri}, {msg.to_uri},"
            f" {msg.via_iface}, {outcome})"
        )

    def count(self, method: SipMethod) -> int:
        tag = f" {method.value},"
        return sum(1 for line in self.lines if tag in line)


class Registrar:
    """Holds bindings and forwards messages serially down the priority list.

    Each entry is attempted with up to max_retransmissions resends at
    rtx_interval; fallback to the next entry happens only when no answer
    arrives within fallback_timeout_ms.
    """

    def __init__(self, engine: Engine,
                 send: Callable[[SipMessage, Address], None],
                 config: SignalingConfig = SignalingConfig()):
        self.engine = engine
        self.send = send
        self.config = config
        self.bindings: dict[str, RegistrarBinding] = {}
        self._pending: dict[int, ForwardTransaction] = {}
        self._attempt_idx: dict[int, int] = {}

    def handle_register(self, msg: SipMessage) -> RegistrarBinding:
        binding = apply_register(msg)
        self.bindings[msg.from_uri] = binding
        return binding

    def forward_with_fallback(
            self, msg: SipMessage, timeout_ms: Optional[int] = None,
            on_complete: Optional[Callable[[ForwardTransaction], None]] = None,
    ) -> ForwardTransaction:
        """Start forwarding msg toward the binding of msg.to_uri."""
        txn = ForwardTransaction(msg, on_complete)
        binding = self.bindings.get(msg.to_uri)
        if binding is None or not binding.entries:
            txn._finish(UNREACHABLE, self.engine.now)
            return txn
        timeout_us = (timeout_ms if timeout_ms is not None
                      else self.config.fallback_timeout_ms) * 1000
        self._pending[msg.msg_id] = txn
        self._attempt(txn, binding, 0, timeout_us)
        return txn

    def _attempt(self, txn: ForwardTransaction, binding: RegistrarBinding,
                 idx: int, timeout_us: int) -> None:
        if txn.status != PENDING:
            return
        if idx >= len(binding.entries):
            self._pending.pop(txn.msg.msg_id, None)
            self._attempt_idx.pop(txn.msg.msg_id, None)
            txn._finish(UNREACHABLE, self.engine.now)
            return
        self._attempt_idx[txn.msg.msg_id] = idx
        contact = binding.entries[idx]
        self._send_once(txn, contact)
        rtx_us = self.config.rtx_interval_ms * 1000
        for k in range(1, self.config.max_retransmissions + 1):
            if k * rtx_us >= timeout_us:
                break
            self.engine.schedule_in(
                k * rtx_us,
                lambda c=contact, i=idx, t=txn: self._retransmit(t, c, i),
                kind="sip-rtx", subject=txn.msg.method.value)
        self.engine.schedule_in(
            timeout_us,
            lambda i=idx: self._on_timeout(txn, binding, i, timeout_us),
            kind="sip-fallback-timeout", subject=txn.msg.method.value)

    def _send_once(self, txn: ForwardTransaction, contact: Contact) -> None:
        txn.attempts.append((contact.address, self.engine.now))
        self.send(txn.msg, contact.address)

    def _retransmit(self, txn: ForwardTransaction, contact: Contact,
                    idx: int) -> None:
        if txn.status == PENDING and self._attempt_idx.get(txn.msg.msg_id) == idx:
            self._send_once(txn, contact)

    def _on_timeout(self, txn: ForwardTransaction, binding: RegistrarBinding,
                    idx: int, timeout_us: int) -> None:
        if txn.status == PENDING and self._attempt_idx.get(txn.msg.msg_id) == idx:
            self._attempt(txn, binding, idx + 1, timeout_us)

    def deliver_answer(self, answer: SipMessage,
                       from_address: Optional[Address] = None) -> bool:
        """Answer to a forwarded message arrived; completes the transaction.

        Returns False for answers that match no pending transaction
        (late duplicates after completion).
        """
        txn = self._pending.pop(answer.in_reply_to, None)
        if txn is None or txn.status != PENDING:
            return False
        if from_address is not None:
            txn.via_address = from_address
        elif txn.attempts:
            txn.via_address = txn.attempts[-1][0]
        self._attempt_idx.pop(answer.in_reply_to, None)
        txn._finish(DELIVERED, self.engine.now)
        return True
