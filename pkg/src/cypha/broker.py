"""Publish/subscribe broker core.

Transport-agnostic: in-process clients and the TCP front end both land on
the same matching, ordering and QoS bookkeeping, so simulation-mode and
live-mode behaviour are identical.

Ordering contract: each subscriber has one outbound FIFO queue with
head-of-line blocking — a QoS 1 message is retried until acknowledged
before anything later is sent — so per-publisher publish order is
preserved even across drops and retries. QoS 0 messages are delivered
once and may be lost.

Thread safety: all public methods take the broker lock (re-entrant, so a
delivery callback may publish). Delivery to one subscriber is serialized.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

from . import topics


class PayloadTooLarge(ValueError):
    pass


class NotConnected(RuntimeError):
    pass


@dataclass(slots=True)
class Message:
    topic: str
    payload: bytes
    qos: int
    seq: int            # per (publisher, topic), strictly increasing
    publisher_id: str


@dataclass(slots=True)
class _Outbound:
    msg: Message
    packet_id: int | None = None
    next_retry: float = 0.0
    attempts: int = 0


class Session:
    """One connected client's broker-side state."""

    def __init__(self, broker: "Broker", client_id: str, keepalive: float, transport):
        self.broker = broker
        self.client_id = client_id
        self.keepalive = keepalive
        self.transport = transport
        self.subscriptions: dict[str, int] = {}
        self._filter_segments: list[tuple[list[str], int]] = []
        self.alive = True
        self.last_seen = broker.now
        self._outq: deque[_Outbound] = deque()
        self._inflight: _Outbound | None = None
        self._next_packet_id = 1
        self._pub_seq: dict[str, int] = {}
        self._pumping = False

    def _alloc_packet_id(self) -> int:
        pid = self._next_packet_id
        self._next_packet_id = pid % 65535 + 1
        return pid

    def _next_seq(self, topic: str) -> int:
        seq = self._pub_seq.get(topic, 0) + 1
        self._pub_seq[topic] = seq
        return seq

    def enqueue(self, msg: Message) -> None:
        self._outq.append(_Outbound(msg))
        self._pump()

    def _pump(self) -> None:
        # Guard against re-entry: a delivery callback may publish, which
        # lands back here through Broker.publish on the same thread.
        if self._pumping:
            return
        self._pumping = True
        try:
            while self.alive and self._inflight is None and self._outq:
                item = self._outq.popleft()
                if item.msg.qos == 0:
                    self.transport.deliver(item.msg, None)
                    continue
                item.packet_id = self._alloc_packet_id()
                self._inflight = item
                self.broker._needs_timer_scan = True
                self._send_inflight()
        finally:
            self._pumping = False

    def _send_inflight(self) -> None:
        item = self._inflight
        item.attempts += 1
        item.next_retry = self.broker.now + self.broker.retry_interval
        self.transport.deliver(item.msg, item.packet_id)

    def ack(self, packet_id: int) -> None:
        if self._inflight is not None and self._inflight.packet_id == packet_id:
            self._inflight = None
            self._pump()

    def process_time(self, now: float) -> None:
        if self._inflight is not None and now >= self._inflight.next_retry:
            self._send_inflight()


class Broker:
    """Minimal MQTT-subset broker: sessions, filters, QoS 0/1 delivery."""

    def __init__(self, retry_interval: float = 1.0):
        self._lock = threading.RLock()
        self._sessions: dict[str, Session] = {}
        self._session_list: tuple[Session, ...] = ()
        self.retry_interval = retry_interval
        self.now = 0.0
        # Set when any session needs timer service (keepalive or inflight);
        # lets process_time return immediately on quiet ticks.
        self._needs_timer_scan = False
        self.stats = {"published": 0, "delivered": 0, "rejected": 0, "evicted": 0}

    # -- session lifecycle ---------------------------------------------------

    def connect(self, client_id: str, keepalive: float, transport) -> Session:
        """Establish a session; a duplicate client id evicts the older one."""
        if not client_id:
            raise ValueError("empty client id")
        with self._lock:
            old = self._sessions.get(client_id)
            if old is not None:
                old.alive = False
                self.stats["evicted"] += 1
                old.transport.close("session taken over")
            session = Session(self, client_id, keepalive, transport)
            self._sessions[client_id] = session
            self._session_list = tuple(self._sessions.values())
            if keepalive > 0:
                self._needs_timer_scan = True
            return session

    def disconnect(self, session: Session) -> None:
        with self._lock:
            if self._sessions.get(session.client_id) is session:
                del self._sessions[session.client_id]
                self._session_list = tuple(self._sessions.values())
            session.alive = False

    # -- subscriptions ---------------------------------------------------------

    def subscribe(self, session: Session, filt: str, qos: int = 0) -> int:
        with self._lock:
            self._require_live(session)
            filt = topics.canonical(filt)
            topics.validate_filter(filt)
            if qos not in (0, 1):
                raise ValueError(f"unsupported qos {qos}")
            session.subscriptions[filt] = qos  # duplicate filters are idempotent
            session._filter_segments = [
                (f.split("/"), q) for f, q in session.subscriptions.items()]
            return qos

    # -- publishing ---------------------------------------------------------

    def publish(self, session: Session, topic: str, payload: bytes, qos: int = 0) -> None:
        """Deliver to every matching session in per-publisher order."""
        with self._lock:
            self._require_live(session)
            topic = topics.checked_topic(topic)
            if qos not in (0, 1):
                raise ValueError(f"unsupported qos {qos}")
            if len(payload) > topics.MAX_PAYLOAD:
                self.stats["rejected"] += 1
                raise PayloadTooLarge(f"payload {len(payload)} B exceeds {topics.MAX_PAYLOAD} B")
            msg = Message(topic, bytes(payload), qos, session._next_seq(topic),
                          session.client_id)
            session.last_seen = self.now
            self.stats["published"] += 1
            tsegs = topic.split("/")
            match_segments = topics.match_segments
            for sub in self._session_list:
                if not sub.alive:
                    continue
                for fsegs, sub_qos in sub._filter_segments:
                    if match_segments(fsegs, tsegs):
                        eff_qos = qos if sub_qos >= qos else sub_qos
                        effective = msg if eff_qos == qos else Message(
                            msg.topic, msg.payload, eff_qos, msg.seq, msg.publisher_id)
                        self.stats["delivered"] += 1
                        sub.enqueue(effective)
                        break  # one delivery per subscriber, not per filter

    def ack(self, session: Session, packet_id: int) -> None:
        with self._lock:
            session.last_seen = self.now
            session.ack(packet_id)

    def touch(self, session: Session) -> None:
        """Record client activity (PINGREQ or any inbound packet)."""
        with self._lock:
            session.last_seen = self.now

    # -- housekeeping ---------------------------------------------------------

    def process_time(self, now: float) -> None:
        """Advance broker time: QoS 1 retries and keepalive expiry."""
        if not self._needs_timer_scan:
            self.now = now
            return
        with self._lock:
            self.now = now
            expired = False
            busy = False
            for session in self._session_list:
                if session.keepalive > 0:
                    busy = True
                    if now - session.last_seen > 1.5 * session.keepalive:
                        session.alive = False
                        session.transport.close("keepalive expired")
                        expired = True
                        if self._sessions.get(session.client_id) is session:
                            del self._sessions[session.client_id]
                        continue
                if session._inflight is not None:
                    busy = True
                    session.process_time(now)
            if expired:
                self._session_list = tuple(self._sessions.values())
            self._needs_timer_scan = busy

    def _require_live(self, session: Session) -> None:
        if not session.alive or self._sessions.get(session.client_id) is not session:
            raise NotConnected(f"session {session.client_id!r} is not connected")

    def session_count(self) -> int:
        with self._lock:
            return len(self._sessions)
