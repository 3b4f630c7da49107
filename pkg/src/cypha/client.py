"""In-process bus client.

This is the fast path used in simulation mode: no TCP codec, but the same
broker matching/ordering code as the wire path. The link in each direction
can be made lossy (seeded) for fault-injection scenarios; QoS 1 publishes
are retried with a window of one so publish order survives loss.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Callable

from . import topics
from .broker import Broker, Message, NotConnected, PayloadTooLarge


class LossyLink:
    """Seeded Bernoulli packet-drop model for one client's link."""

    def __init__(self):
        self._rng: random.Random | None = None
        self.prob = 0.0

    def configure(self, prob: float, seed: int = 0) -> None:
        if not 0.0 <= prob <= 1.0:
            raise ValueError("loss probability must be in [0, 1]")
        self.prob = prob
        self._rng = random.Random(seed)

    def drop(self) -> bool:
        if self.prob <= 0.0 or self._rng is None:
            return False
        return self._rng.random() < self.prob


@dataclass
class _PendingPublish:
    topic: str
    payload: bytes
    qos: int
    next_retry: float = 0.0


class BusClient:
    """Single-owner client object; may move between threads, not be shared."""

    def __init__(self, broker: Broker, client_id: str, keepalive: float = 0.0):
        self.broker = broker
        self.client_id = client_id
        self.keepalive = keepalive
        self.loss = LossyLink()
        self._session = None
        # (filter, split segments, handler, qos), kept for re-subscription
        self._handlers: list[tuple[str, list[str], Callable[[Message], None], int]] = []
        self._sendq: deque[_PendingPublish] = deque()
        self._inflight: _PendingPublish | None = None
        self._now = 0.0
        self.retry_interval = broker.retry_interval
        self.dropped_sends = 0

    # -- lifecycle ----------------------------------------------------------

    def connect(self) -> None:
        self._session = self.broker.connect(self.client_id, self.keepalive, self)
        for filt, _fsegs, _handler, qos in self._handlers:
            self.broker.subscribe(self._session, filt, qos)

    def disconnect(self) -> None:
        if self._session is not None:
            self.broker.disconnect(self._session)
            self._session = None

    def is_connected(self) -> bool:
        return self._session is not None and self._session.alive

    # -- subscriber side ------------------------------------------------------

    def subscribe(self, filt: str, handler: Callable[[Message], None], qos: int = 0) -> None:
        filt = topics.canonical(filt)
        self._handlers.append((filt, filt.split("/"), handler, qos))
        if self.is_connected():
            self.broker.subscribe(self._session, filt, qos)

    def deliver(self, msg: Message, packet_id: int | None) -> None:
        """Broker-side transport hook; may be dropped by the lossy link."""
        if self.loss.prob > 0.0 and self.loss.drop():
            return
        tsegs = msg.topic.split("/")
        for _filt, fsegs, handler, _qos in self._handlers:
            if topics.match_segments(fsegs, tsegs):
                handler(msg)
        if packet_id is not None and not self.loss.drop():  # PUBACK can be lost too
            self.broker.ack(self._session, packet_id)

    def close(self, reason: str) -> None:
        self._session = None

    # -- publisher side ------------------------------------------------------

    def publish(self, topic: str, payload: bytes, qos: int = 0) -> bool:
        """Queue a publish; returns False when it could not be accepted."""
        if not self.is_connected():
            return False
        if qos == 0 and self._inflight is None and not self._sendq \
                and self.loss.prob == 0.0:
            # Common case: nothing pending, lossless link, fire-and-forget.
            try:
                self.broker.publish(self._session, topic, payload, 0)
            except PayloadTooLarge:
                return False
            except NotConnected:
                self._session = None
                return False
            return True
        self._sendq.append(_PendingPublish(topic, bytes(payload), qos))
        try:
            self._pump_send()
        except PayloadTooLarge:
            return False
        return True

    def _pump_send(self) -> None:
        while self._inflight is None and self._sendq and self.is_connected():
            item = self._sendq.popleft()
            if item.qos == 0:
                if self.loss.drop():
                    self.dropped_sends += 1
                    continue
                self._broker_publish(item)
                continue
            self._inflight = item
            self._attempt_inflight()

    def _attempt_inflight(self) -> None:
        item = self._inflight
        item.next_retry = self._now + self.retry_interval
        if self.loss.drop():
            self.dropped_sends += 1
            return  # PUBLISH lost; retry on timer
        self._broker_publish(item)
        if self.loss.drop():
            return  # PUBACK lost; the broker will see a duplicate on retry
        self._inflight = None
        self._pump_send()

    def _broker_publish(self, item: _PendingPublish) -> None:
        try:
            self.broker.publish(self._session, item.topic, item.payload, item.qos)
        except NotConnected:
            self._session = None

    def process_time(self, now: float) -> None:
        self._now = now
        if self._inflight is not None and now >= self._inflight.next_retry \
                and self.is_connected():
            self._attempt_inflight()

    def pending_publishes(self) -> int:
        return len(self._sendq) + (1 if self._inflight is not None else 0)
