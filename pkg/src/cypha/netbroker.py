"""TCP front end for the broker: real MQTT 3.1.1 framing over sockets.

Lets stock MQTT tooling attach to a live run. Each connection gets a
reader thread that feeds the shared StreamDecoder and drives the same
Broker core as the in-process path. Timers (retries, keepalive) are not
owned here — whoever owns the clock calls broker.process_time().
"""

from __future__ import annotations

import logging
import socket
import threading

from . import wire
from .broker import Broker, Message, NotConnected, PayloadTooLarge

log = logging.getLogger(__name__)


class _TcpTransport:
    """Broker-side delivery handle for one TCP connection."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._wlock = threading.Lock()
        self.closed = False

    def send_packet(self, packet) -> None:
        data = wire.encode(packet)
        with self._wlock:
            if not self.closed:
                try:
                    self._sock.sendall(data)
                except OSError:
                    self.closed = True

    def deliver(self, msg: Message, packet_id: int | None) -> None:
        self.send_packet(wire.PublishPacket(
            msg.topic, msg.payload, msg.qos, packet_id,
            dup=False, retain=False))

    def close(self, reason: str) -> None:
        self.closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._sock.close()
        except OSError:
            pass


class TcpFrontend:
    """Accept loop + per-connection protocol handling."""

    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int = 1883):
        self.broker = broker
        self.host = host
        self.port = port
        self._server: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._running = False

    def start(self) -> int:
        """Bind and start accepting; returns the bound port."""
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind((self.host, self.port))
        self._server.listen(16)
        self.port = self._server.getsockname()[1]
        self._running = True
        t = threading.Thread(target=self._accept_loop, name="mqtt-accept", daemon=True)
        t.start()
        self._threads.append(t)
        return self.port

    def stop(self) -> None:
        self._running = False
        if self._server is not None:
            try:
                self._server.close()
            except OSError:
                pass

    def _accept_loop(self) -> None:
        while self._running:
            try:
                sock, addr = self._server.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_connection, args=(sock, addr),
                                 name=f"mqtt-conn-{addr[1]}", daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_connection(self, sock: socket.socket, addr) -> None:
        transport = _TcpTransport(sock)
        decoder = wire.StreamDecoder()
        session = None
        try:
            while self._running and not transport.closed:
                data = sock.recv(4096)
                if not data:
                    break
                for packet in decoder.feed(data):
                    session = self._handle(packet, transport, session)
        except wire.ProtocolError as exc:
            log.warning("protocol error from %s: %s", addr, exc)
        except OSError:
            pass
        finally:
            if session is not None:
                self.broker.disconnect(session)
            transport.close("connection ended")

    def _handle(self, packet, transport: _TcpTransport, session):
        if isinstance(packet, wire.ConnectPacket):
            if not packet.client_id:
                transport.send_packet(wire.ConnackPacket(False, 2))  # identifier rejected
                raise wire.ProtocolError("empty client id")
            session = self.broker.connect(packet.client_id, packet.keepalive, transport)
            transport.send_packet(wire.ConnackPacket(False, 0))
            return session
        if session is None:
            raise wire.ProtocolError("first packet must be CONNECT")
        if isinstance(packet, wire.PublishPacket):
            self.broker.touch(session)
            try:
                self.broker.publish(session, packet.topic, packet.payload, packet.qos)
            except (PayloadTooLarge, ValueError, NotConnected) as exc:
                log.warning("publish rejected from %s: %s", session.client_id, exc)
                if isinstance(exc, NotConnected):
                    raise wire.ProtocolError(str(exc))
            if packet.qos == 1:
                transport.send_packet(wire.PubackPacket(packet.packet_id))
        elif isinstance(packet, wire.PubackPacket):
            self.broker.ack(session, packet.packet_id)
        elif isinstance(packet, wire.SubscribePacket):
            self.broker.touch(session)
            codes = []
            for filt, qos in packet.filters:
                try:
                    codes.append(self.broker.subscribe(session, filt, min(qos, 1)))
                except ValueError:
                    codes.append(0x80)
            transport.send_packet(wire.SubackPacket(packet.packet_id, codes))
        elif isinstance(packet, wire.PingreqPacket):
            self.broker.touch(session)
            transport.send_packet(wire.PingrespPacket())
        elif isinstance(packet, wire.DisconnectPacket):
            self.broker.disconnect(session)
            transport.close("client disconnect")
        else:
            raise wire.ProtocolError(f"unexpected packet {type(packet).__name__}")
        return session
