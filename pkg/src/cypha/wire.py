"""MQTT 3.1.1 wire codec for the supported packet subset.

Bit-exact encoding for CONNECT, CONNACK, PUBLISH, PUBACK, SUBSCRIBE,
SUBACK, PINGREQ, PINGRESP and DISCONNECT, so stock MQTT tooling can attach
to the broker for debugging. No retained messages, persistent sessions,
QoS 2 or MQTT 5 constructs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

CONNECT, CONNACK, PUBLISH, PUBACK = 1, 2, 3, 4
SUBSCRIBE, SUBACK = 8, 9
PINGREQ, PINGRESP, DISCONNECT = 12, 13, 14

PROTOCOL_NAME = b"MQTT"
PROTOCOL_LEVEL = 4


class ProtocolError(ValueError):
    """Packet violates the supported MQTT 3.1.1 subset."""


@dataclass
class ConnectPacket:
    client_id: str
    keepalive: int = 60
    clean_session: bool = True


@dataclass
class ConnackPacket:
    session_present: bool = False
    return_code: int = 0


@dataclass
class PublishPacket:
    topic: str
    payload: bytes
    qos: int = 0
    packet_id: int | None = None
    dup: bool = False
    retain: bool = False


@dataclass
class PubackPacket:
    packet_id: int


@dataclass
class SubscribePacket:
    packet_id: int
    filters: list[tuple[str, int]] = field(default_factory=list)


@dataclass
class SubackPacket:
    packet_id: int
    return_codes: list[int] = field(default_factory=list)


@dataclass
class PingreqPacket:
    pass


@dataclass
class PingrespPacket:
    pass


@dataclass
class DisconnectPacket:
    pass


Packet = (ConnectPacket | ConnackPacket | PublishPacket | PubackPacket
          | SubscribePacket | SubackPacket | PingreqPacket | PingrespPacket
          | DisconnectPacket)


def _encode_remaining_length(n: int) -> bytes:
    if n < 0 or n > 268_435_455:
        raise ProtocolError(f"remaining length {n} out of range")
    out = bytearray()
    while True:
        n, digit = divmod(n, 128)
        out.append(digit | (0x80 if n else 0))
        if not n:
            return bytes(out)


def _encode_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ProtocolError("string too long")
    return struct.pack(">H", len(raw)) + raw


def encode(packet: Packet) -> bytes:
    if isinstance(packet, ConnectPacket):
        flags = 0x02 if packet.clean_session else 0x00
        body = (_encode_string("MQTT") + bytes([PROTOCOL_LEVEL, flags])
                + struct.pack(">H", packet.keepalive)
                + _encode_string(packet.client_id))
        return _fixed(CONNECT, 0, body)
    if isinstance(packet, ConnackPacket):
        return _fixed(CONNACK, 0, bytes([1 if packet.session_present else 0,
                                         packet.return_code]))
    if isinstance(packet, PublishPacket):
        if packet.qos not in (0, 1):
            raise ProtocolError(f"unsupported qos {packet.qos}")
        flags = (0x08 if packet.dup else 0) | (packet.qos << 1) | (0x01 if packet.retain else 0)
        body = _encode_string(packet.topic)
        if packet.qos > 0:
            if packet.packet_id is None:
                raise ProtocolError("qos 1 publish needs a packet id")
            body += struct.pack(">H", packet.packet_id)
        body += packet.payload
        return _fixed(PUBLISH, flags, body)
    if isinstance(packet, PubackPacket):
        return _fixed(PUBACK, 0, struct.pack(">H", packet.packet_id))
    if isinstance(packet, SubscribePacket):
        if not packet.filters:
            raise ProtocolError("subscribe needs at least one filter")
        body = struct.pack(">H", packet.packet_id)
        for filt, qos in packet.filters:
            body += _encode_string(filt) + bytes([qos])
        return _fixed(SUBSCRIBE, 0x02, body)
    if isinstance(packet, SubackPacket):
        return _fixed(SUBACK, 0, struct.pack(">H", packet.packet_id)
                      + bytes(packet.return_codes))
    if isinstance(packet, PingreqPacket):
        return _fixed(PINGREQ, 0, b"")
    if isinstance(packet, PingrespPacket):
        return _fixed(PINGRESP, 0, b"")
    if isinstance(packet, DisconnectPacket):
        return _fixed(DISCONNECT, 0, b"")
    raise ProtocolError(f"cannot encode {type(packet).__name__}")


def _fixed(ptype: int, flags: int, body: bytes) -> bytes:
    return bytes([(ptype << 4) | flags]) + _encode_remaining_length(len(body)) + body


def decode(data: bytes) -> tuple[Packet, int]:
    """Decode one packet from the head of data; returns (packet, bytes used).

    Raises NeedMoreData when the buffer holds only part of a packet.
    """
    if len(data) < 2:
        raise NeedMoreData
    ptype = data[0] >> 4
    flags = data[0] & 0x0F
    length, header_len = _decode_remaining_length(data)
    total = header_len + length
    if len(data) < total:
        raise NeedMoreData
    body = bytes(data[header_len:total])
    return _decode_body(ptype, flags, body), total


class NeedMoreData(Exception):
    """The buffer does not yet hold a complete packet."""


def _decode_remaining_length(data: bytes) -> tuple[int, int]:
    value, shift = 0, 0
    for i in range(1, 5):
        if i >= len(data):
            raise NeedMoreData
        byte = data[i]
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, i + 1
        shift += 7
    raise ProtocolError("remaining length exceeds 4 bytes")


def _take_string(body: bytes, at: int) -> tuple[str, int]:
    if at + 2 > len(body):
        raise ProtocolError("truncated string")
    n = struct.unpack_from(">H", body, at)[0]
    end = at + 2 + n
    if end > len(body):
        raise ProtocolError("truncated string")
    try:
        return body[at + 2:end].decode("utf-8"), end
    except UnicodeDecodeError as exc:
        raise ProtocolError("invalid UTF-8 in string") from exc


def _decode_body(ptype: int, flags: int, body: bytes) -> Packet:
    if ptype == CONNECT:
        return _decode_connect(body)
    if ptype == CONNACK:
        if len(body) != 2:
            raise ProtocolError("bad CONNACK length")
        return ConnackPacket(bool(body[0] & 0x01), body[1])
    if ptype == PUBLISH:
        return _decode_publish(flags, body)
    if ptype == PUBACK:
        if len(body) != 2:
            raise ProtocolError("bad PUBACK length")
        return PubackPacket(struct.unpack(">H", body)[0])
    if ptype == SUBSCRIBE:
        if flags != 0x02:
            raise ProtocolError("SUBSCRIBE flags must be 0010")
        return _decode_subscribe(body)
    if ptype == SUBACK:
        if len(body) < 3:
            raise ProtocolError("bad SUBACK length")
        return SubackPacket(struct.unpack_from(">H", body)[0], list(body[2:]))
    if ptype == PINGREQ:
        return PingreqPacket()
    if ptype == PINGRESP:
        return PingrespPacket()
    if ptype == DISCONNECT:
        return DisconnectPacket()
    raise ProtocolError(f"unsupported packet type {ptype}")


def _decode_connect(body: bytes) -> ConnectPacket:
    name, at = _take_string(body, 0)
    if name != "MQTT":
        raise ProtocolError(f"unknown protocol {name!r}")
    if at + 4 > len(body):
        raise ProtocolError("truncated CONNECT")
    level, flags = body[at], body[at + 1]
    if level != PROTOCOL_LEVEL:
        raise ProtocolError(f"unsupported protocol level {level}")
    keepalive = struct.unpack_from(">H", body, at + 2)[0]
    at += 4
    client_id, at = _take_string(body, at)
    # Will/username/password are outside the subset: parse past a will so a
    # stock client can still attach, refuse credentials outright.
    if flags & 0x04:
        _, at = _take_string(body, at)
        if at + 2 > len(body):
            raise ProtocolError("truncated will message")
        n = struct.unpack_from(">H", body, at)[0]
        at += 2 + n
    if flags & 0xC0:
        raise ProtocolError("username/password not supported")
    return ConnectPacket(client_id, keepalive, bool(flags & 0x02))


def _decode_publish(flags: int, body: bytes) -> PublishPacket:
    qos = (flags >> 1) & 0x03
    if qos > 1:
        raise ProtocolError(f"unsupported qos {qos}")
    topic, at = _take_string(body, 0)
    packet_id = None
    if qos > 0:
        if at + 2 > len(body):
            raise ProtocolError("truncated PUBLISH")
        packet_id = struct.unpack_from(">H", body, at)[0]
        at += 2
    return PublishPacket(topic, body[at:], qos, packet_id,
                         dup=bool(flags & 0x08), retain=bool(flags & 0x01))


def _decode_subscribe(body: bytes) -> SubscribePacket:
    if len(body) < 2:
        raise ProtocolError("truncated SUBSCRIBE")
    packet_id = struct.unpack_from(">H", body)[0]
    at = 2
    filters: list[tuple[str, int]] = []
    while at < len(body):
        filt, at = _take_string(body, at)
        if at >= len(body) + 1 or at + 1 > len(body):
            raise ProtocolError("truncated SUBSCRIBE entry")
        filters.append((filt, body[at]))
        at += 1
    if not filters:
        raise ProtocolError("SUBSCRIBE without filters")
    return SubscribePacket(packet_id, filters)


class StreamDecoder:
    """Incremental decoder for a TCP byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Packet]:
        self._buf.extend(data)
        packets = []
        while True:
            try:
                packet, used = decode(bytes(self._buf))
            except NeedMoreData:
                return packets
            del self._buf[:used]
            packets.append(packet)
