"""Message integrity and routing between the stage side and controller side.

Every gateway-facing payload travels inside an Envelope: the original
bytes plus an HMAC-SHA256 tag over the topic and payload under a shared
per-device key. The gateway verifies before it routes; nothing tampered
is ever forwarded. Confidentiality is explicitly out of scope.
"""

from __future__ import annotations

import base64
import binascii
import hmac
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

from .broker import Message
from .client import BusClient
from .configio import ConfigError, parse_config

TAG_BYTES = 32


def _plain(s: str) -> bool:
    return s.isascii() and s.isprintable() and '"' not in s and "\\" not in s


@dataclass
class Envelope:
    topic: str
    payload: bytes
    mac: bytes
    key_id: str

    def to_bytes(self) -> bytes:
        # Direct assembly on the per-sample hot path when no JSON escaping is
        # needed (true for every topic/key id the testbed generates).
        topic, key_id = self.topic, self.key_id
        if _plain(topic) and _plain(key_id):
            return (b'{"topic":"' + topic.encode("ascii")
                    + b'","payload":"' + base64.b64encode(self.payload)
                    + b'","mac":"' + self.mac.hex().encode("ascii")
                    + b'","key_id":"' + key_id.encode("ascii") + b'"}')
        return json.dumps({
            "topic": topic,
            "payload": base64.b64encode(self.payload).decode("ascii"),
            "mac": self.mac.hex(),
            "key_id": key_id,
        }, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Envelope":
        try:
            # decode() first: json.loads on bytes pays an encoding sniff
            obj = json.loads(raw.decode("utf-8"))
            topic = obj["topic"]
            payload = base64.b64decode(obj["payload"])
            mac = bytes.fromhex(obj["mac"])
            key_id = obj["key_id"]
        except (ValueError, KeyError, TypeError, binascii.Error) as exc:
            raise IntegrityError("malformed", f"cannot parse envelope: {exc}") from None
        if not isinstance(topic, str) or not isinstance(key_id, str) or len(mac) != TAG_BYTES:
            raise IntegrityError("malformed", "bad envelope field types")
        return cls(topic, payload, mac, key_id)


class IntegrityError(Exception):
    """Envelope rejected: reason is one of bad_tag | unknown_key | malformed."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class KeyTable:
    """key_id -> 32-byte shared secret. Secrets never appear in logs."""

    def __init__(self, keys: dict[str, bytes]):
        if not keys:
            raise ValueError("key table must not be empty")
        for key_id, secret in keys.items():
            if len(secret) != 32:
                raise ValueError(f"key {key_id!r} must be 32 bytes")
        self._keys = dict(keys)

    def __contains__(self, key_id: str) -> bool:
        return key_id in self._keys

    def get(self, key_id: str) -> bytes:
        try:
            return self._keys[key_id]
        except KeyError:
            raise IntegrityError("unknown_key", key_id) from None

    @classmethod
    def load(cls, path: str | Path) -> "KeyTable":
        """Read a [keys] section of key_id = hex-encoded 32-byte secrets."""
        sections = parse_config(Path(path).read_text())
        sec = sections.get("keys")
        if sec is None:
            raise ConfigError("key file needs a [keys] section")
        keys = {}
        for entry in sec.entries:
            try:
                keys[entry.key] = bytes.fromhex(entry.value)
            except ValueError:
                raise ConfigError(f"{entry.key}: secret must be hex", entry.line) from None
        return cls(keys)

    @classmethod
    def default(cls) -> "KeyTable":
        """Deterministic built-in table for self-contained simulation runs."""
        names = ["stage1", "stage2", "stage3", "stage4", "stage5",
                 "controller", "hmi"]
        return cls({n: hashlib.sha256(f"cypha-testbed-{n}".encode()).digest()
                    for n in names})

    def __repr__(self) -> str:
        return f"KeyTable({len(self._keys)} keys)"


# Keyed-hash contexts are reused via copy(): building the HMAC pads once per
# key roughly halves per-message tag cost on the telemetry hot path.
_HMAC_BASE: dict[bytes, "hmac.HMAC"] = {}


def _tag(key: bytes, topic: str, payload: bytes) -> bytes:
    base = _HMAC_BASE.get(key)
    if base is None:
        base = hmac.new(key, digestmod=hashlib.sha256)
        _HMAC_BASE[key] = base
    ctx = base.copy()
    # Length-prefix the topic so the topic/payload boundary is unambiguous.
    t = topic.encode("utf-8")
    ctx.update(struct.pack(">I", len(t)))
    ctx.update(t)
    ctx.update(payload)
    return ctx.digest()


def seal(keys: KeyTable, topic: str, payload: bytes, key_id: str) -> Envelope:
    """Deterministic authentication tag over topic and payload."""
    return Envelope(topic, payload, _tag(keys.get(key_id), topic, payload), key_id)


def verify(keys: KeyTable, env: Envelope) -> bytes:
    """Constant-shape accept/reject; returns the payload when authentic."""
    expected = _tag(keys.get(env.key_id), env.topic, env.payload)
    if not hmac.compare_digest(expected, env.mac):
        raise IntegrityError("bad_tag", env.topic)
    return env.payload


SENSING_SUFFIX = "sensing"
STAGE_BOUND_SUFFIXES = ("actuating", "manual")


class Gateway:
    """Relay between the stage-side and controller-side buses.

    Sensing envelopes flow stage -> controller; actuating and manual
    envelopes flow controller -> stage. Verification happens before any
    forwarding; rejects are counted per reason and the envelope bytes are
    forwarded unmodified so downstream consumers can re-verify.
    """

    def __init__(self, keys: KeyTable, stage_client: BusClient, ctrl_client: BusClient):
        self.keys = keys
        self.stage_client = stage_client
        self.ctrl_client = ctrl_client
        self.counters = {"forwarded": 0, "bad_tag": 0, "unknown_key": 0,
                         "malformed": 0, "unroutable": 0}
        self._own_ids = {stage_client.client_id, ctrl_client.client_id}

    def start(self) -> None:
        self.stage_client.subscribe("cypha/#", self.on_stage_message)
        for suffix in STAGE_BOUND_SUFFIXES:
            self.ctrl_client.subscribe(f"cypha/+/{suffix}", self.on_controller_message, qos=1)

    def on_stage_message(self, msg: Message) -> None:
        if msg.publisher_id in self._own_ids:
            return  # co-located mode: ignore our own forwards
        self.route(msg, toward_controller=True)

    def on_controller_message(self, msg: Message) -> None:
        if msg.publisher_id in self._own_ids:
            return
        self.route(msg, toward_controller=False)

    def route(self, msg: Message, toward_controller: bool) -> bool:
        """Verify then forward; returns True when the envelope went out."""
        try:
            env = Envelope.from_bytes(msg.payload)
            verify(self.keys, env)
        except IntegrityError as exc:
            self.counters[exc.reason] += 1
            return False
        suffix = env.topic.rsplit("/", 1)[-1]
        if toward_controller:
            out, routable = self.ctrl_client, suffix == SENSING_SUFFIX
        else:
            out, routable = self.stage_client, suffix in STAGE_BOUND_SUFFIXES
        if env.topic != msg.topic or not routable:
            self.counters["unroutable"] += 1
            return False
        self.counters["forwarded"] += 1
        out.publish(msg.topic, msg.payload, qos=msg.qos)
        return True
