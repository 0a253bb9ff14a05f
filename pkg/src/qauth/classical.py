"""Classical channel: toy keystream cipher, message framing and the public transcript.

The cipher is a SplitMix64 keystream XORed onto the data. It has no integrity
protection and is not meant to be secure; the simulator decides what an
eavesdropper can read by configuration, not by cryptanalysis.

Plaintext frame layout (all integers little-endian)::

    magic       4 bytes   b"QAP\\x01"
    msg_type    u8        1 = request, 2 = tamper spec, 3 = disclosure
    n_fields    u16
    n_fields x  (length: u32, payload: length bytes)
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from .rng import GOLDEN_GAMMA, MASK64, mix64

MAGIC = b"QAP\x01"
_HEADER = struct.Struct("<4sBH")
_LEN = struct.Struct("<I")


class FrameError(ValueError):
    """Plaintext does not decode as a well-formed frame."""


class MsgType(enum.IntEnum):
    REQUEST = 1
    TAMPER_SPEC = 2
    DISCLOSURE = 3


@dataclass(frozen=True)
class SecretKey:
    key: int

    def __post_init__(self):
        if not 0 <= self.key <= MASK64:
            raise ValueError("key must be an unsigned 64-bit integer")


def keystream_words(key: int, nonce: int, n_words: int):
    base = (key ^ nonce) & MASK64
    for counter in range(n_words):
        # counter + 1 matches SplitMix64's advance-then-mix output order
        yield mix64(base ^ (((counter + 1) * GOLDEN_GAMMA) & MASK64))


def keystream_transform(key: SecretKey | int, nonce: int, data: bytes) -> bytes:
    """XOR ``data`` with the keystream for ``(key, nonce)``; applying it twice is the identity."""
    k = key.key if isinstance(key, SecretKey) else key
    n_words = (len(data) + 7) // 8
    stream = b"".join(w.to_bytes(8, "little") for w in keystream_words(k, nonce, n_words))
    return bytes(a ^ b for a, b in zip(data, stream))


def encode_frame(msg_type: MsgType, fields: list[bytes]) -> bytes:
    out = [_HEADER.pack(MAGIC, int(msg_type), len(fields))]
    for f in fields:
        out.append(_LEN.pack(len(f)))
        out.append(bytes(f))
    return b"".join(out)


def decode_frame(data: bytes, expect: MsgType | None = None) -> tuple[MsgType, list[bytes]]:
    if len(data) < _HEADER.size:
        raise FrameError("frame shorter than header")
    magic, raw_type, n_fields = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FrameError("bad magic")
    try:
        msg_type = MsgType(raw_type)
    except ValueError:
        raise FrameError(f"unknown message type {raw_type}") from None
    if expect is not None and msg_type != expect:
        raise FrameError(f"expected {expect.name}, got {msg_type.name}")
    pos = _HEADER.size
    fields = []
    for _ in range(n_fields):
        if pos + _LEN.size > len(data):
            raise FrameError("truncated field length")
        (length,) = _LEN.unpack_from(data, pos)
        pos += _LEN.size
        if pos + length > len(data):
            raise FrameError("truncated field payload")
        fields.append(data[pos:pos + length])
        pos += length
    if pos != len(data):
        raise FrameError("trailing bytes after last field")
    return msg_type, fields


def encode_request(sender: str, peer: str, session: int) -> bytes:
    return encode_frame(MsgType.REQUEST, [sender.encode(), peer.encode(), struct.pack("<Q", session)])


def decode_request(data: bytes) -> tuple[str, str, int]:
    _, fields = decode_frame(data, MsgType.REQUEST)
    if len(fields) != 3 or len(fields[2]) != 8:
        raise FrameError("malformed request")
    try:
        sender, peer = fields[0].decode(), fields[1].decode()
    except UnicodeDecodeError as exc:
        raise FrameError("party id is not UTF-8") from exc
    return sender, peer, struct.unpack("<Q", fields[2])[0]


@dataclass(frozen=True)
class ClassicalMessage:
    sender: str
    receiver: str
    nonce: int
    ciphertext: bytes
    # Alice and Bob share no key, so step-6 disclosures travel in the clear.
    cleartext: bool = False


@dataclass
class ChannelTranscript:
    """Append-only log of everything sent on the classical channel."""

    _messages: list[ClassicalMessage] = field(default_factory=list)
    _nonces: dict[tuple[int, str, str], int] = field(default_factory=dict)

    def append(self, message: ClassicalMessage) -> int:
        self._messages.append(message)
        return len(self._messages) - 1

    def __getitem__(self, index: int) -> ClassicalMessage:
        return self._messages[index]

    def __len__(self) -> int:
        return len(self._messages)

    def eve_view(self) -> tuple[ClassicalMessage, ...]:
        """What a read-only eavesdropper sees: the ciphertexts, in order."""
        return tuple(self._messages)

    def next_nonce(self, key: SecretKey, sender: str, receiver: str) -> int:
        slot = (key.key, sender, receiver)
        self._nonces[slot] = self._nonces.get(slot, 0) + 1
        direction = 1 if sender < receiver else 0
        return (direction << 63) | self._nonces[slot]


def send(transcript: ChannelTranscript, key: SecretKey, sender: str, receiver: str,
         plaintext: bytes, nonce: int | None = None) -> int:
    if nonce is None:
        nonce = transcript.next_nonce(key, sender, receiver)
    ct = keystream_transform(key, nonce, plaintext)
    return transcript.append(ClassicalMessage(sender, receiver, nonce, ct))


def send_clear(transcript: ChannelTranscript, sender: str, receiver: str, plaintext: bytes) -> int:
    return transcript.append(ClassicalMessage(sender, receiver, 0, bytes(plaintext), cleartext=True))


def receive(transcript: ChannelTranscript, index: int, key: SecretKey | None) -> bytes:
    """Decrypt entry ``index``. A wrong key yields garbage, never an error here."""
    msg = transcript[index]
    if msg.cleartext:
        return msg.ciphertext
    if key is None:
        raise ValueError("encrypted message needs a key")
    return keystream_transform(key, msg.nonce, msg.ciphertext)
