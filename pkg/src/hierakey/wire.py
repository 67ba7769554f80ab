"""Canonical binary codec for every protocol message.

All multi-byte integers are big-endian. Entity ids travel as u16 length +
UTF-8 bytes; nonces are 12 raw bytes; seeds 16 raw bytes; ciphertexts as u16
length + bytes. Parsing is strict: trailing bytes, bad magic, unknown types
and out-of-range lengths are all rejected, so the header bytes can double as
AEAD associated data without ambiguity.

Frame layout:

    magic "HKAF" (4) | version u8=1 | msg_type u8 | sender id | receiver id
    | seq u64 | body

Body by msg_type:

    0x01 HELLO          nonce_c (12)
    0x02 LINK_CHALLENGE ciphertext            (plaintext: nonce_c|nonce_p|seed_p)
    0x03 LINK_FINISH    ciphertext            (plaintext: nonce_p|seed_c)
    0x10 RELAY          ciphertext            (plaintext: encoded exchange payload)
    0x11 TRAFFIC        ciphertext            (plaintext: opaque application bytes)
    0x12 E2E_CONFIRM    ciphertext            (plaintext: exchange_id|nonce_r)
    0x7F ERROR          code u16 | detail (u16 len + UTF-8)

Exchange payload carried inside RELAY ciphertext:

    kind u8 (0=Request, 1=Response) | exchange_id (16) | initiator id
    | responder id | nonce_i (12) | [nonce_r (12), Response only] | seed (16)
"""

from __future__ import annotations

from dataclasses import dataclass

from .crypto import NONCE_LEN, SEED_LEN
from .errors import FieldTooLong, ParseError

MAGIC = b"HKAF"
VERSION = 1

HELLO = 0x01
LINK_CHALLENGE = 0x02
LINK_FINISH = 0x03
RELAY = 0x10
TRAFFIC = 0x11
E2E_CONFIRM = 0x12
ERROR = 0x7F

MSG_TYPES = frozenset({HELLO, LINK_CHALLENGE, LINK_FINISH, RELAY, TRAFFIC, E2E_CONFIRM, ERROR})

TYPE_NAMES = {
    HELLO: "hello",
    LINK_CHALLENGE: "challenge",
    LINK_FINISH: "finish",
    RELAY: "relay",
    TRAFFIC: "traffic",
    E2E_CONFIRM: "confirm",
    ERROR: "error",
}

MAX_ID_LEN = 64
MAX_CIPHERTEXT_LEN = 1024
MAX_MESSAGE_LEN = 2048

REQUEST = 0
RESPONSE = 1


@dataclass(frozen=True)
class WireHeader:
    msg_type: int
    sender: str
    receiver: str
    seq: int


@dataclass(frozen=True)
class WireMessage:
    header: WireHeader
    # HELLO: nonce bytes; ERROR: (code, detail); everything else: ciphertext.
    body: object

    @property
    def msg_type(self) -> int:
        return self.header.msg_type


@dataclass(frozen=True)
class E2ePayload:
    kind: int
    exchange_id: bytes
    initiator: str
    responder: str
    nonce_i: bytes
    nonce_r: bytes | None
    seed: bytes


def _encode_id(entity_id: str) -> bytes:
    raw = entity_id.encode("utf-8")
    if not 1 <= len(raw) <= MAX_ID_LEN:
        raise FieldTooLong(f"id length {len(raw)} outside 1..{MAX_ID_LEN}")
    return len(raw).to_bytes(2, "big") + raw


def _encode_ct(ct: bytes) -> bytes:
    if len(ct) > MAX_CIPHERTEXT_LEN:
        raise FieldTooLong(f"ciphertext length {len(ct)} > {MAX_CIPHERTEXT_LEN}")
    return len(ct).to_bytes(2, "big") + ct


def aad_of(header: WireHeader) -> bytes:
    """Header bytes, used verbatim as the AEAD associated data of the same
    frame; binds sender, receiver, type and sequence into every ciphertext."""
    return (
        MAGIC
        + bytes([VERSION, header.msg_type])
        + _encode_id(header.sender)
        + _encode_id(header.receiver)
        + header.seq.to_bytes(8, "big")
    )


def encode(msg: WireMessage) -> bytes:
    h = msg.header
    if h.msg_type not in MSG_TYPES:
        raise FieldTooLong(f"unknown msg_type {h.msg_type:#x}")
    if h.msg_type in (HELLO, E2E_CONFIRM) and h.seq != 0:
        raise FieldTooLong("hello/confirm frames carry seq 0")
    out = aad_of(h)
    if h.msg_type == HELLO:
        nonce = msg.body
        if len(nonce) != NONCE_LEN:
            raise FieldTooLong("hello nonce must be 12 bytes")
        out += nonce
    elif h.msg_type == ERROR:
        code, detail = msg.body
        raw = detail.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FieldTooLong("error detail too long")
        out += code.to_bytes(2, "big") + len(raw).to_bytes(2, "big") + raw
    else:
        out += _encode_ct(msg.body)
    if len(out) > MAX_MESSAGE_LEN:
        raise FieldTooLong(f"message length {len(out)} > {MAX_MESSAGE_LEN}")
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError("Truncated", f"need {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return int.from_bytes(self.take(2), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def entity_id(self) -> str:
        n = self.u16()
        if not 1 <= n <= MAX_ID_LEN:
            raise ParseError("LengthOverflow", f"id length {n}")
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("LengthOverflow", "id not valid UTF-8") from None

    def ciphertext(self) -> bytes:
        n = self.u16()
        if n > MAX_CIPHERTEXT_LEN:
            raise ParseError("LengthOverflow", f"ciphertext length {n}")
        return self.take(n)

    def done(self):
        if self.pos != len(self.data):
            raise ParseError("TrailingBytes", f"{len(self.data) - self.pos} extra bytes")


def decode(data: bytes) -> WireMessage:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ParseError("BadMagic")
    if r.u8() != VERSION:
        raise ParseError("BadVersion")
    msg_type = r.u8()
    if msg_type not in MSG_TYPES:
        raise ParseError("UnknownType", f"{msg_type:#x}")
    sender = r.entity_id()
    receiver = r.entity_id()
    seq = r.u64()
    if msg_type in (HELLO, E2E_CONFIRM) and seq != 0:
        raise ParseError("LengthOverflow", "hello/confirm frames carry seq 0")
    header = WireHeader(msg_type, sender, receiver, seq)
    if msg_type == HELLO:
        body: object = r.take(NONCE_LEN)
    elif msg_type == ERROR:
        code = r.u16()
        n = r.u16()
        raw = r.take(n)
        try:
            detail = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("LengthOverflow", "detail not valid UTF-8") from None
        body = (code, detail)
    else:
        body = r.ciphertext()
    r.done()
    return WireMessage(header, body)


def encode_e2e_payload(p: E2ePayload) -> bytes:
    if p.kind not in (REQUEST, RESPONSE):
        raise FieldTooLong(f"bad payload kind {p.kind}")
    if len(p.exchange_id) != 16 or len(p.nonce_i) != NONCE_LEN or len(p.seed) != SEED_LEN:
        raise FieldTooLong("bad payload field size")
    out = bytes([p.kind]) + p.exchange_id + _encode_id(p.initiator) + _encode_id(p.responder)
    out += p.nonce_i
    if p.kind == RESPONSE:
        if p.nonce_r is None or len(p.nonce_r) != NONCE_LEN:
            raise FieldTooLong("response payload needs nonce_r")
        out += p.nonce_r
    elif p.nonce_r is not None:
        raise FieldTooLong("request payload must not carry nonce_r")
    return out + p.seed


def decode_e2e_payload(data: bytes) -> E2ePayload:
    r = _Reader(data)
    kind = r.u8()
    if kind not in (REQUEST, RESPONSE):
        raise ParseError("UnknownType", f"payload kind {kind}")
    exchange_id = r.take(16)
    initiator = r.entity_id()
    responder = r.entity_id()
    nonce_i = r.take(NONCE_LEN)
    nonce_r = r.take(NONCE_LEN) if kind == RESPONSE else None
    seed = r.take(SEED_LEN)
    r.done()
    return E2ePayload(kind, exchange_id, initiator, responder, nonce_i, nonce_r, seed)
