"""Symmetric crypto provider: AEAD, labelled KDF, and seedable randomness.

The provider is pluggable so deployments can swap algorithms behind one
interface; the default suite is ChaCha20-Poly1305 (RFC 8439) for AEAD and
HKDF-SHA256 (RFC 5869) for key derivation. Geometry is fixed across suites:
32-byte keys, 12-byte nonces, 16-byte tags, 16-byte seeds.
"""

from __future__ import annotations

import hashlib
import hmac
import os
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .errors import AuthError, LabelUnknown, UnknownSuite

KEY_LEN = 32
NONCE_LEN = 12
SEED_LEN = 16
TAG_LEN = 16

# Fixed domain-separation labels. Distinct purposes must use distinct labels.
LABELS = frozenset({"link-v1", "bind-v1", "e2e-v1", "hh-v1"})

_MAX_CONTEXT_PART = 0xFFFF


def check_key(key: bytes) -> bytes:
    if len(key) != KEY_LEN:
        raise ValueError(f"key must be {KEY_LEN} bytes, got {len(key)}")
    return key


def check_nonce(nonce: bytes) -> bytes:
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes, got {len(nonce)}")
    return nonce


def encode_context(parts: list[bytes] | tuple[bytes, ...]) -> bytes:
    """Length-prefix every context part (u16 big-endian) so that no two
    distinct part lists collapse to the same byte string."""
    out = bytearray()
    for part in parts:
        if len(part) > _MAX_CONTEXT_PART:
            raise ValueError(f"context part too long: {len(part)}")
        out += len(part).to_bytes(2, "big")
        out += part
    return bytes(out)


def hkdf_sha256(ikm: bytes, info: bytes, length: int = KEY_LEN, salt: bytes = b"") -> bytes:
    """HKDF per RFC 5869 with SHA-256 (extract-then-expand)."""
    prk = hmac.new(salt or bytes(hashlib.sha256().digest_size), ikm, hashlib.sha256).digest()
    okm = b""
    block = b""
    counter = 1
    while len(okm) < length:
        block = hmac.new(prk, block + info + bytes([counter]), hashlib.sha256).digest()
        okm += block
        counter += 1
    return okm[:length]


class ChaChaHkdfSuite:
    """Default provider: ChaCha20-Poly1305 AEAD, HKDF-SHA256 KDF.

    Both operations are deterministic functions of their inputs, which keeps
    simulation transcripts reproducible.
    """

    suite_id = "chacha20poly1305-hkdf-sha256"

    def aead_seal(self, key: bytes, nonce: bytes, aad: bytes, plaintext: bytes) -> bytes:
        return ChaCha20Poly1305(check_key(key)).encrypt(check_nonce(nonce), plaintext, aad)

    def aead_open(self, key: bytes, nonce: bytes, aad: bytes, box: bytes) -> bytes:
        if len(box) < TAG_LEN:
            raise AuthError("ciphertext shorter than tag")
        try:
            return ChaCha20Poly1305(check_key(key)).decrypt(check_nonce(nonce), box, aad)
        except InvalidTag:
            raise AuthError("AEAD verification failed") from None

    def kdf(self, ikm: bytes, label: str, context: list[bytes] | tuple[bytes, ...]) -> bytes:
        if label not in LABELS:
            raise LabelUnknown(label)
        info = bytes([len(label)]) + label.encode("ascii") + encode_context(context)
        return hkdf_sha256(ikm, info, KEY_LEN)


_SUITES = {
    ChaChaHkdfSuite.suite_id: ChaChaHkdfSuite(),
}
_SUITES["default"] = _SUITES[ChaChaHkdfSuite.suite_id]


def provider_for(suite_id: str):
    try:
        return _SUITES[suite_id]
    except KeyError:
        raise UnknownSuite(suite_id) from None


@dataclass
class DeterministicRng:
    """Counter-based generator: same 8-byte seed, same output stream.

    Not cryptographically strong; intended for reproducible simulation.
    """

    seed: bytes
    counter: int = field(default=0)

    def __post_init__(self):
        if isinstance(self.seed, int):
            self.seed = self.seed.to_bytes(8, "big")
        if len(self.seed) != 8:
            raise ValueError("rng seed must be 8 bytes")

    def draw(self, n: int) -> bytes:
        if not 0 < n <= 32:
            raise ValueError("draw size must be 1..32")
        block = hashlib.sha256(self.seed + self.counter.to_bytes(8, "big")).digest()
        self.counter += 1
        return block[:n]

    def nonce(self) -> bytes:
        return self.draw(NONCE_LEN)

    def seed16(self) -> bytes:
        return self.draw(SEED_LEN)

    def key(self) -> bytes:
        return self.draw(KEY_LEN)


class SystemRng:
    """os.urandom-backed generator behind the same draw interface."""

    def draw(self, n: int) -> bytes:
        return os.urandom(n)

    def nonce(self) -> bytes:
        return self.draw(NONCE_LEN)

    def seed16(self) -> bytes:
        return self.draw(SEED_LEN)

    def key(self) -> bytes:
        return self.draw(KEY_LEN)


def rng_for(master_seed: int, name: str) -> DeterministicRng:
    """Derive an independent deterministic stream for a named consumer."""
    digest = hashlib.sha256(master_seed.to_bytes(8, "big") + name.encode("utf-8")).digest()
    return DeterministicRng(digest[:8])
