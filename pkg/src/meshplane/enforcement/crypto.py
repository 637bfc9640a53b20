"""AES-256-GCM for datasets at rest and for wrapping per-port data keys.

Encrypted files are laid out as ``nonce(12) || ciphertext || tag(16)``. Data
keys are never persisted in the clear: the event log only carries them
wrapped under a key-encryption key derived from the platform secret.
"""

from __future__ import annotations

import base64
import os
import secrets
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from ..errors import AuthenticationFailure

KEY_BYTES = 32
NONCE_BYTES = 12
TAG_BYTES = 16


def generate_key() -> bytes:
    return AESGCM.generate_key(bit_length=256)


def encrypt(key: bytes, plaintext: bytes, aad: bytes | None = None) -> bytes:
    nonce = os.urandom(NONCE_BYTES)
    return nonce + AESGCM(key).encrypt(nonce, plaintext, aad)


def decrypt(ciphertext: bytes, key: bytes, aad: bytes | None = None) -> bytes:
    if len(key) != KEY_BYTES:
        raise AuthenticationFailure("key must be 32 bytes")
    if len(ciphertext) < NONCE_BYTES + TAG_BYTES:
        raise AuthenticationFailure("ciphertext too short")
    nonce, body = ciphertext[:NONCE_BYTES], ciphertext[NONCE_BYTES:]
    try:
        return AESGCM(key).decrypt(nonce, body, aad)
    except InvalidTag:
        raise AuthenticationFailure("authentication failed: wrong key or tampered ciphertext") from None


def derive_kek(secret: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(), length=KEY_BYTES, salt=None, info=b"meshplane/key-wrapping/v1"
    ).derive(secret)


@dataclass(frozen=True)
class KeyRecord:
    key_id: str
    port: str
    wrapped: bytes
    created_at: float

    def to_dict(self) -> dict:
        # wrapped material only; the raw key is never serialized
        return {
            "key_id": self.key_id,
            "port": self.port,
            "wrapped": base64.b64encode(self.wrapped).decode(),
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KeyRecord":
        return cls(d["key_id"], d["port"], base64.b64decode(d["wrapped"]), d["created_at"])

    @classmethod
    def wrap(cls, key_id: str, port: str, material: bytes, kek: bytes, created_at: float) -> "KeyRecord":
        return cls(key_id, port, encrypt(kek, material, aad=key_id.encode()), created_at)

    def unwrap(self, kek: bytes) -> bytes:
        return decrypt(self.wrapped, kek, aad=self.key_id.encode())

    def public(self) -> dict:
        return {"key_id": self.key_id, "port": self.port, "created_at": self.created_at}


class KeyRing:
    """Per-port data keys, held wrapped; unwrapping needs the key-encryption key."""

    def __init__(self, records: dict[str, KeyRecord] | None = None):
        self.records: dict[str, KeyRecord] = dict(records or {})

    def __contains__(self, key_id: str) -> bool:
        return key_id in self.records

    def add(self, record: KeyRecord) -> None:
        if record.key_id in self.records:
            raise ValueError(f"key id {record.key_id!r} already exists")
        self.records[record.key_id] = record

    def active_for(self, port: str) -> KeyRecord | None:
        # newest key for the port wins
        mine = [r for r in self.records.values() if r.port == port]
        return max(mine, key=lambda r: (r.created_at, r.key_id)) if mine else None

    def next_key_id(self) -> str:
        return f"key-{secrets.token_hex(8)}"

    def drop_product(self, product_id: str) -> None:
        prefix = product_id + ":"
        self.records = {k: r for k, r in self.records.items() if not r.port.startswith(prefix)}
