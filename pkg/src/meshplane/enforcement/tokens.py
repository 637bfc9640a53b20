"""Signed, short-lived capabilities for direct storage access.

Wire format: ``base64url(payload) "." base64url(HMAC-SHA-256(payload))`` where
payload is canonical JSON (sorted keys, no whitespace). Padding is omitted and
non-canonical base64 is rejected, so every encoded bit is significant.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
import json
import os
import secrets
from dataclasses import dataclass
from enum import Enum

from ..errors import ConfigError

DEFAULT_TTL = 300
SECRET_ENV = "MESH_SECRET"


class TokenStatus(str, Enum):
    VALID = "valid"
    EXPIRED = "expired"
    SIGNATURE_INVALID = "signature_invalid"
    RESOURCE_MISMATCH = "resource_mismatch"


def load_secret(value: str | None = None) -> bytes:
    """Decode the 256-bit hex platform secret, by default from ``MESH_SECRET``."""
    value = os.environ.get(SECRET_ENV) if value is None else value
    if not value:
        raise ConfigError(f"{SECRET_ENV} is not set")
    try:
        secret = bytes.fromhex(value.strip())
    except ValueError:
        raise ConfigError(f"{SECRET_ENV} must be hex-encoded") from None
    if len(secret) != 32:
        raise ConfigError(f"{SECRET_ENV} must encode exactly 256 bits")
    return secret


def _b64e(raw: bytes) -> str:
    return base64.urlsafe_b64encode(raw).rstrip(b"=").decode("ascii")


def _b64d(text: str) -> bytes:
    raw = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    if _b64e(raw) != text:
        raise ValueError("non-canonical base64")
    return raw


def _canonical(payload: dict) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class AccessToken:
    subject: str
    resource: str  # domain/name:port
    action: str
    issued_at: int
    expires_at: int
    nonce: str
    signature: bytes

    @property
    def payload(self) -> dict:
        return {
            "sub": self.subject,
            "res": self.resource,
            "act": self.action,
            "iat": self.issued_at,
            "exp": self.expires_at,
            "nonce": self.nonce,
        }

    def encode(self) -> str:
        return f"{_b64e(_canonical(self.payload))}.{_b64e(self.signature)}"

    def __str__(self) -> str:
        return self.encode()


def sign(payload_bytes: bytes, secret: bytes) -> bytes:
    return hmac.new(secret, payload_bytes, hashlib.sha256).digest()


def issue(secret: bytes, subject: str, resource: str, action: str, now: float,
          ttl_seconds: int = DEFAULT_TTL) -> AccessToken:
    if ttl_seconds <= 0:
        raise ValueError("ttl must be positive")
    issued = int(now)
    payload = {
        "sub": subject,
        "res": resource,
        "act": action,
        "iat": issued,
        "exp": issued + int(ttl_seconds),
        "nonce": secrets.token_hex(16),
    }
    sig = sign(_canonical(payload), secret)
    return AccessToken(subject, resource, action, issued, issued + int(ttl_seconds), payload["nonce"], sig)


def decode(token: str, secret: bytes) -> AccessToken | None:
    """Return the token if it is well formed and correctly signed, else None."""
    try:
        head, sig_text = token.split(".")
        payload_bytes = _b64d(head)
        sig = _b64d(sig_text)
    except (ValueError, binascii.Error, AttributeError):
        return None
    if not hmac.compare_digest(sig, sign(payload_bytes, secret)):
        return None
    try:
        p = json.loads(payload_bytes)
        tok = AccessToken(p["sub"], p["res"], p["act"], p["iat"], p["exp"], p["nonce"], sig)
    except (ValueError, KeyError, TypeError):
        return None
    if _canonical(tok.payload) != payload_bytes:
        return None
    return tok


def verify_token(token: str, resource: str, now: float, secret: bytes, action: str | None = None) -> TokenStatus:
    """Check signature, resource binding and expiry, in that order.

    Malformed tokens report ``signature_invalid``.
    """
    tok = decode(token, secret)
    if tok is None:
        return TokenStatus.SIGNATURE_INVALID
    if tok.resource != resource or (action is not None and tok.action != action):
        return TokenStatus.RESOURCE_MISMATCH
    if now >= tok.expires_at:
        return TokenStatus.EXPIRED
    return TokenStatus.VALID
