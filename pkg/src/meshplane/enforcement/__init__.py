"""The three enforcement mechanisms: query gateway, storage tokens and
encryption at rest with key handout. Every mechanism decides through
:func:`meshplane.enforcement.access.authorize`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from ..classification import Classification
from ..errors import MeshError, NotFoundError, PolicyDenied
from ..mesh import MeshGraph
from ..policy import Action, Policy, Subject
from . import crypto, tokens
from .access import PortDecision, authorize, refuse_untagged
from .crypto import KeyRecord, KeyRing
from .gateway import Query, QueryResult, gateway_query, parse_query
from .storage import DatasetStore
from .tokens import AccessToken, TokenStatus, verify_token


@dataclass
class TokenGrant:
    token: AccessToken
    address: str
    interface: str
    decision: PortDecision

    def to_dict(self) -> dict:
        return {
            "token": self.token.encode(),
            "expires_at": self.token.expires_at,
            "storage": {"address": self.address, "interface": self.interface},
        }


def issue_token(
    subject: Subject,
    resource: str,
    action: Action | str,
    *,
    mesh: MeshGraph,
    classification: Classification,
    policies: Iterable[Policy],
    secret: bytes,
    now: float,
    ttl_seconds: int = tokens.DEFAULT_TTL,
) -> TokenGrant:
    """Sign a storage token plus the address to use it against, or raise on deny."""
    action = Action(action)
    port = mesh.output_port(resource)
    decision = authorize(subject, action, resource, mesh, classification, policies)
    if not decision.allowed:
        raise PolicyDenied(f"{action.value} on {resource} denied; no token issued", decision)
    tok = tokens.issue(secret, subject.user, resource, action.value, now, ttl_seconds)
    return TokenGrant(tok, port.address, port.interface_type.value, decision)


def encrypt_dataset(port_ref: str, plaintext: bytes, *, mesh: MeshGraph, key: KeyRecord, kek: bytes,
                    store: DatasetStore | None = None) -> tuple[bytes, str]:
    """Encrypt with the port's data key; stores the ciphertext when ``store`` is given."""
    port = mesh.output_port(port_ref)
    if not port.encryption_enabled:
        raise MeshError(f"encryption is not enabled on {port_ref}")
    if key.port != port_ref:
        raise MeshError(f"key {key.key_id} belongs to {key.port}, not {port_ref}")
    ciphertext = crypto.encrypt(key.unwrap(kek), plaintext)
    if store is not None:
        store.write_raw(port.address, ciphertext)
    return ciphertext, key.key_id


def decrypt_dataset(ciphertext: bytes, key_material: bytes) -> bytes:
    return crypto.decrypt(ciphertext, key_material)


def request_key(
    subject: Subject,
    key_id: str,
    *,
    keyring: KeyRing,
    kek: bytes,
    mesh: MeshGraph,
    classification: Classification,
    policies: Iterable[Policy],
) -> tuple[bytes, PortDecision]:
    record = keyring.records.get(key_id)
    if record is None:
        raise NotFoundError(f"no key {key_id!r}")
    decision = authorize(subject, Action.READ, record.port, mesh, classification, policies)
    if not decision.allowed:
        raise PolicyDenied(f"read on {record.port} denied; key withheld", decision)
    return record.unwrap(kek), decision


__all__ = [
    "AccessToken",
    "DatasetStore",
    "KeyRecord",
    "KeyRing",
    "PortDecision",
    "Query",
    "QueryResult",
    "TokenGrant",
    "TokenStatus",
    "authorize",
    "decrypt_dataset",
    "encrypt_dataset",
    "gateway_query",
    "issue_token",
    "parse_query",
    "refuse_untagged",
    "request_key",
    "verify_token",
]
