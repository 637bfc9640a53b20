"""Control-plane state as a fold over the event log.

``apply_event`` is the only way state changes. Events carry every
non-deterministic input (ids, timestamps, wrapped keys, computed override
statuses), so replaying a log always rebuilds the same state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from . import descriptor
from .classification import Classification, OverrideRequest, OverrideStatus
from .contracts import ContractRegistry
from .enforcement.crypto import KeyRecord, KeyRing
from .errors import CorruptLogError, MeshError
from .mesh import MeshGraph
from .model import MeshPortRef
from .policy import Policy, parse_policy, serialize_policy

# events recorded for audit only; they leave the fold untouched
AUDIT_KINDS = frozenset(
    {
        "access_decided",
        "token_issued",
        "key_handed_out",
        "subject_forgotten",
        "dataset_written",
        "contract_alert",
    }
)


@dataclass(frozen=True)
class EventRecord:
    seq: int
    ts: float
    actor: str
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "ts": self.ts, "actor": self.actor, "kind": self.kind, "payload": self.payload}

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "EventRecord":
        return cls(d["seq"], d["ts"], d["actor"], d["kind"], d["payload"])


@dataclass
class MeshState:
    mesh: MeshGraph = field(default_factory=MeshGraph)
    classification: Classification = field(default_factory=Classification)
    policies: dict[str, Policy] = field(default_factory=dict)
    keys: KeyRing = field(default_factory=KeyRing)
    contracts: ContractRegistry = field(default_factory=ContractRegistry)
    reports: dict[str, dict] = field(default_factory=dict)
    seq: int = 0

    def to_dict(self) -> dict:
        c = self.classification
        return {
            "seq": self.seq,
            "products": {pid: descriptor.to_dict(p) for pid, p in sorted(self.mesh.products.items())},
            "labels": [lb.to_dict() for lb in c.labels],
            "declared": {k: sorted(v) for k, v in sorted(c.declared.items())},
            "overrides": {k: o.to_dict() for k, o in sorted(c.overrides.items())},
            "classification": {k: s.to_dict() for k, s in sorted(c.states.items())},
            "policies": {n: serialize_policy(p) for n, p in sorted(self.policies.items())},
            "keys": {k: r.to_dict() for k, r in sorted(self.keys.records.items())},
            "contracts": {
                k: {"owner": ct.owner, "target": ct.target,
                    "expectations": [e.describe() for e in ct.expectations]}
                for k, ct in sorted(self.contracts.contracts.items())
            },
            "reports": dict(sorted(self.reports.items())),
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _register(state: MeshState, p: dict) -> None:
    product = descriptor.from_dict(p["descriptor"])
    labels = set()
    for port in product.output_ports:
        labels |= port.declared_labels
    state.classification.labels.require(labels)
    state.mesh.register(product)
    for ip in product.input_ports:
        if isinstance(ip.target, MeshPortRef) and ip.expectations:
            state.contracts.register(state.mesh, f"{product.id}:{ip.id}")


def _decommission(state: MeshState, p: dict) -> None:
    pid = p["id"]
    state.mesh.decommission(pid, p.get("force", False))
    state.classification.forget_product(pid)
    state.keys.drop_product(pid)
    state.contracts.drop_product(pid)
    state.reports = {k: v for k, v in state.reports.items() if not k.startswith(pid + ":")}


def _override_requested(state: MeshState, p: dict, ts: float) -> None:
    recorded = OverrideRequest.from_dict(p["request"])
    req = state.classification.request_override(
        recorded.port, recorded.labels, recorded.justification, recorded.id, recorded.requested_at
    )
    if req.status is not recorded.status:
        raise MeshError(
            f"override {req.id} recomputed as {req.status.value} but was recorded {recorded.status.value}"
        )


def _policy_applied(state: MeshState, p: dict) -> None:
    policy = parse_policy(p["source"])
    state.policies[policy.name] = policy


def apply_event(state: MeshState, ev: EventRecord) -> MeshState:
    """Fold one event into ``state`` in place and return it."""
    if ev.seq != state.seq + 1:
        raise CorruptLogError(f"expected sequence {state.seq + 1}, found {ev.seq}", ev.seq)
    p = ev.payload
    kind = ev.kind
    c = state.classification
    if kind == "label_defined":
        c.define_level(p["name"], p.get("obligations", ()), p.get("description", ""))
    elif kind == "product_registered":
        _register(state, p)
    elif kind == "product_decommissioned":
        _decommission(state, p)
    elif kind == "port_tagged":
        c.tag_port(state.mesh, p["port"], p["labels"])
    elif kind == "override_requested":
        c.refresh(state.mesh)
        _override_requested(state, p, ev.ts)
    elif kind == "override_reviewed":
        c.review_override(p["id"], p["verdict"] == "approve", p["reviewer"], p["reviewed_at"])
    elif kind == "policy_applied":
        _policy_applied(state, p)
    elif kind == "policy_removed":
        if state.policies.pop(p["name"], None) is None:
            raise MeshError(f"no policy {p['name']!r}")
    elif kind == "key_created":
        record = KeyRecord.from_dict(p["key"])
        state.mesh.output_port(record.port)
        state.keys.add(record)
    elif kind == "contract_registered":
        state.contracts.register(state.mesh, p["input_port"])
    elif kind == "contract_run":
        state.reports[p["report"]["port"]] = p["report"]
    elif kind not in AUDIT_KINDS:
        raise MeshError(f"unknown event kind {kind!r}")
    c.refresh(state.mesh)
    state.seq = ev.seq
    return state


def replay(events) -> MeshState:
    state = MeshState()
    for ev in events:
        try:
            apply_event(state, ev)
        except CorruptLogError:
            raise
        except (MeshError, KeyError, ValueError, TypeError) as exc:
            raise CorruptLogError(f"event {ev.kind} cannot be applied: {exc}", ev.seq) from exc
    return state


def payload_of(obj: Any) -> Any:
    """Round-trip through JSON so in-memory payloads match what replay reads."""
    return json.loads(json.dumps(obj, sort_keys=True))


__all__ = ["AUDIT_KINDS", "EventRecord", "MeshState", "OverrideStatus", "apply_event", "payload_of", "replay"]
