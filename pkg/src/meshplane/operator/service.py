"""The operator: one serialized writer over an event-sourced mesh state.

Every mutation builds its event under the writer lock, folds it into a copy
of the current snapshot, appends it durably to the log and only then swaps the
snapshot in. Readers grab the current snapshot reference and never lock.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import os
import threading
import time
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .. import contracts as contract_ops
from .. import descriptor as desc
from .. import enforcement
from ..classification import ComplianceReport, OverrideRequest, SensitivityLabel
from ..enforcement import crypto, tokens
from ..enforcement.access import PortDecision
from ..errors import ConfigError, MeshError, NotFoundError, PolicyDenied, UntaggedPortError
from ..mesh import Direction, RemovalReport
from ..model import ConsumptionStyle, DataProduct, InterfaceType, MeshPortRef
from ..policy import AccessRequest, Action, Decision, Policy, Resource, Subject, evaluate, explain
from ..policy import parse_policies, serialize_policy
from ..state import AUDIT_KINDS, EventRecord, MeshState, apply_event, payload_of
from .log import EventLog, replay

log = logging.getLogger(__name__)

HOME_ENV = "MESH_HOME"
MODES = ("gateway", "token", "key")


class Operator:
    def __init__(self, home: Path | str, secret: bytes | None = None, clock: Callable[[], float] = time.time):
        self.home = Path(home)
        self.home.mkdir(parents=True, exist_ok=True)
        self.log = EventLog(self.home / "events.jsonl")
        self.secret = secret
        self.clock = clock
        self._lock = threading.Lock()
        self._state = replay(self.log)
        self._kek_cache: bytes | None = None
        self.store = enforcement.DatasetStore(self.home, self._port_key)

    @classmethod
    def from_env(cls, home: Path | str | None = None, clock: Callable[[], float] = time.time) -> "Operator":
        home = home or os.environ.get(HOME_ENV) or ".mesh"
        secret = tokens.load_secret() if os.environ.get(tokens.SECRET_ENV) else None
        return cls(home, secret, clock)

    # -- state plumbing ---------------------------------------------------

    @property
    def state(self) -> MeshState:
        return self._state

    def state_hash(self) -> str:
        return self._state.hash()

    def events(self) -> list[EventRecord]:
        return self.log.read()

    def _commit(self, kind: str, payload: Mapping | Callable[[MeshState], Mapping], actor: str = "system") -> EventRecord:
        with self._lock:
            current = self._state
            body = payload(current) if callable(payload) else payload
            ev = EventRecord(current.seq + 1, self.clock(), actor, kind, payload_of(body))
            if kind in AUDIT_KINDS:
                new = copy.copy(current)
                new.seq = ev.seq
            else:
                new = apply_event(copy.deepcopy(current), ev)
            self.log.append(ev)
            self._state = new
        log.debug("committed %s #%d", kind, ev.seq)
        return ev

    def _kek(self) -> bytes:
        if self.secret is None:
            raise ConfigError(f"{tokens.SECRET_ENV} is required for tokens and encryption keys")
        if self._kek_cache is None:
            self._kek_cache = crypto.derive_kek(self.secret)
        return self._kek_cache

    def _port_key(self, port: str) -> bytes:
        record = self._state.keys.active_for(port)
        if record is None:
            raise MeshError(f"no data key exists for encrypted port {port}")
        return record.unwrap(self._kek())

    # -- products ---------------------------------------------------------

    def register_product(self, descriptor: DataProduct | str | Mapping, actor: str = "system") -> str:
        if isinstance(descriptor, str):
            descriptor = desc.parse_descriptor(descriptor)
        elif isinstance(descriptor, Mapping):
            descriptor = desc.from_dict(descriptor)
        self._commit("product_registered", {"descriptor": desc.to_dict(descriptor)}, actor)
        return descriptor.id

    def decommission_product(self, product_id: str, force: bool = False, actor: str = "system") -> RemovalReport:
        mesh = self._state.mesh
        mesh.get(product_id)
        consumers = sorted(mesh.consumers(product_id) - {product_id})
        self._commit(
            "product_decommissioned",
            {"id": product_id, "force": force, "dangling_consumers": consumers},
            actor,
        )
        return RemovalReport(product_id, consumers)

    def list_products(self) -> list[DataProduct]:
        mesh = self._state.mesh
        return [mesh.products[p] for p in sorted(mesh.products)]

    def get_product(self, product_id: str) -> DataProduct:
        return self._state.mesh.get(product_id)

    def lineage(self, product_id: str, direction: Direction | str = Direction.DOWNSTREAM) -> set[str]:
        return self._state.mesh.lineage(product_id, direction)

    def validate_mesh(self) -> dict[str, list[str]]:
        return self._state.mesh.validate()

    # -- classification ---------------------------------------------------

    def define_label(self, name: str, obligations: Iterable[str] = (), description: str = "",
                     actor: str = "system") -> SensitivityLabel:
        self._commit(
            "label_defined",
            {"name": name, "obligations": sorted(set(obligations)), "description": description},
            actor,
        )
        return self._state.classification.labels[name]

    def list_labels(self) -> list[SensitivityLabel]:
        return list(self._state.classification.labels)

    def tag_port(self, port: str, labels: Iterable[str], actor: str = "system"):
        self._commit("port_tagged", {"port": port, "labels": sorted(set(labels))}, actor)
        return self._state.classification.state(port)

    def classification_of(self, port: str):
        return self._state.classification.state(port)

    def request_override(self, port: str, labels: Iterable[str], justification: str,
                         actor: str = "system") -> OverrideRequest:
        labels = frozenset(labels)
        holder: dict[str, str] = {}

        def build(state: MeshState) -> dict:
            trial = copy.deepcopy(state.classification)
            rid = trial.next_override_id()
            req = trial.request_override(port, labels, justification, rid, self.clock())
            holder["id"] = rid
            return {"request": req.to_dict()}

        self._commit("override_requested", build, actor)
        return self._state.classification.overrides[holder["id"]]

    def review_override(self, request_id: str, verdict: str, reviewer: str) -> OverrideRequest:
        if verdict not in ("approve", "reject"):
            raise ValueError("verdict must be approve or reject")
        c = self._state.classification
        if request_id not in c.overrides:
            raise NotFoundError(f"no override {request_id!r}")
        self._commit(
            "override_reviewed",
            {"id": request_id, "verdict": verdict, "reviewer": reviewer, "reviewed_at": self.clock()},
            reviewer,
        )
        return self._state.classification.overrides[request_id]

    def list_overrides(self, status: str | None = None) -> list[OverrideRequest]:
        items = sorted(self._state.classification.overrides.values(), key=lambda o: (o.requested_at, o.id))
        return [o for o in items if status is None or o.status.value == status]

    def check_obligations(self, port: str) -> ComplianceReport:
        state = self._state
        return state.classification.check_obligations(state.mesh, port)

    def forget_subject(self, subject_id: str, actor: str = "system") -> list[dict]:
        with self._lock:
            state = self._state
            report = state.classification.forget_subject(state.mesh, self.store, subject_id)
        digest = hashlib.sha256(subject_id.encode()).hexdigest()
        self._commit("subject_forgotten", {"subject_sha256": digest, "stores": report}, actor)
        return report

    # -- policies and decisions -------------------------------------------

    def apply_policy(self, source: str, actor: str = "system") -> list[Policy]:
        policies = parse_policies(source)
        if not policies:
            raise MeshError("no policy found in source")
        for p in policies:
            self._commit("policy_applied", {"name": p.name, "source": serialize_policy(p)}, actor)
        return policies

    def remove_policy(self, name: str, actor: str = "system") -> None:
        if name not in self._state.policies:
            raise NotFoundError(f"no policy {name!r}")
        self._commit("policy_removed", {"name": name}, actor)

    def list_policies(self) -> list[Policy]:
        return [p for _, p in sorted(self._state.policies.items())]

    def decide(self, subject: Subject, action: Action | str, resource: str, detailed: bool = False,
               actor: str | None = None) -> Decision:
        state = self._state
        req = AccessRequest(subject, Action(action), Resource.parse(resource))
        fn = explain if detailed else evaluate
        decision = fn(req, state.policies.values(), state.classification.effective())
        self._commit(
            "access_decided",
            {"mode": "evaluate", "subject": subject.to_dict(), "resource": resource,
             "action": req.action.value, "effect": decision.effect.value,
             "matched_rule": list(decision.matched_rule) if decision.matched_rule else None},
            actor or subject.user,
        )
        return decision

    def _audit_decision(self, subject: Subject, mode: str, action: Action, port: str,
                        decision: PortDecision | None, reason: str | None = None) -> None:
        body: dict[str, Any] = {"mode": mode, "subject": subject.to_dict(), "resource": port,
                                "action": action.value}
        if decision is None:
            body.update(effect="deny", reason=reason, matched_rule=None)
        else:
            summary = decision.summary()
            body.update(effect=summary["effect"], columns=summary["columns"],
                        matched_rule=decision.matched_rules)
        self._commit("access_decided", body, subject.user)

    def _authorized(self, subject: Subject, action: Action, port: str, mode: str,
                    columns: list[str] | None = None) -> PortDecision:
        state = self._state
        try:
            decision = enforcement.authorize(subject, action, port, state.mesh, state.classification,
                                             state.policies.values(), columns)
        except UntaggedPortError:
            self._audit_decision(subject, mode, action, port, None, "untagged")
            raise
        self._audit_decision(subject, mode, action, port, decision)
        if not decision.allowed:
            raise PolicyDenied(f"{action.value} on {port} denied", decision, decision.denied_columns)
        return decision

    def submit_access_request(self, subject: Subject, resource: str, action: Action | str = Action.READ,
                              mode: str = "token", ttl_seconds: int = tokens.DEFAULT_TTL) -> dict:
        """Decide a request and hand out the artifact for the chosen enforcement mode."""
        if mode not in MODES:
            raise ValueError(f"mode must be one of {', '.join(MODES)}")
        action = Action(action)
        state = self._state
        port = state.mesh.output_port(resource)
        if mode == "gateway" and port.interface_type is not InterfaceType.SQL:
            raise MeshError(f"{resource} is not a sql port; the gateway cannot serve it")
        if mode == "key":
            if not port.encryption_enabled:
                raise MeshError(f"{resource} is not encrypted at rest")
            record = state.keys.active_for(resource)
            if record is None:
                raise MeshError(f"no data key exists yet for {resource}")
        if mode == "token":
            self._kek()
        decision = self._authorized(subject, action, resource, mode)
        grant: dict[str, Any] = {"effect": "allow", "mode": mode, "resource": resource, "action": action.value}
        if mode == "gateway":
            grant["session"] = {"columns": [c for c, _ in decision.decisions if c], "sql_port": resource}
        elif mode == "token":
            grant.update(self._issue(subject, resource, action, ttl_seconds))
        else:
            grant["key_id"] = record.key_id
        return grant

    # -- enforcement ------------------------------------------------------

    def _issue(self, subject: Subject, resource: str, action: Action, ttl_seconds: int) -> dict:
        port = self._state.mesh.output_port(resource)
        tok = tokens.issue(self.secret, subject.user, resource, action.value, self.clock(), ttl_seconds)
        self._commit(
            "token_issued",
            {"subject": subject.user, "resource": resource, "action": action.value,
             "issued_at": tok.issued_at, "expires_at": tok.expires_at, "nonce": tok.nonce},
            subject.user,
        )
        return {
            "token": tok.encode(),
            "expires_at": tok.expires_at,
            "storage": {"address": port.address, "interface": port.interface_type.value},
        }

    def issue_token(self, subject: Subject, resource: str, action: Action | str = Action.READ,
                    ttl_seconds: int = tokens.DEFAULT_TTL) -> dict:
        self._kek()
        action = Action(action)
        self._state.mesh.output_port(resource)
        self._authorized(subject, action, resource, "token")
        return self._issue(subject, resource, action, ttl_seconds)

    def verify_token(self, token: str, resource: str, now: float | None = None,
                     action: str | None = None) -> tokens.TokenStatus:
        self._kek()
        return tokens.verify_token(token, resource, self.clock() if now is None else now, self.secret, action)

    def storage_read(self, token: str, resource: str) -> bytes:
        """What a storage node does: verify the presented token, then serve the raw bytes."""
        status = self.verify_token(token, resource, action=Action.READ.value)
        if status is not tokens.TokenStatus.VALID:
            raise PolicyDenied(f"token rejected: {status.value}")
        port = self._state.mesh.output_port(resource)
        data = self.store.read_raw(port.address)
        if data is None:
            raise NotFoundError(f"no data stored at {port.address}")
        return data

    def gateway_query(self, subject: Subject, query_text: str) -> enforcement.QueryResult:
        query = enforcement.parse_query(query_text)
        state = self._state
        port = state.mesh.output_port(query.port_ref)
        if port.interface_type is not InterfaceType.SQL:
            raise MeshError(f"{query.port_ref} is a {port.interface_type.value} port; the gateway serves sql ports")
        cols = enforcement.gateway.referenced_columns(query, port)
        self._authorized(subject, Action.READ, query.port_ref, "gateway", cols)
        return enforcement.gateway_query(subject, query_text, state.mesh, state.classification,
                                         state.policies.values(), self.store)

    def _ensure_key(self, port: str):
        record = self._state.keys.active_for(port)
        if record is not None:
            return record
        kek = self._kek()

        def build(state: MeshState) -> dict:
            existing = state.keys.active_for(port)
            if existing is not None:
                return {"key": existing.to_dict()}
            rec = crypto.KeyRecord.wrap(state.keys.next_key_id(), port, crypto.generate_key(), kek, self.clock())
            return {"key": rec.to_dict()}

        self._commit("key_created", build)
        return self._state.keys.active_for(port)

    def encrypt_dataset(self, port: str, plaintext: bytes, actor: str = "system") -> tuple[bytes, str]:
        out = self._state.mesh.output_port(port)
        if not out.encryption_enabled:
            raise MeshError(f"encryption is not enabled on {port}")
        record = self._ensure_key(port)
        ciphertext, key_id = enforcement.encrypt_dataset(
            port, plaintext, mesh=self._state.mesh, key=record, kek=self._kek(), store=self.store
        )
        self._commit("dataset_written", {"port": port, "bytes": len(plaintext), "key_id": key_id}, actor)
        return ciphertext, key_id

    def write_dataset(self, port: str, data: bytes, actor: str = "system") -> None:
        """Producer-side write; encrypted ports are encrypted with their data key."""
        out = self._state.mesh.output_port(port)
        if out.encryption_enabled:
            self.encrypt_dataset(port, data, actor)
            return
        self.store.write_raw(out.address, data)
        self._commit("dataset_written", {"port": port, "bytes": len(data)}, actor)

    def write_rows(self, port: str, header: list[str], rows: list[list[Any]], actor: str = "system") -> None:
        text = enforcement.storage.render_csv(header, [[str(v) for v in r] for r in rows])
        self.write_dataset(port, text, actor)

    def read_rows(self, port: str) -> tuple[list[str], list[list[str]]] | None:
        return self.store.read_rows(port, self._state.mesh.output_port(port))

    def materialize(self, input_port: str, actor: str = "system") -> int:
        """Copy a by_copy input's source data into its materialization address."""
        mesh = self._state.mesh
        ip = mesh.input_port(input_port)
        if ip.consumption_style is not ConsumptionStyle.BY_COPY or ip.materialization is None:
            raise MeshError(f"{input_port} is not a by_copy input with a materialization address")
        if not isinstance(ip.target, MeshPortRef):
            raise MeshError(f"{input_port} consumes an external source")
        source = str(ip.target)
        table = self.store.read_rows(source, mesh.output_port(source))
        if table is None:
            raise NotFoundError(f"no data stored for {source}")
        self.store.write_copy(ip.materialization, *table)
        self._commit("dataset_written", {"copy": input_port, "source": source, "rows": len(table[1])}, actor)
        return len(table[1])

    def request_key(self, subject: Subject, key_id: str) -> bytes:
        state = self._state
        record = state.keys.records.get(key_id)
        if record is None:
            raise NotFoundError(f"no key {key_id!r}")
        kek = self._kek()
        self._authorized(subject, Action.READ, record.port, "key")
        material, _ = enforcement.request_key(
            subject, key_id, keyring=state.keys, kek=kek, mesh=state.mesh,
            classification=state.classification, policies=state.policies.values(),
        )
        self._commit("key_handed_out", {"key_id": key_id, "port": record.port, "subject": subject.user},
                     subject.user)
        return material

    # -- contracts --------------------------------------------------------

    def register_contract(self, input_port: str, actor: str = "system") -> str:
        self._commit("contract_registered", {"input_port": input_port}, actor)
        return input_port

    def run_contracts(self, port: str, actor: str = "system") -> contract_ops.ContractReport:
        state = self._state
        report = contract_ops.run_contracts(state.contracts, state.mesh, self.store, port, self.clock())
        self._commit("contract_run", {"report": report.to_dict()}, actor)
        if report.alert_raised:
            violations = [r.to_dict() for r in report.results if not r.passed]
            self._commit("contract_alert", {"port": port, "violations": violations}, actor)
            log.warning("contract violation on %s: %d failing expectations", port, len(violations))
        return report

    def check_slo(self, port: str, observed: Mapping[str, float] | None = None) -> list[contract_ops.SloResult]:
        mesh = self._state.mesh
        if observed is None:
            observed = contract_ops.observe(self.store, mesh, port)
        return contract_ops.check_slo(mesh, port, observed, self.clock())

    # -- catalog ----------------------------------------------------------

    def search_catalog(self, query: str = "", label: str | None = None) -> list[dict]:
        state = self._state
        needle = query.lower()
        out = []
        for product in self.list_products():
            text = " ".join(
                [product.id, product.description]
                + [p.id for p in product.output_ports]
            ).lower()
            if needle and needle not in text:
                continue
            ports = []
            for port in product.output_ports:
                ref = f"{product.id}:{port.id}"
                effective = state.classification.states[ref].effective
                if label is not None and label not in effective:
                    continue
                ports.append(
                    {
                        "port": ref,
                        "interface": port.interface_type.value,
                        "effective_labels": sorted(effective),
                        "slos": [{"kind": s.kind.value, "threshold": s.threshold} for s in port.slos],
                    }
                )
            if label is not None and not ports:
                continue
            out.append(
                {
                    "id": product.id,
                    "domain": product.domain,
                    "archetype": product.archetype.value,
                    "description": product.description,
                    "ports": ports,
                }
            )
        return out
