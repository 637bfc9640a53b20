"""Sensitivity labels and their transitive propagation along the mesh.

Domain teams tag output ports with globally defined labels. Every output port
of a product inherits the effective labels of everything its input ports
consume, so sensitivity travels downstream without anyone re-deciding it. A
team may override the computed set; purely additive overrides are approved
automatically, everything else waits for central review.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Protocol

from .errors import (
    DuplicateError,
    NotFoundError,
    ObligationViolation,
    OverrideStateError,
    UnknownLabelError,
)
from .mesh import MeshGraph
from .model import (
    ConsumptionStyle,
    ExternalSourceRef,
    InterfaceType,
    MeshPortRef,
    NAME_RE,
    OutputPort,
)

PUBLIC = "public"


class Obligation(str, Enum):
    ENCRYPT_AT_REST = "encrypt_at_rest"
    SUBJECT_TRACEABILITY = "subject_traceability"
    INSIDER_ACCESS_ONLY = "insider_access_only"


class OverrideStatus(str, Enum):
    AUTO_APPROVED = "auto_approved"
    PENDING = "pending"
    APPROVED = "approved"
    REJECTED = "rejected"
    # an approved override replaced by a newer approved one on the same port
    SUPERSEDED = "superseded"


ACTIVE = (OverrideStatus.AUTO_APPROVED, OverrideStatus.APPROVED)


@dataclass(frozen=True)
class SensitivityLabel:
    name: str
    obligations: frozenset[Obligation] = frozenset()
    description: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "obligations": sorted(o.value for o in self.obligations),
            "description": self.description,
        }


@dataclass
class OverrideRequest:
    id: str
    port: str
    labels: frozenset[str]
    justification: str
    status: OverrideStatus
    requested_at: float
    reviewer: str | None = None
    reviewed_at: float | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "port": self.port,
            "labels": sorted(self.labels),
            "justification": self.justification,
            "status": self.status.value,
            "requested_at": self.requested_at,
            "reviewer": self.reviewer,
            "reviewed_at": self.reviewed_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "OverrideRequest":
        return cls(
            id=d["id"],
            port=d["port"],
            labels=frozenset(d["labels"]),
            justification=d["justification"],
            status=OverrideStatus(d["status"]),
            requested_at=d["requested_at"],
            reviewer=d.get("reviewer"),
            reviewed_at=d.get("reviewed_at"),
        )


@dataclass(frozen=True)
class ClassificationState:
    port: str
    declared: frozenset[str]
    inherited: frozenset[str]
    override: OverrideRequest | None
    effective: frozenset[str]

    @property
    def untagged(self) -> bool:
        return not (self.declared or self.inherited) and self.override is None

    def to_dict(self) -> dict:
        return {
            "port": self.port,
            "declared": sorted(self.declared),
            "inherited": sorted(self.inherited),
            "override": self.override.id if self.override else None,
            "effective": sorted(self.effective),
            "untagged": self.untagged,
        }


class LabelRegistry:
    """Global label definitions. ``public`` is built in and carries no obligations."""

    def __init__(self) -> None:
        self._labels: dict[str, SensitivityLabel] = {
            PUBLIC: SensitivityLabel(PUBLIC, frozenset(), "explicitly non-sensitive")
        }

    def __contains__(self, name: str) -> bool:
        return name in self._labels

    def __iter__(self):
        return iter(sorted(self._labels.values(), key=lambda lb: lb.name))

    def __getitem__(self, name: str) -> SensitivityLabel:
        return self._labels[name]

    def define(self, name: str, obligations: Iterable[Obligation | str] = (), description: str = "") -> SensitivityLabel:
        if name in self._labels:
            raise DuplicateError(f"label {name!r} already defined")
        if not NAME_RE.match(name or ""):
            raise ValueError(f"label name {name!r} must match {NAME_RE.pattern}")
        label = SensitivityLabel(name, frozenset(Obligation(o) for o in obligations), description)
        self._labels[name] = label
        return label

    def require(self, labels: Iterable[str]) -> None:
        unknown = sorted(set(labels) - set(self._labels))
        if unknown:
            raise UnknownLabelError(f"unregistered labels: {', '.join(unknown)}")

    def obligations(self, labels: Iterable[str]) -> frozenset[Obligation]:
        out: set[Obligation] = set()
        for name in labels:
            label = self._labels.get(name)
            if label is not None:
                out |= label.obligations
        return frozenset(out)

    def bearing(self, obligation: Obligation) -> frozenset[str]:
        return frozenset(n for n, lb in self._labels.items() if obligation in lb.obligations)


def propagate(
    mesh: MeshGraph,
    declared: Mapping[str, frozenset[str]] | None = None,
    overrides: Iterable[OverrideRequest] = (),
) -> dict[str, ClassificationState]:
    """Compute the classification state of every output port.

    ``declared`` replaces the labels a descriptor declares for a port; ports
    absent from it use their descriptor labels. Products are visited in
    topological order, so one pass reaches the fixpoint.
    """
    declared = declared or {}
    active = {o.port: o for o in overrides if o.status in ACTIVE}
    states: dict[str, ClassificationState] = {}
    for pid in mesh.topological_order():
        product = mesh.products[pid]
        upstream: set[str] = set()
        for ip in product.input_ports:
            target = ip.target
            if isinstance(target, ExternalSourceRef):
                upstream |= target.manual_labels
            elif str(target) in states:
                upstream |= states[str(target)].effective
        inherited = frozenset(upstream)
        for port in product.output_ports:
            ref = f"{pid}:{port.id}"
            local = declared.get(ref, port.declared_labels)
            override = active.get(ref)
            effective = override.labels if override else local | inherited
            states[ref] = ClassificationState(ref, frozenset(local), inherited, override, frozenset(effective))
    return states


@dataclass
class Finding:
    obligation: str
    status: str  # met | unmet | informational | untagged
    detail: str

    def to_dict(self) -> dict:
        return {"obligation": self.obligation, "status": self.status, "detail": self.detail}


@dataclass
class ComplianceReport:
    port: str
    effective: frozenset[str]
    untagged: bool
    findings: list[Finding] = field(default_factory=list)

    @property
    def compliant(self) -> bool:
        return not self.untagged and all(f.status != "unmet" for f in self.findings)

    @property
    def violations(self) -> list[str]:
        out = [f"{f.obligation} unmet" for f in self.findings if f.status == "unmet"]
        return (["UNTAGGED"] if self.untagged else []) + out

    def to_dict(self) -> dict:
        return {
            "port": self.port,
            "effective": sorted(self.effective),
            "untagged": self.untagged,
            "compliant": self.compliant,
            "findings": [f.to_dict() for f in self.findings],
        }

    def table(self) -> str:
        rows = [("obligation", "status", "detail")]
        if self.untagged:
            rows.append(("-", "UNTAGGED", "no declared or inherited labels and not marked public"))
        rows += [(f.obligation, f.status, f.detail) for f in self.findings]
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = [f"port {self.port}  effective={{{', '.join(sorted(self.effective))}}}"]
        lines += ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
        return "\n".join(lines)


class RowStore(Protocol):
    def read_rows(self, ref: str, port: OutputPort) -> tuple[list[str], list[list[str]]] | None: ...
    def write_rows(self, ref: str, port: OutputPort, header: list[str], rows: list[list[str]]) -> None: ...
    def read_copy(self, address: str) -> tuple[list[str], list[list[str]]] | None: ...
    def write_copy(self, address: str, header: list[str], rows: list[list[str]]) -> None: ...


class Classification:
    """Mutable classification book: labels, local tags and the override queue."""

    def __init__(self) -> None:
        self.labels = LabelRegistry()
        self.declared: dict[str, frozenset[str]] = {}
        self.overrides: dict[str, OverrideRequest] = {}
        self.states: dict[str, ClassificationState] = {}

    def refresh(self, mesh: MeshGraph) -> dict[str, ClassificationState]:
        self.states = propagate(mesh, self.declared, self.overrides.values())
        return self.states

    def state(self, port: str) -> ClassificationState:
        try:
            return self.states[port]
        except KeyError:
            raise NotFoundError(f"no output port {port}") from None

    def effective(self) -> dict[str, frozenset[str]]:
        return {ref: st.effective for ref, st in self.states.items()}

    def define_level(self, name: str, obligations: Iterable[Obligation | str] = (), description: str = "") -> SensitivityLabel:
        return self.labels.define(name, obligations, description)

    def tag_port(self, mesh: MeshGraph, port: str, labels: Iterable[str]) -> ClassificationState:
        mesh.output_port(port)
        labels = frozenset(labels)
        self.labels.require(labels)
        self.declared[port] = labels
        self.refresh(mesh)
        return self.states[port]

    def forget_product(self, product_id: str) -> None:
        prefix = product_id + ":"
        self.declared = {k: v for k, v in self.declared.items() if not k.startswith(prefix)}
        self.overrides = {k: v for k, v in self.overrides.items() if not v.port.startswith(prefix)}

    def is_auto_approvable(self, port: str, labels: frozenset[str]) -> bool:
        st = self.state(port)
        base = st.declared | st.inherited
        return labels >= base and self.labels.obligations(labels) >= self.labels.obligations(base)

    def request_override(
        self, port: str, labels: Iterable[str], justification: str, request_id: str, now: float
    ) -> OverrideRequest:
        labels = frozenset(labels)
        self.state(port)
        self.labels.require(labels)
        if any(o.port == port and o.status is OverrideStatus.PENDING for o in self.overrides.values()):
            raise OverrideStateError(f"port {port} already has a pending override")
        if request_id in self.overrides:
            raise DuplicateError(f"override id {request_id!r} already used")
        status = OverrideStatus.AUTO_APPROVED if self.is_auto_approvable(port, labels) else OverrideStatus.PENDING
        req = OverrideRequest(request_id, port, labels, justification, status, now)
        self.overrides[request_id] = req
        if status is OverrideStatus.AUTO_APPROVED:
            self._supersede(req)
        return req

    def next_override_id(self) -> str:
        return f"ovr-{secrets.token_hex(6)}"

    def review_override(self, request_id: str, approve: bool, reviewer: str, now: float) -> OverrideRequest:
        req = self.overrides.get(request_id)
        if req is None:
            raise NotFoundError(f"no override {request_id!r}")
        if req.status is not OverrideStatus.PENDING:
            raise OverrideStateError(f"override {request_id} is {req.status.value}, not pending")
        req.status = OverrideStatus.APPROVED if approve else OverrideStatus.REJECTED
        req.reviewer = reviewer
        req.reviewed_at = now
        if approve:
            self._supersede(req)
        return req

    def _supersede(self, newest: OverrideRequest) -> None:
        for other in self.overrides.values():
            if other is not newest and other.port == newest.port and other.status in ACTIVE:
                other.status = OverrideStatus.SUPERSEDED

    def check_obligations(self, mesh: MeshGraph, port: str) -> ComplianceReport:
        out = mesh.output_port(port)
        st = self.state(port)
        report = ComplianceReport(port, st.effective, st.untagged)
        for ob in sorted(self.labels.obligations(st.effective), key=lambda o: o.value):
            if ob is Obligation.ENCRYPT_AT_REST:
                ok = out.encryption_enabled
                detail = "encryption enabled" if ok else "port stores data unencrypted"
            elif ob is Obligation.SUBJECT_TRACEABILITY:
                col = out.subject_column
                if out.interface_type is InterfaceType.BLOB:
                    ok, detail = False, "blob stores are not row-addressable"
                elif col is None:
                    ok, detail = False, "schema declares no subject reference column"
                else:
                    ok, detail = True, f"subject reference column {col.name!r}"
            else:
                report.findings.append(Finding(ob.value, "informational", "enforced by access policies"))
                continue
            report.findings.append(Finding(ob.value, "met" if ok else "unmet", detail))
        return report

    def traceable_ports(self, mesh: MeshGraph) -> list[str]:
        bearing = self.labels.bearing(Obligation.SUBJECT_TRACEABILITY)
        return [ref for ref, st in sorted(self.states.items()) if st.effective & bearing]

    def forget_subject(self, mesh: MeshGraph, store: RowStore, subject_id: str) -> list[dict]:
        """Remove every row referencing ``subject_id`` from traceable stores.

        All stores are checked before anything is deleted, so a violation
        leaves the data untouched.
        """
        if not subject_id:
            raise ValueError("subject id must be non-empty")
        plan: list[tuple[str, str, OutputPort | None, str | None, str]] = []
        problems = []
        for ref in self.traceable_ports(mesh):
            port = mesh.output_port(ref)
            col = port.subject_column
            if port.interface_type is InterfaceType.BLOB or col is None:
                problems.append(f"{ref} carries subject_traceability but has no subject reference column")
                continue
            plan.append((ref, ref, port, None, col.name))
            for pid in sorted(mesh.products):
                for ip in mesh.products[pid].input_ports:
                    if not (isinstance(ip.target, MeshPortRef) and str(ip.target) == ref):
                        continue
                    if ip.consumption_style is not ConsumptionStyle.BY_COPY:
                        continue
                    if ip.materialization is None:
                        problems.append(f"{pid}:{ip.id} copies {ref} without a materialization address")
                        continue
                    plan.append((f"{pid}:{ip.id}", ref, None, ip.materialization, col.name))
        if problems:
            raise ObligationViolation("; ".join(problems))

        # verify every store can be scanned before mutating any of them
        loaded = []
        for name, source, port, copy_address, column in plan:
            table = store.read_rows(source, port) if port is not None else store.read_copy(copy_address)
            if table is None:
                continue
            header, rows = table
            if column not in header:
                raise ObligationViolation(f"store for {name} lacks subject column {column!r}")
            loaded.append((name, source, port, copy_address, column, header, rows))

        report = []
        for name, source, port, copy_address, column, header, rows in loaded:
            idx = header.index(column)
            kept = [r for r in rows if r[idx] != subject_id]
            removed = len(rows) - len(kept)
            if not removed:
                continue
            if port is not None:
                store.write_rows(source, port, header, kept)
            else:
                store.write_copy(copy_address, header, kept)
            report.append(
                {"store": name, "address": port.address if port else copy_address, "rows_removed": removed}
            )
        return report

