"""Policy checks shared by every enforcement mechanism.

A port-level request is decided column by column over the port's schema, so
that the gateway (whole schema), token issuance and key handout can never
disagree. Ports without a schema are decided once at port level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from ..classification import Classification
from ..errors import UntaggedPortError
from ..mesh import MeshGraph
from ..policy import AccessRequest, Action, Decision, Policy, Resource, Subject, evaluate


@dataclass(frozen=True)
class PortDecision:
    port: str
    action: Action
    decisions: tuple[tuple[str | None, Decision], ...]

    @property
    def allowed(self) -> bool:
        return bool(self.decisions) and all(d.allowed for _, d in self.decisions)

    @property
    def denied_columns(self) -> list[str]:
        return [c for c, d in self.decisions if not d.allowed and c is not None]

    @property
    def matched_rules(self) -> list:
        return [list(d.matched_rule) if d.matched_rule else None for _, d in self.decisions]

    def summary(self) -> dict:
        return {
            "port": self.port,
            "action": self.action.value,
            "effect": "allow" if self.allowed else "deny",
            "columns": {
                (c or "*"): {"effect": d.effect.value,
                             "matched_rule": list(d.matched_rule) if d.matched_rule else None,
                             "scope": d.scope_consulted}
                for c, d in self.decisions
            },
        }


def refuse_untagged(classification: Classification, port: str) -> None:
    if classification.state(port).untagged:
        raise UntaggedPortError(port)


def authorize(
    subject: Subject,
    action: Action | str,
    port: str,
    mesh: MeshGraph,
    classification: Classification,
    policies: Iterable[Policy],
    columns: Iterable[str] | None = None,
) -> PortDecision:
    """Evaluate one request per column (all schema columns when ``columns`` is None)."""
    action = Action(action)
    out = mesh.output_port(port)
    refuse_untagged(classification, port)
    product, port_id = port.split(":")
    cols = [c.name for c in out.schema] if columns is None else list(dict.fromkeys(columns))
    effective = classification.effective()
    policies = list(policies)
    targets: list[str | None] = cols or [None]
    decisions = tuple(
        (col, evaluate(AccessRequest(subject, action, Resource(product, port_id, col)), policies, effective))
        for col in targets
    )
    return PortDecision(port, action, decisions)
