"""Policy evaluation.

Scopes are consulted from most to least specific: product, then domain, then
global. The first scope holding at least one matching rule decides, and within
it a matching deny beats any matching allow. With no match anywhere the
request is denied.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping

from ..errors import NotFoundError
from .lang import Action, Atom, Dnf, Effect, Policy, Rule, ScopeKind

TIERS = (ScopeKind.PRODUCT, ScopeKind.DOMAIN, ScopeKind.GLOBAL)


@dataclass(frozen=True)
class Subject:
    user: str
    roles: frozenset[str] = frozenset()
    domain: str | None = None
    attrs: tuple[tuple[str, bool], ...] = ()

    @classmethod
    def of(cls, user: str, roles: Iterable[str] = (), domain: str | None = None,
           attrs: Mapping[str, bool] | None = None) -> "Subject":
        return cls(user, frozenset(roles), domain, tuple(sorted((attrs or {}).items())))

    @classmethod
    def from_dict(cls, d: Mapping) -> "Subject":
        return cls.of(d["user"], d.get("roles", ()), d.get("domain"), d.get("attrs"))

    def to_dict(self) -> dict:
        return {"user": self.user, "roles": sorted(self.roles), "domain": self.domain,
                "attrs": dict(self.attrs)}

    def attr(self, key: str) -> bool:
        return dict(self.attrs).get(key) is True


@dataclass(frozen=True)
class Resource:
    product: str
    port: str
    column: str | None = None

    @property
    def domain(self) -> str:
        return self.product.split("/", 1)[0]

    @property
    def port_ref(self) -> str:
        return f"{self.product}:{self.port}"

    @classmethod
    def parse(cls, text: str) -> "Resource":
        parts = text.split(":")
        if len(parts) not in (2, 3) or "/" not in parts[0] or not all(parts):
            raise ValueError(f"malformed resource {text!r}")
        return cls(*parts)

    def __str__(self) -> str:
        return self.port_ref + (f":{self.column}" if self.column else "")


@dataclass(frozen=True)
class AccessRequest:
    subject: Subject
    action: Action
    resource: Resource
    # effective labels of the resource; looked up from classifications when None
    labels: frozenset[str] | None = None


@dataclass(frozen=True)
class TraceEntry:
    policy: str
    scope: str
    index: int
    rule: str
    effect: Effect
    matched: bool
    why: str
    shadowed: bool = False

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "scope": self.scope,
            "index": self.index,
            "rule": self.rule,
            "effect": self.effect.value,
            "matched": self.matched,
            "why": self.why,
            "shadowed": self.shadowed,
        }


@dataclass(frozen=True)
class Decision:
    effect: Effect
    matched_rule: tuple[str, int] | None
    scope_consulted: str  # product | domain | global | default
    trace: tuple[TraceEntry, ...] = field(default=())

    @property
    def allowed(self) -> bool:
        return self.effect is Effect.ALLOW

    @property
    def default_deny(self) -> bool:
        return self.matched_rule is None

    def to_dict(self) -> dict:
        return {
            "effect": self.effect.value,
            "matched_rule": list(self.matched_rule) if self.matched_rule else None,
            "scope_consulted": self.scope_consulted,
            "trace": [t.to_dict() for t in self.trace],
        }


@lru_cache(maxsize=4096)
def _glob_re(pattern: str) -> re.Pattern:
    return re.compile("^" + ".*".join(re.escape(p) for p in pattern.split("*")) + "$", re.S)


def glob_match(pattern: str, value: str) -> bool:
    """``*`` matches any run of characters; everything else is literal."""
    return _glob_re(pattern).match(value) is not None


def _atom_holds(atom: Atom, subject: Subject | None, labels: frozenset[str]) -> bool:
    if atom.kind == "role":
        held = atom.value in subject.roles
    elif atom.kind == "user":
        held = subject.user == atom.value
    elif atom.kind == "domain":
        held = subject.domain == atom.value
    elif atom.kind == "attr":
        held = subject.attr(atom.value)
    else:
        held = atom.value in labels
    return held != atom.negated


def _dnf_holds(expr: Dnf, subject, labels) -> tuple[bool, list[Atom]]:
    """Return truth plus the failing atoms of every conjunction when false."""
    failing = []
    for conj in expr:
        bad = [a for a in conj if not _atom_holds(a, subject, labels)]
        if not bad:
            return True, []
        failing.extend(bad)
    return False, failing


def resource_matches(rule: Rule, res: Resource) -> bool:
    pat = rule.resource
    if not glob_match(pat.product, res.product):
        return False
    if pat.port is not None and not glob_match(pat.port, res.port):
        return False
    if pat.column is None:
        return True
    if res.column is None:
        # a column-specific rule only speaks for whole-port access through '*'
        return pat.column == "*"
    return glob_match(pat.column, res.column)


def match_rule(rule: Rule, req: AccessRequest, labels: frozenset[str], detailed: bool = False) -> tuple[bool, str]:
    """Decide whether one rule applies, with the reason if it does not."""
    reasons = []
    if rule.action is not req.action:
        reasons.append(f"action {rule.action.value} does not cover {req.action.value}")
    if not resource_matches(rule, req.resource):
        reasons.append(f"resource {rule.resource} does not match {req.resource}")
    if rule.subject is not None:
        ok, failing = _dnf_holds(rule.subject, req.subject, labels)
        if not ok:
            reasons.append("subject: " + ", ".join(f"{a} is false" for a in failing))
    if rule.condition is not None:
        ok, failing = _dnf_holds(rule.condition, req.subject, labels)
        if not ok:
            reasons.append("condition: " + ", ".join(f"{a} is false" for a in failing))
    if not reasons:
        return True, "matched"
    return False, "; ".join(reasons) if detailed else reasons[0]


def applicable(policy: Policy, tier: ScopeKind, res: Resource) -> bool:
    scope = policy.scope
    if scope.kind is not tier:
        return False
    if tier is ScopeKind.PRODUCT:
        return scope.name == res.product
    if tier is ScopeKind.DOMAIN:
        return scope.name == res.domain
    return True


def _labels_for(req: AccessRequest, classifications: Mapping[str, Iterable[str]] | None) -> frozenset[str]:
    if classifications is not None:
        if req.resource.port_ref not in classifications:
            raise NotFoundError(f"resource {req.resource} does not resolve to a known output port")
        if req.labels is None:
            return frozenset(classifications[req.resource.port_ref])
    return frozenset(req.labels or ())


def _decide(req: AccessRequest, policies: Iterable[Policy], classifications, detailed: bool) -> Decision:
    labels = _labels_for(req, classifications)
    ordered = sorted(policies, key=lambda p: p.name)
    trace: list[TraceEntry] = []
    decided: Decision | None = None
    for tier in TIERS:
        matches: list[tuple[Policy, int, Rule]] = []
        for policy in ordered:
            if not applicable(policy, tier, req.resource):
                continue
            for idx, rule in enumerate(policy.rules):
                ok, why = match_rule(rule, req, labels, detailed)
                if decided is not None and ok:
                    why = f"matched but shadowed by {decided.scope_consulted} scope"
                trace.append(TraceEntry(policy.name, tier.value, idx, str(rule), rule.effect, ok, why,
                                        shadowed=decided is not None))
                if ok:
                    matches.append((policy, idx, rule))
        if decided is None and matches:
            denies = [m for m in matches if m[2].effect is Effect.DENY]
            winner = denies[0] if denies else matches[0]
            decided = Decision(winner[2].effect, (winner[0].name, winner[1]), tier.value)
            if not detailed:
                break
    if decided is None:
        return Decision(Effect.DENY, None, "default", tuple(trace))
    return Decision(decided.effect, decided.matched_rule, decided.scope_consulted, tuple(trace))


def evaluate(req: AccessRequest, policies: Iterable[Policy],
             classifications: Mapping[str, Iterable[str]] | None = None) -> Decision:
    """Decide a request; the trace covers every rule in the scopes consulted."""
    return _decide(req, policies, classifications, detailed=False)


def explain(req: AccessRequest, policies: Iterable[Policy],
            classifications: Mapping[str, Iterable[str]] | None = None) -> Decision:
    """Like :func:`evaluate`, but traces every applicable rule with per-clause reasons.

    Rules in scopes below the deciding one are listed with ``shadowed=True``.
    """
    return _decide(req, policies, classifications, detailed=True)
